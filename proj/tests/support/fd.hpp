#pragma once

#include "comma/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace fd {

using Build = std::function<comma::Var(comma::Tape&, const std::vector<comma::Var>&)>;

inline double project(const comma::Tensor& out, const comma::Tensor& direction) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * direction[i];
    return s;
}

/// Worst tensor-level relative error between tape adjoints and central
/// differences of <build(inputs), direction> with respect to every input.
inline double max_rel_error(std::vector<comma::Tensor> inputs, const Build& build, std::mt19937_64& rng,
                            double h = 1e-5) {
    comma::Tape probe;
    std::vector<comma::Var> pv;
    for (const auto& t : inputs) pv.push_back(probe.input(t));
    const comma::Var pout = build(probe, pv);
    comma::Tensor direction(probe.value(pout).shape());
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : direction.data()) v = g(rng);

    const std::pair<comma::Var, comma::Tensor> seed{pout, direction};
    probe.backward(std::span(&seed, 1));

    auto evaluate = [&] {
        comma::Tape tape;
        std::vector<comma::Var> vars;
        for (const auto& t : inputs) vars.push_back(tape.input(t));
        return project(tape.value(build(tape, vars)), direction);
    };

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const comma::Tensor analytic = probe.adjoint(pv[k]);
        comma::Tensor numeric(analytic.shape());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double up = evaluate();
            inputs[k][i] = saved - h;
            const double down = evaluate();
            inputs[k][i] = saved;
            numeric[i] = (up - down) / (2 * h);
        }
        const double ref = std::max(comma::max_abs(analytic), comma::max_abs(numeric));
        if (ref > 0.0) worst = std::max(worst, comma::max_abs_diff(analytic, numeric) / ref);
    }
    return worst;
}

}  // namespace fd
