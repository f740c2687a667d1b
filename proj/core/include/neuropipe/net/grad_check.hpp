#pragma once

#include <functional>

#include "neuropipe/net/graph.hpp"
#include "neuropipe/net/loss.hpp"

// Finite-difference verification of every backward pass, run in float64.
// Used by the test suites; ships with the library so any new layer can be
// checked the same way.

namespace neuropipe::net {

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst;  // coordinate where the worst error occurred
};

using ScalarLoss = std::function<LossResult<double>(const TensorT<double>&)>;

/// Loss functional y -> sum(w_i * y_i) with fixed pseudo-random weights, so
/// every output coordinate influences the scalar being differentiated.
inline ScalarLoss linear_probe_loss(uint64_t seed) {
    return [seed](const TensorT<double>& y) {
        Rng rng{seed};
        LossResult<double> out{0.0, TensorT<double>(y.shape())};
        for (int64_t i = 0; i < y.size(); ++i) {
            double w = rng.uniform(-1.0, 1.0);
            out.value += w * y[i];
            out.grad[i] = w;
        }
        return out;
    };
}

/// Central differences over every trainable parameter coordinate and every
/// input coordinate. BatchNorm running statistics are frozen during the
/// evaluations so repeated forwards see identical state.
inline GradCheckReport grad_check(const Graph& graph, const ParamStore<double>& params0,
                                  const TensorT<double>& x, const ScalarLoss& loss_fn,
                                  double h = 1e-5, bool training = true,
                                  uint64_t dropout_seed = 0) {
    auto eval = [&](const ParamStore<double>& p, const TensorT<double>& input) {
        ParamStore<double> copy = p;
        Executor<double> exec(graph, copy);
        TensorT<double> y = exec.forward(input, training, dropout_seed, nullptr, false);
        return loss_fn(y).value;
    };

    // Analytic gradients.
    ParamStore<double> params = params0;
    Executor<double> exec(graph, params);
    ForwardTrace<double> trace;
    TensorT<double> y = exec.forward(x, training, dropout_seed, &trace, false);
    LossResult<double> loss = loss_fn(y);
    ParamStore<double> grads;
    TensorT<double> input_grad = exec.backward(trace, loss.grad, grads);

    GradCheckReport report;
    auto consider = [&](double analytic, double numeric, const std::string& where) {
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        double err = std::abs(analytic - numeric) / denom;
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = where;
        }
    };

    for (const std::string& name : params0.trainable) {
        const TensorT<double>& base = params0.at(name);
        auto git = grads.values.find(name);
        for (int64_t i = 0; i < base.size(); ++i) {
            ParamStore<double> plus = params0;
            plus.at(name)[i] += h;
            ParamStore<double> minus = params0;
            minus.at(name)[i] -= h;
            double numeric = (eval(plus, x) - eval(minus, x)) / (2 * h);
            double analytic = git == grads.values.end() ? 0.0 : git->second[i];
            consider(analytic, numeric, name + "[" + std::to_string(i) + "]");
        }
    }
    for (int64_t i = 0; i < x.size(); ++i) {
        TensorT<double> plus = x;
        plus[i] += h;
        TensorT<double> minus = x;
        minus[i] -= h;
        double numeric = (eval(params0, plus) - eval(params0, minus)) / (2 * h);
        consider(input_grad[i], numeric, "input[" + std::to_string(i) + "]");
    }
    return report;
}

}  // namespace neuropipe::net
