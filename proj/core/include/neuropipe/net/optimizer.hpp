#pragma once

#include <cmath>

#include "neuropipe/net/graph.hpp"

namespace neuropipe::net {

enum class OptimizerKind { Adam, Sgd };

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One optimizer step over the trainable parameters. Adam moments live in
/// `moments` under "<param>.m" / "<param>.v" and are created on first use;
/// `step` is the 1-based step count used for bias correction.
inline void optimizer_step(ParamStore<float>& params, const ParamStore<float>& grads,
                           OptimizerKind kind, double lr, int64_t step,
                           std::map<std::string, Tensor>& moments,
                           const AdamHyper& hyper = {}) {
    for (const std::string& name : params.trainable) {
        auto git = grads.values.find(name);
        if (git == grads.values.end()) {
            continue;  // parameter unused by this loss path
        }
        Tensor& value = params.at(name);
        const Tensor& grad = git->second;

        if (kind == OptimizerKind::Sgd) {
            for (int64_t i = 0; i < value.size(); ++i) {
                value[i] -= static_cast<float>(lr * grad[i]);
            }
            continue;
        }

        Tensor& m = moments.try_emplace(name + ".m", Tensor(value.shape())).first->second;
        Tensor& v = moments.try_emplace(name + ".v", Tensor(value.shape())).first->second;
        double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
        for (int64_t i = 0; i < value.size(); ++i) {
            double g = grad[i];
            double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
            double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double m_hat = mi / bc1;
            double v_hat = vi / bc2;
            value[i] -= static_cast<float>(lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
        }
    }
}

}  // namespace neuropipe::net
