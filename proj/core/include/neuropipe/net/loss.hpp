#pragma once

#include <cmath>

#include "neuropipe/tensor.hpp"

namespace neuropipe::net {

template <typename T>
struct LossResult {
    T value;
    TensorT<T> grad;  // dLoss/dPred
};

/// Soft dice: 1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth), sums
/// per sample over all voxels and channels, averaged over the batch.
template <typename T>
LossResult<T> soft_dice_loss(const TensorT<T>& pred, const TensorT<T>& target, T smooth = T(1)) {
    require(pred.shape() == target.shape(), ErrorCode::ShapeMismatch,
            "soft dice shapes " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    int64_t batch = pred.shape()[0];
    int64_t per_sample = pred.size() / batch;

    LossResult<T> result{T(0), TensorT<T>(pred.shape())};
    for (int64_t n = 0; n < batch; ++n) {
        const T* p = pred.data() + n * per_sample;
        const T* t = target.data() + n * per_sample;
        double intersection = 0, p_sum = 0, t_sum = 0;
        for (int64_t i = 0; i < per_sample; ++i) {
            intersection += static_cast<double>(p[i]) * t[i];
            p_sum += p[i];
            t_sum += t[i];
        }
        double numer = 2 * intersection + static_cast<double>(smooth);
        double denom = p_sum + t_sum + static_cast<double>(smooth);
        result.value += static_cast<T>(1.0 - numer / denom);

        T* g = result.grad.data() + n * per_sample;
        double inv_batch = 1.0 / static_cast<double>(batch);
        for (int64_t i = 0; i < per_sample; ++i) {
            // d/dp_i [ -numer/denom ] = -(2*t_i*denom - numer) / denom^2
            g[i] = static_cast<T>(-(2.0 * t[i] * denom - numer) / (denom * denom) * inv_batch);
        }
    }
    result.value /= static_cast<T>(batch);
    return result;
}

/// Mean binary cross-entropy over every element; predictions are clamped to
/// [eps, 1-eps] and the gradient is zero in the clamped region.
template <typename T>
LossResult<T> binary_crossentropy_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    require(pred.shape() == target.shape(), ErrorCode::ShapeMismatch,
            "crossentropy shapes " + shape_str(pred.shape()) + " vs " +
                shape_str(target.shape()));
    const double eps = 1e-7;
    int64_t count = pred.size();

    LossResult<T> result{T(0), TensorT<T>(pred.shape())};
    double total = 0;
    for (int64_t i = 0; i < count; ++i) {
        double p = std::clamp(static_cast<double>(pred[i]), eps, 1.0 - eps);
        double t = target[i];
        total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
        bool clamped = static_cast<double>(pred[i]) < eps || static_cast<double>(pred[i]) > 1.0 - eps;
        result.grad[i] = clamped ? T(0)
                                 : static_cast<T>((p - t) / (p * (1.0 - p)) /
                                                  static_cast<double>(count));
    }
    result.value = static_cast<T>(total / static_cast<double>(count));
    return result;
}

/// Dice coefficient (not the loss) of two binary masks; handy for reporting.
template <typename T>
double dice_coefficient(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "dice shapes differ");
    double inter = 0, total = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        inter += static_cast<double>(a[i]) * b[i];
        total += static_cast<double>(a[i]) + b[i];
    }
    return total == 0 ? 1.0 : 2.0 * inter / total;
}

}  // namespace neuropipe::net
