#pragma once

#include <cmath>

#include "neuropipe/rng.hpp"
#include "neuropipe/tensor.hpp"

// Low-level forward/backward kernels. Tensors are [N, spatial..., C] with C
// contiguous. Everything is templated so the float32 production path and the
// float64 gradient-checking path share one implementation. Summation order
// is fixed (plain nested loops), which keeps runs bit-reproducible.

namespace neuropipe::net {

enum class Padding { Same, Valid };

inline Shape spatial_of(const Shape& x_shape) {
    return Shape(x_shape.begin() + 1, x_shape.end() - 1);
}

// Output extent and leading pad for one axis.
inline int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, Padding padding) {
    if (padding == Padding::Same) {
        return (in + stride - 1) / stride;
    }
    return (in - kernel) / stride + 1;
}

inline int64_t conv_pad_before(int64_t in, int64_t kernel, int64_t stride, Padding padding) {
    if (padding == Padding::Valid) {
        return 0;
    }
    int64_t out = conv_out_extent(in, kernel, stride, padding);
    int64_t total = std::max<int64_t>(0, (out - 1) * stride + kernel - in);
    return total / 2;
}

// --- convolution -------------------------------------------------------------

/// x [N,S...,Ci] * w [K...,Ci,Co] + b [Co] -> y [N,S'...,Co].
template <typename T>
TensorT<T> conv_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                        const Shape& stride, Padding padding) {
    int rank = x.rank() - 2;
    Shape in_spatial = spatial_of(x.shape());
    Shape kernel(w.shape().begin(), w.shape().end() - 2);
    int64_t ci = w.shape()[w.shape().size() - 2];
    int64_t co = w.shape().back();
    require(static_cast<int>(kernel.size()) == rank, ErrorCode::ShapeMismatch,
            "kernel rank vs input rank");
    require(x.shape().back() == ci, ErrorCode::ShapeMismatch,
            "conv input channels " + std::to_string(x.shape().back()) + " vs weight " +
                std::to_string(ci));

    int64_t batch = x.shape()[0];
    Shape out_spatial(static_cast<size_t>(rank));
    Shape pad(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        out_spatial[a] = conv_out_extent(in_spatial[a], kernel[a], stride[a], padding);
        pad[a] = conv_pad_before(in_spatial[a], kernel[a], stride[a], padding);
        require(out_spatial[a] >= 1, ErrorCode::ShapeMismatch, "conv output extent < 1");
    }

    Shape y_shape;
    y_shape.push_back(batch);
    y_shape.insert(y_shape.end(), out_spatial.begin(), out_spatial.end());
    y_shape.push_back(co);
    TensorT<T> y(y_shape);

    Shape in_strides = row_major_strides(in_spatial);
    Shape out_strides = row_major_strides(out_spatial);
    Shape k_strides = row_major_strides(kernel);
    int64_t in_voxels = numel(in_spatial);
    int64_t out_voxels = numel(out_spatial);
    int64_t kernel_voxels = numel(kernel);

    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    T* yp = y.data();

    std::vector<int64_t> out_coord(static_cast<size_t>(rank));
    std::vector<int64_t> k_coord(static_cast<size_t>(rank));
    std::vector<T> acc(static_cast<size_t>(co));

    for (int64_t n = 0; n < batch; ++n) {
        const T* xn = xp + n * in_voxels * ci;
        T* yn = yp + n * out_voxels * co;
        for (int64_t ov = 0; ov < out_voxels; ++ov) {
            int64_t rem = ov;
            for (int a = 0; a < rank; ++a) {
                out_coord[a] = rem / out_strides[a];
                rem %= out_strides[a];
            }
            for (int64_t c = 0; c < co; ++c) {
                acc[c] = bp[c];
            }
            for (int64_t kv = 0; kv < kernel_voxels; ++kv) {
                int64_t in_voxel = 0;
                bool inside = true;
                int64_t krem = kv;
                for (int a = 0; a < rank; ++a) {
                    k_coord[a] = krem / k_strides[a];
                    krem %= k_strides[a];
                    int64_t pos = out_coord[a] * stride[a] + k_coord[a] - pad[a];
                    if (pos < 0 || pos >= in_spatial[a]) {
                        inside = false;
                        break;
                    }
                    in_voxel += pos * in_strides[a];
                }
                if (!inside) {
                    continue;
                }
                const T* wk = wp + kv * ci * co;
                const T* xv = xn + in_voxel * ci;
                for (int64_t i = 0; i < ci; ++i) {
                    T xi = xv[i];
                    const T* wrow = wk + i * co;
                    for (int64_t c = 0; c < co; ++c) {
                        acc[c] += xi * wrow[c];
                    }
                }
            }
            T* yv = yn + ov * co;
            for (int64_t c = 0; c < co; ++c) {
                yv[c] = acc[c];
            }
        }
    }
    return y;
}

template <typename T>
void conv_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                   const Shape& stride, Padding padding, TensorT<T>& dx, TensorT<T>& dw,
                   TensorT<T>& db) {
    int rank = x.rank() - 2;
    Shape in_spatial = spatial_of(x.shape());
    Shape out_spatial = spatial_of(dy.shape());
    Shape kernel(w.shape().begin(), w.shape().end() - 2);
    int64_t ci = w.shape()[w.shape().size() - 2];
    int64_t co = w.shape().back();
    int64_t batch = x.shape()[0];

    Shape pad(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        pad[a] = conv_pad_before(in_spatial[a], kernel[a], stride[a], padding);
    }

    dx = TensorT<T>(x.shape());
    dw = TensorT<T>(w.shape());
    db = TensorT<T>(Shape{co});

    Shape in_strides = row_major_strides(in_spatial);
    Shape out_strides = row_major_strides(out_spatial);
    Shape k_strides = row_major_strides(kernel);
    int64_t in_voxels = numel(in_spatial);
    int64_t out_voxels = numel(out_spatial);
    int64_t kernel_voxels = numel(kernel);

    const T* xp = x.data();
    const T* wp = w.data();
    const T* dyp = dy.data();
    T* dxp = dx.data();
    T* dwp = dw.data();
    T* dbp = db.data();

    std::vector<int64_t> out_coord(static_cast<size_t>(rank));
    std::vector<int64_t> k_coord(static_cast<size_t>(rank));

    for (int64_t n = 0; n < batch; ++n) {
        const T* xn = xp + n * in_voxels * ci;
        const T* dyn = dyp + n * out_voxels * co;
        T* dxn = dxp + n * in_voxels * ci;
        for (int64_t ov = 0; ov < out_voxels; ++ov) {
            int64_t rem = ov;
            for (int a = 0; a < rank; ++a) {
                out_coord[a] = rem / out_strides[a];
                rem %= out_strides[a];
            }
            const T* dyv = dyn + ov * co;
            for (int64_t c = 0; c < co; ++c) {
                dbp[c] += dyv[c];
            }
            for (int64_t kv = 0; kv < kernel_voxels; ++kv) {
                int64_t in_voxel = 0;
                bool inside = true;
                int64_t krem = kv;
                for (int a = 0; a < rank; ++a) {
                    k_coord[a] = krem / k_strides[a];
                    krem %= k_strides[a];
                    int64_t pos = out_coord[a] * stride[a] + k_coord[a] - pad[a];
                    if (pos < 0 || pos >= in_spatial[a]) {
                        inside = false;
                        break;
                    }
                    in_voxel += pos * in_strides[a];
                }
                if (!inside) {
                    continue;
                }
                const T* xv = xn + in_voxel * ci;
                T* dxv = dxn + in_voxel * ci;
                T* dwk = dwp + kv * ci * co;
                const T* wk = wp + kv * ci * co;
                for (int64_t i = 0; i < ci; ++i) {
                    T xi = xv[i];
                    T dxi = 0;
                    T* dwrow = dwk + i * co;
                    const T* wrow = wk + i * co;
                    for (int64_t c = 0; c < co; ++c) {
                        T g = dyv[c];
                        dwrow[c] += xi * g;
                        dxi += wrow[c] * g;
                    }
                    dxv[i] += dxi;
                }
            }
        }
    }
}

// --- max pooling ---------------------------------------------------------------

template <typename T>
struct PoolResult {
    TensorT<T> y;
    std::vector<int64_t> argmax;  // flat input voxel per output element
};

template <typename T>
PoolResult<T> pool_max_forward(const TensorT<T>& x, const Shape& window, const Shape& stride,
                               Padding padding) {
    int rank = x.rank() - 2;
    Shape in_spatial = spatial_of(x.shape());
    int64_t channels = x.shape().back();
    int64_t batch = x.shape()[0];

    Shape out_spatial(static_cast<size_t>(rank));
    Shape pad(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        out_spatial[a] = conv_out_extent(in_spatial[a], window[a], stride[a], padding);
        pad[a] = conv_pad_before(in_spatial[a], window[a], stride[a], padding);
    }

    Shape y_shape;
    y_shape.push_back(batch);
    y_shape.insert(y_shape.end(), out_spatial.begin(), out_spatial.end());
    y_shape.push_back(channels);

    PoolResult<T> result{TensorT<T>(y_shape), {}};
    result.argmax.assign(static_cast<size_t>(result.y.size()), -1);

    Shape in_strides = row_major_strides(in_spatial);
    Shape out_strides = row_major_strides(out_spatial);
    Shape w_strides = row_major_strides(window);
    int64_t in_voxels = numel(in_spatial);
    int64_t out_voxels = numel(out_spatial);
    int64_t window_voxels = numel(window);

    std::vector<int64_t> out_coord(static_cast<size_t>(rank));
    std::vector<int64_t> w_coord(static_cast<size_t>(rank));

    const T* xp = x.data();
    T* yp = result.y.data();
    for (int64_t n = 0; n < batch; ++n) {
        const T* xn = xp + n * in_voxels * channels;
        for (int64_t ov = 0; ov < out_voxels; ++ov) {
            int64_t rem = ov;
            for (int a = 0; a < rank; ++a) {
                out_coord[a] = rem / out_strides[a];
                rem %= out_strides[a];
            }
            for (int64_t c = 0; c < channels; ++c) {
                T best = T(0);
                int64_t best_idx = -1;
                for (int64_t wv = 0; wv < window_voxels; ++wv) {
                    int64_t in_voxel = 0;
                    bool inside = true;
                    int64_t wrem = wv;
                    for (int a = 0; a < rank; ++a) {
                        w_coord[a] = wrem / w_strides[a];
                        wrem %= w_strides[a];
                        int64_t pos = out_coord[a] * stride[a] + w_coord[a] - pad[a];
                        if (pos < 0 || pos >= in_spatial[a]) {
                            inside = false;
                            break;
                        }
                        in_voxel += pos * in_strides[a];
                    }
                    if (!inside) {
                        continue;
                    }
                    T v = xn[in_voxel * channels + c];
                    if (best_idx < 0 || v > best) {  // ties keep the first seen
                        best = v;
                        best_idx = in_voxel;
                    }
                }
                int64_t flat = (n * out_voxels + ov) * channels + c;
                yp[flat] = best_idx < 0 ? T(0) : best;
                result.argmax[static_cast<size_t>(flat)] =
                    best_idx < 0 ? -1 : (n * in_voxels + best_idx) * channels + c;
            }
        }
    }
    return result;
}

template <typename T>
TensorT<T> pool_max_backward(const Shape& x_shape, const std::vector<int64_t>& argmax,
                             const TensorT<T>& dy) {
    TensorT<T> dx(x_shape);
    for (int64_t i = 0; i < dy.size(); ++i) {
        int64_t src = argmax[static_cast<size_t>(i)];
        if (src >= 0) {
            dx[src] += dy[i];
        }
    }
    return dx;
}

// --- nearest-neighbor upsampling ------------------------------------------------

template <typename T>
TensorT<T> upsample_nn_forward(const TensorT<T>& x, const Shape& factor) {
    int rank = x.rank() - 2;
    Shape in_spatial = spatial_of(x.shape());
    int64_t channels = x.shape().back();
    int64_t batch = x.shape()[0];

    Shape out_spatial(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        out_spatial[a] = in_spatial[a] * factor[a];
    }
    Shape y_shape;
    y_shape.push_back(batch);
    y_shape.insert(y_shape.end(), out_spatial.begin(), out_spatial.end());
    y_shape.push_back(channels);
    TensorT<T> y(y_shape);

    Shape in_strides = row_major_strides(in_spatial);
    Shape out_strides = row_major_strides(out_spatial);
    int64_t in_voxels = numel(in_spatial);
    int64_t out_voxels = numel(out_spatial);

    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t ov = 0; ov < out_voxels; ++ov) {
            int64_t rem = ov;
            int64_t in_voxel = 0;
            for (int a = 0; a < rank; ++a) {
                int64_t coord = rem / out_strides[a];
                rem %= out_strides[a];
                in_voxel += (coord / factor[a]) * in_strides[a];
            }
            const T* src = x.data() + (n * in_voxels + in_voxel) * channels;
            T* dst = y.data() + (n * out_voxels + ov) * channels;
            for (int64_t c = 0; c < channels; ++c) {
                dst[c] = src[c];
            }
        }
    }
    return y;
}

template <typename T>
TensorT<T> upsample_nn_backward(const Shape& x_shape, const TensorT<T>& dy, const Shape& factor) {
    int rank = static_cast<int>(x_shape.size()) - 2;
    Shape in_spatial(x_shape.begin() + 1, x_shape.end() - 1);
    Shape out_spatial = spatial_of(dy.shape());
    int64_t channels = x_shape.back();
    int64_t batch = x_shape[0];

    TensorT<T> dx(x_shape);
    Shape in_strides = row_major_strides(in_spatial);
    Shape out_strides = row_major_strides(out_spatial);
    int64_t in_voxels = numel(in_spatial);
    int64_t out_voxels = numel(out_spatial);

    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t ov = 0; ov < out_voxels; ++ov) {
            int64_t rem = ov;
            int64_t in_voxel = 0;
            for (int a = 0; a < rank; ++a) {
                int64_t coord = rem / out_strides[a];
                rem %= out_strides[a];
                in_voxel += (coord / factor[a]) * in_strides[a];
            }
            const T* g = dy.data() + (n * out_voxels + ov) * channels;
            T* dst = dx.data() + (n * in_voxels + in_voxel) * channels;
            for (int64_t c = 0; c < channels; ++c) {
                dst[c] += g[c];
            }
        }
    }
    return dx;
}

// --- channel concat / add -------------------------------------------------------

template <typename T>
TensorT<T> concat_forward(const std::vector<const TensorT<T>*>& inputs) {
    require(!inputs.empty(), ErrorCode::InvalidArgument, "concat needs inputs");
    Shape base = inputs[0]->shape();
    int64_t channels = 0;
    for (const auto* t : inputs) {
        require(Shape(t->shape().begin(), t->shape().end() - 1) ==
                    Shape(base.begin(), base.end() - 1),
                ErrorCode::ShapeMismatch, "concat spatial shapes differ");
        channels += t->shape().back();
    }
    Shape y_shape(base.begin(), base.end() - 1);
    y_shape.push_back(channels);
    TensorT<T> y(y_shape);

    int64_t voxels = numel(Shape(base.begin(), base.end() - 1));
    int64_t offset = 0;
    for (const auto* t : inputs) {
        int64_t tc = t->shape().back();
        for (int64_t v = 0; v < voxels; ++v) {
            const T* src = t->data() + v * tc;
            T* dst = y.data() + v * channels + offset;
            for (int64_t c = 0; c < tc; ++c) {
                dst[c] = src[c];
            }
        }
        offset += tc;
    }
    return y;
}

template <typename T>
std::vector<TensorT<T>> concat_backward(const std::vector<Shape>& input_shapes,
                                        const TensorT<T>& dy) {
    int64_t channels = dy.shape().back();
    int64_t voxels = numel(Shape(dy.shape().begin(), dy.shape().end() - 1));
    std::vector<TensorT<T>> grads;
    int64_t offset = 0;
    for (const Shape& s : input_shapes) {
        TensorT<T> g(s);
        int64_t tc = s.back();
        for (int64_t v = 0; v < voxels; ++v) {
            const T* src = dy.data() + v * channels + offset;
            T* dst = g.data() + v * tc;
            for (int64_t c = 0; c < tc; ++c) {
                dst[c] = src[c];
            }
        }
        offset += tc;
        grads.push_back(std::move(g));
    }
    return grads;
}

// --- batch normalization --------------------------------------------------------

template <typename T>
struct BatchNormTrace {
    TensorT<T> x_hat;
    std::vector<T> inv_std;  // per channel
    std::vector<T> mean;
};

/// Training mode: batch statistics (population variance) + running update.
/// Frozen mode: running statistics, a plain per-channel affine map.
template <typename T>
TensorT<T> batch_norm_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, TensorT<T>& running_mean,
                              TensorT<T>& running_var, bool training, double momentum,
                              double eps, BatchNormTrace<T>* trace) {
    int64_t channels = x.shape().back();
    int64_t rows = x.size() / channels;

    std::vector<T> mean(static_cast<size_t>(channels)), inv_std(static_cast<size_t>(channels));
    if (training) {
        for (int64_t c = 0; c < channels; ++c) {
            double sum = 0;
            for (int64_t r = 0; r < rows; ++r) {
                sum += x[r * channels + c];
            }
            double mu = sum / static_cast<double>(rows);
            double sq = 0;
            for (int64_t r = 0; r < rows; ++r) {
                double d = x[r * channels + c] - mu;
                sq += d * d;
            }
            double var = sq / static_cast<double>(rows);
            mean[static_cast<size_t>(c)] = static_cast<T>(mu);
            inv_std[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + eps));
            running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1 - momentum) * mu);
            running_var[c] = static_cast<T>(momentum * running_var[c] + (1 - momentum) * var);
        }
    } else {
        for (int64_t c = 0; c < channels; ++c) {
            mean[static_cast<size_t>(c)] = running_mean[c];
            inv_std[static_cast<size_t>(c)] =
                static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
        }
    }

    TensorT<T> y(x.shape());
    TensorT<T> x_hat(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < channels; ++c) {
            T xh = (x[r * channels + c] - mean[static_cast<size_t>(c)]) *
                   inv_std[static_cast<size_t>(c)];
            x_hat[r * channels + c] = xh;
            y[r * channels + c] = gamma[c] * xh + beta[c];
        }
    }
    if (trace != nullptr) {
        trace->x_hat = std::move(x_hat);
        trace->inv_std = std::move(inv_std);
        trace->mean = std::move(mean);
    }
    return y;
}

template <typename T>
void batch_norm_backward(const TensorT<T>& dy, const BatchNormTrace<T>& trace,
                         const TensorT<T>& gamma, bool training, TensorT<T>& dx,
                         TensorT<T>& dgamma, TensorT<T>& dbeta) {
    int64_t channels = dy.shape().back();
    int64_t rows = dy.size() / channels;

    dx = TensorT<T>(dy.shape());
    dgamma = TensorT<T>(Shape{channels});
    dbeta = TensorT<T>(Shape{channels});

    for (int64_t c = 0; c < channels; ++c) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int64_t r = 0; r < rows; ++r) {
            double g = dy[r * channels + c];
            sum_dy += g;
            sum_dy_xhat += g * trace.x_hat[r * channels + c];
        }
        dbeta[c] = static_cast<T>(sum_dy);
        dgamma[c] = static_cast<T>(sum_dy_xhat);

        if (training) {
            double m = static_cast<double>(rows);
            for (int64_t r = 0; r < rows; ++r) {
                double g = dy[r * channels + c] * gamma[c];
                double xh = trace.x_hat[r * channels + c];
                dx[r * channels + c] = static_cast<T>(
                    trace.inv_std[static_cast<size_t>(c)] / m *
                    (m * g - sum_dy * static_cast<double>(gamma[c]) -
                     xh * sum_dy_xhat * static_cast<double>(gamma[c])));
            }
        } else {
            for (int64_t r = 0; r < rows; ++r) {
                dx[r * channels + c] = static_cast<T>(dy[r * channels + c] * gamma[c] *
                                                      trace.inv_std[static_cast<size_t>(c)]);
            }
        }
    }
}

// --- activations -----------------------------------------------------------------

enum class ActivationKind { Relu, Sigmoid, Softmax, None };

template <typename T>
TensorT<T> activation_forward(const TensorT<T>& x, ActivationKind kind) {
    TensorT<T> y(x.shape());
    switch (kind) {
        case ActivationKind::Relu:
            for (int64_t i = 0; i < x.size(); ++i) {
                y[i] = x[i] > T(0) ? x[i] : T(0);
            }
            break;
        case ActivationKind::Sigmoid:
            for (int64_t i = 0; i < x.size(); ++i) {
                y[i] = T(1) / (T(1) + std::exp(-x[i]));
            }
            break;
        case ActivationKind::Softmax: {
            int64_t channels = x.shape().back();
            int64_t rows = x.size() / channels;
            for (int64_t r = 0; r < rows; ++r) {
                T peak = x[r * channels];
                for (int64_t c = 1; c < channels; ++c) {
                    peak = std::max(peak, x[r * channels + c]);
                }
                T denom = T(0);
                for (int64_t c = 0; c < channels; ++c) {
                    T e = std::exp(x[r * channels + c] - peak);
                    y[r * channels + c] = e;
                    denom += e;
                }
                for (int64_t c = 0; c < channels; ++c) {
                    y[r * channels + c] /= denom;
                }
            }
            break;
        }
        case ActivationKind::None:
            y = x;
            break;
    }
    return y;
}

template <typename T>
TensorT<T> activation_backward(const TensorT<T>& dy, const TensorT<T>& x, const TensorT<T>& y,
                               ActivationKind kind) {
    TensorT<T> dx(dy.shape());
    switch (kind) {
        case ActivationKind::Relu:
            for (int64_t i = 0; i < dy.size(); ++i) {
                dx[i] = x[i] > T(0) ? dy[i] : T(0);
            }
            break;
        case ActivationKind::Sigmoid:
            for (int64_t i = 0; i < dy.size(); ++i) {
                dx[i] = dy[i] * y[i] * (T(1) - y[i]);
            }
            break;
        case ActivationKind::Softmax: {
            int64_t channels = dy.shape().back();
            int64_t rows = dy.size() / channels;
            for (int64_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (int64_t c = 0; c < channels; ++c) {
                    dot += dy[r * channels + c] * y[r * channels + c];
                }
                for (int64_t c = 0; c < channels; ++c) {
                    dx[r * channels + c] = y[r * channels + c] * (dy[r * channels + c] - dot);
                }
            }
            break;
        }
        case ActivationKind::None:
            dx = dy;
            break;
    }
    return dx;
}

// --- dropout (inverted) ----------------------------------------------------------

template <typename T>
TensorT<T> dropout_forward(const TensorT<T>& x, double rate, Rng& rng,
                           std::vector<uint8_t>* mask_out) {
    TensorT<T> y(x.shape());
    mask_out->assign(static_cast<size_t>(x.size()), 1);
    T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (int64_t i = 0; i < x.size(); ++i) {
        if (rng.bernoulli(rate)) {
            (*mask_out)[static_cast<size_t>(i)] = 0;
            y[i] = T(0);
        } else {
            y[i] = x[i] * scale;
        }
    }
    return y;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& dy, const std::vector<uint8_t>& mask, double rate) {
    TensorT<T> dx(dy.shape());
    T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (int64_t i = 0; i < dy.size(); ++i) {
        dx[i] = mask[static_cast<size_t>(i)] ? dy[i] * scale : T(0);
    }
    return dx;
}

// --- dense / global pool / SE scale ----------------------------------------------

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    require(x.rank() == 2, ErrorCode::ShapeMismatch, "dense input must be [N, F]");
    int64_t batch = x.shape()[0];
    int64_t fan_in = x.shape()[1];
    int64_t units = w.shape().back();
    require(w.shape()[0] == fan_in, ErrorCode::ShapeMismatch, "dense weight fan-in");

    TensorT<T> y(Shape{batch, units});
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t u = 0; u < units; ++u) {
            T acc = b[u];
            for (int64_t f = 0; f < fan_in; ++f) {
                acc += x[n * fan_in + f] * w[f * units + u];
            }
            y[n * units + u] = acc;
        }
    }
    return y;
}

template <typename T>
void dense_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                    TensorT<T>& dx, TensorT<T>& dw, TensorT<T>& db) {
    int64_t batch = x.shape()[0];
    int64_t fan_in = x.shape()[1];
    int64_t units = w.shape().back();

    dx = TensorT<T>(x.shape());
    dw = TensorT<T>(w.shape());
    db = TensorT<T>(Shape{units});
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t u = 0; u < units; ++u) {
            T g = dy[n * units + u];
            db[u] += g;
            for (int64_t f = 0; f < fan_in; ++f) {
                dw[f * units + u] += x[n * fan_in + f] * g;
                dx[n * fan_in + f] += w[f * units + u] * g;
            }
        }
    }
}

template <typename T>
TensorT<T> global_pool_forward(const TensorT<T>& x) {
    int64_t batch = x.shape()[0];
    int64_t channels = x.shape().back();
    int64_t voxels = x.size() / (batch * channels);

    TensorT<T> y(Shape{batch, channels});
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
            double acc = 0;
            for (int64_t v = 0; v < voxels; ++v) {
                acc += x[(n * voxels + v) * channels + c];
            }
            y[n * channels + c] = static_cast<T>(acc / static_cast<double>(voxels));
        }
    }
    return y;
}

template <typename T>
TensorT<T> global_pool_backward(const Shape& x_shape, const TensorT<T>& dy) {
    int64_t batch = x_shape[0];
    int64_t channels = x_shape.back();
    int64_t voxels = numel(x_shape) / (batch * channels);

    TensorT<T> dx(x_shape);
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
            T g = dy[n * channels + c] / static_cast<T>(voxels);
            for (int64_t v = 0; v < voxels; ++v) {
                dx[(n * voxels + v) * channels + c] = g;
            }
        }
    }
    return dx;
}

/// y[n, s, c] = x[n, s, c] * gate[n, c]; the SE multiplicative gate.
template <typename T>
TensorT<T> scale_forward(const TensorT<T>& x, const TensorT<T>& gate) {
    int64_t batch = x.shape()[0];
    int64_t channels = x.shape().back();
    require(gate.shape() == Shape({batch, channels}), ErrorCode::ShapeMismatch,
            "gate must be [N, C]");
    int64_t voxels = x.size() / (batch * channels);

    TensorT<T> y(x.shape());
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t v = 0; v < voxels; ++v) {
            for (int64_t c = 0; c < channels; ++c) {
                y[(n * voxels + v) * channels + c] =
                    x[(n * voxels + v) * channels + c] * gate[n * channels + c];
            }
        }
    }
    return y;
}

template <typename T>
void scale_backward(const TensorT<T>& x, const TensorT<T>& gate, const TensorT<T>& dy,
                    TensorT<T>& dx, TensorT<T>& dgate) {
    int64_t batch = x.shape()[0];
    int64_t channels = x.shape().back();
    int64_t voxels = x.size() / (batch * channels);

    dx = TensorT<T>(x.shape());
    dgate = TensorT<T>(gate.shape());
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t v = 0; v < voxels; ++v) {
            for (int64_t c = 0; c < channels; ++c) {
                int64_t i = (n * voxels + v) * channels + c;
                dx[i] = dy[i] * gate[n * channels + c];
                dgate[n * channels + c] += dy[i] * x[i];
            }
        }
    }
}

}  // namespace neuropipe::net
