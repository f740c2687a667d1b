#pragma once

#include <map>
#include <set>
#include <string>

#include "neuropipe/net/ops.hpp"

namespace neuropipe::net {

enum class LayerKind {
    Input,
    Conv,
    PoolMax,
    UpsampleNN,
    Concat,
    Add,
    BatchNorm,
    Activation,
    Dropout,
    Dense,
    GlobalPool,
    Scale,
};

// One node of the static layer graph. Which fields matter depends on kind;
// parameter tensors live in the ParamStore under "<name>.w" etc.
struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    std::string name;
    std::vector<int> inputs;

    Shape kernel;   // conv kernel / pool window, per spatial axis
    Shape stride;   // conv / pool
    Padding padding = Padding::Same;
    int64_t filters = 0;  // conv output channels or dense units
    Shape factor;         // upsample factor per axis
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    ActivationKind activation = ActivationKind::None;
    double dropout_rate = 0.0;
    bool counts_as_main_conv = false;
};

struct Graph {
    std::vector<LayerSpec> nodes;  // topological order
    int input = -1;
    int output = -1;

    int add(LayerSpec spec) {
        for (const auto& n : nodes) {
            require(n.name != spec.name, ErrorCode::InvalidArgument,
                    "duplicate layer name '" + spec.name + "'");
        }
        for (int i : spec.inputs) {
            require(i >= 0 && i < static_cast<int>(nodes.size()), ErrorCode::InvalidArgument,
                    "layer '" + spec.name + "' references a later node");
        }
        nodes.push_back(std::move(spec));
        return static_cast<int>(nodes.size()) - 1;
    }

    int64_t main_conv_count() const {
        int64_t count = 0;
        for (const auto& n : nodes) {
            if (n.counts_as_main_conv) {
                ++count;
            }
        }
        return count;
    }
};

template <typename T>
struct ParamStore {
    std::map<std::string, TensorT<T>> values;  // ordered -> deterministic walks
    std::set<std::string> trainable;

    TensorT<T>& at(const std::string& name) {
        auto it = values.find(name);
        require(it != values.end(), ErrorCode::InvalidArgument, "no parameter '" + name + "'");
        return it->second;
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = values.find(name);
        require(it != values.end(), ErrorCode::InvalidArgument, "no parameter '" + name + "'");
        return it->second;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, tensor] : values) {
            out.values.emplace(name, tensor.template cast<U>());
        }
        out.trainable = trainable;
        return out;
    }
};

template <typename T>
struct NodeTrace {
    TensorT<T> output;
    BatchNormTrace<T> bn;
    std::vector<int64_t> argmax;
    std::vector<uint8_t> dropout_mask;
};

template <typename T>
struct ForwardTrace {
    TensorT<T> input;
    std::vector<NodeTrace<T>> nodes;
    bool training = false;
};

/// Runs a Graph forwards/backwards against a ParamStore. Forward in training
/// mode draws dropout masks from the given seed and (unless disabled) updates
/// BatchNorm running statistics in place.
template <typename T>
class Executor {
public:
    Executor(const Graph& graph, ParamStore<T>& params) : graph_(graph), params_(params) {}

    TensorT<T> forward(const TensorT<T>& x, bool training, uint64_t dropout_seed = 0,
                       ForwardTrace<T>* trace = nullptr, bool update_running_stats = true) {
        require(graph_.output >= 0, ErrorCode::InvalidArgument, "graph has no output node");
        std::vector<NodeTrace<T>> traces(graph_.nodes.size());

        auto value_of = [&](int idx) -> const TensorT<T>& {
            return graph_.nodes[static_cast<size_t>(idx)].kind == LayerKind::Input
                       ? x
                       : traces[static_cast<size_t>(idx)].output;
        };

        for (size_t i = 0; i < graph_.nodes.size(); ++i) {
            const LayerSpec& spec = graph_.nodes[i];
            NodeTrace<T>& node = traces[i];
            switch (spec.kind) {
                case LayerKind::Input:
                    break;
                case LayerKind::Conv: {
                    node.output = conv_forward(value_of(spec.inputs[0]),
                                               params_.at(spec.name + ".w"),
                                               params_.at(spec.name + ".b"), spec.stride,
                                               spec.padding);
                    break;
                }
                case LayerKind::PoolMax: {
                    auto pooled = pool_max_forward(value_of(spec.inputs[0]), spec.kernel,
                                                   spec.stride, spec.padding);
                    node.output = std::move(pooled.y);
                    node.argmax = std::move(pooled.argmax);
                    break;
                }
                case LayerKind::UpsampleNN:
                    node.output = upsample_nn_forward(value_of(spec.inputs[0]), spec.factor);
                    break;
                case LayerKind::Concat: {
                    std::vector<const TensorT<T>*> inputs;
                    for (int idx : spec.inputs) {
                        inputs.push_back(&value_of(idx));
                    }
                    node.output = concat_forward(inputs);
                    break;
                }
                case LayerKind::Add: {
                    const TensorT<T>& a = value_of(spec.inputs[0]);
                    const TensorT<T>& b = value_of(spec.inputs[1]);
                    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
                            "add inputs differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
                    node.output = TensorT<T>(a.shape());
                    for (int64_t j = 0; j < a.size(); ++j) {
                        node.output[j] = a[j] + b[j];
                    }
                    break;
                }
                case LayerKind::BatchNorm: {
                    TensorT<T>& rm = params_.at(spec.name + ".running_mean");
                    TensorT<T>& rv = params_.at(spec.name + ".running_var");
                    if (training && !update_running_stats) {
                        TensorT<T> rm_copy = rm, rv_copy = rv;
                        node.output = batch_norm_forward(
                            value_of(spec.inputs[0]), params_.at(spec.name + ".gamma"),
                            params_.at(spec.name + ".beta"), rm_copy, rv_copy, training,
                            spec.bn_momentum, spec.bn_eps, &node.bn);
                    } else {
                        node.output = batch_norm_forward(
                            value_of(spec.inputs[0]), params_.at(spec.name + ".gamma"),
                            params_.at(spec.name + ".beta"), rm, rv, training,
                            spec.bn_momentum, spec.bn_eps, &node.bn);
                    }
                    break;
                }
                case LayerKind::Activation:
                    node.output = activation_forward(value_of(spec.inputs[0]), spec.activation);
                    break;
                case LayerKind::Dropout: {
                    if (training && spec.dropout_rate > 0) {
                        Rng rng{hash_u64s({dropout_seed, static_cast<uint64_t>(i)})};
                        node.output = dropout_forward(value_of(spec.inputs[0]),
                                                      spec.dropout_rate, rng,
                                                      &node.dropout_mask);
                    } else {
                        node.output = value_of(spec.inputs[0]);
                    }
                    break;
                }
                case LayerKind::Dense:
                    node.output = dense_forward(value_of(spec.inputs[0]),
                                                params_.at(spec.name + ".w"),
                                                params_.at(spec.name + ".b"));
                    break;
                case LayerKind::GlobalPool:
                    node.output = global_pool_forward(value_of(spec.inputs[0]));
                    break;
                case LayerKind::Scale:
                    node.output =
                        scale_forward(value_of(spec.inputs[0]), value_of(spec.inputs[1]));
                    break;
            }
        }

        TensorT<T> result = traces[static_cast<size_t>(graph_.output)].output;
        if (trace != nullptr) {
            trace->input = x;
            trace->nodes = std::move(traces);
            trace->training = training;
        }
        return result;
    }

    /// Accumulates parameter gradients into grads and returns dLoss/dInput.
    TensorT<T> backward(const ForwardTrace<T>& trace, const TensorT<T>& grad_output,
                        ParamStore<T>& grads) {
        std::vector<TensorT<T>> node_grads(graph_.nodes.size());

        auto value_of = [&](int idx) -> const TensorT<T>& {
            return graph_.nodes[static_cast<size_t>(idx)].kind == LayerKind::Input
                       ? trace.input
                       : trace.nodes[static_cast<size_t>(idx)].output;
        };
        auto add_grad = [&](int idx, const TensorT<T>& g) {
            TensorT<T>& slot = node_grads[static_cast<size_t>(idx)];
            if (slot.empty()) {
                slot = g;
            } else {
                for (int64_t j = 0; j < g.size(); ++j) {
                    slot[j] += g[j];
                }
            }
        };
        auto add_param_grad = [&](const std::string& name, TensorT<T> g) {
            auto it = grads.values.find(name);
            if (it == grads.values.end()) {
                grads.values.emplace(name, std::move(g));
            } else {
                for (int64_t j = 0; j < g.size(); ++j) {
                    it->second[j] += g[j];
                }
            }
        };

        TensorT<T> input_grad(trace.input.shape());
        node_grads[static_cast<size_t>(graph_.output)] = grad_output;

        for (size_t ri = graph_.nodes.size(); ri-- > 0;) {
            const LayerSpec& spec = graph_.nodes[ri];
            TensorT<T>& dy = node_grads[ri];
            if (dy.empty()) {
                continue;  // node not on any path to the output
            }
            const NodeTrace<T>& node = trace.nodes[ri];
            switch (spec.kind) {
                case LayerKind::Input:
                    for (int64_t j = 0; j < dy.size(); ++j) {
                        input_grad[j] += dy[j];
                    }
                    break;
                case LayerKind::Conv: {
                    TensorT<T> dx, dw, db;
                    conv_backward(value_of(spec.inputs[0]), params_.at(spec.name + ".w"), dy,
                                  spec.stride, spec.padding, dx, dw, db);
                    add_param_grad(spec.name + ".w", std::move(dw));
                    add_param_grad(spec.name + ".b", std::move(db));
                    add_grad(spec.inputs[0], dx);
                    break;
                }
                case LayerKind::PoolMax: {
                    add_grad(spec.inputs[0],
                             pool_max_backward(value_of(spec.inputs[0]).shape(), node.argmax, dy));
                    break;
                }
                case LayerKind::UpsampleNN:
                    add_grad(spec.inputs[0],
                             upsample_nn_backward(value_of(spec.inputs[0]).shape(), dy,
                                                  spec.factor));
                    break;
                case LayerKind::Concat: {
                    std::vector<Shape> shapes;
                    for (int idx : spec.inputs) {
                        shapes.push_back(value_of(idx).shape());
                    }
                    auto parts = concat_backward(shapes, dy);
                    for (size_t k = 0; k < parts.size(); ++k) {
                        add_grad(spec.inputs[k], parts[k]);
                    }
                    break;
                }
                case LayerKind::Add:
                    add_grad(spec.inputs[0], dy);
                    add_grad(spec.inputs[1], dy);
                    break;
                case LayerKind::BatchNorm: {
                    TensorT<T> dx, dgamma, dbeta;
                    batch_norm_backward(dy, node.bn, params_.at(spec.name + ".gamma"),
                                        trace.training, dx, dgamma, dbeta);
                    add_param_grad(spec.name + ".gamma", std::move(dgamma));
                    add_param_grad(spec.name + ".beta", std::move(dbeta));
                    add_grad(spec.inputs[0], dx);
                    break;
                }
                case LayerKind::Activation:
                    add_grad(spec.inputs[0],
                             activation_backward(dy, value_of(spec.inputs[0]), node.output,
                                                 spec.activation));
                    break;
                case LayerKind::Dropout:
                    if (trace.training && spec.dropout_rate > 0) {
                        add_grad(spec.inputs[0],
                                 dropout_backward(dy, node.dropout_mask, spec.dropout_rate));
                    } else {
                        add_grad(spec.inputs[0], dy);
                    }
                    break;
                case LayerKind::Dense: {
                    TensorT<T> dx, dw, db;
                    dense_backward(value_of(spec.inputs[0]), params_.at(spec.name + ".w"), dy,
                                   dx, dw, db);
                    add_param_grad(spec.name + ".w", std::move(dw));
                    add_param_grad(spec.name + ".b", std::move(db));
                    add_grad(spec.inputs[0], dx);
                    break;
                }
                case LayerKind::GlobalPool:
                    add_grad(spec.inputs[0],
                             global_pool_backward(value_of(spec.inputs[0]).shape(), dy));
                    break;
                case LayerKind::Scale: {
                    TensorT<T> dx, dgate;
                    scale_backward(value_of(spec.inputs[0]), value_of(spec.inputs[1]), dy, dx,
                                   dgate);
                    add_grad(spec.inputs[0], dx);
                    add_grad(spec.inputs[1], dgate);
                    break;
                }
            }
        }
        return input_grad;
    }

private:
    const Graph& graph_;
    ParamStore<T>& params_;
};

}  // namespace neuropipe::net
