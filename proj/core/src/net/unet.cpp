#include "neuropipe/net/unet.hpp"

#include "json.hpp"
#include "neuropipe/rng.hpp"

namespace neuropipe::net {

void UNetConfig::validate() const {
    require(input_shape.size() == 3 || input_shape.size() == 4, ErrorCode::InvalidConfig,
            "input_shape must be [X,Y,C] or [X,Y,Z,C], got " + shape_str(input_shape));
    for (int64_t d : input_shape) {
        require(d >= 1, ErrorCode::InvalidConfig, "input_shape entries must be >= 1");
    }
    require(depth >= 1, ErrorCode::InvalidConfig, "depth must be >= 1");
    int rank = spatial_rank();
    require(static_cast<int>(pool_size.size()) == rank, ErrorCode::InvalidConfig,
            "pool_size needs " + std::to_string(rank) + " axes, got " +
                shape_str(pool_size));
    require(static_cast<int>(kernel_size.size()) == rank, ErrorCode::InvalidConfig,
            "kernel_size needs " + std::to_string(rank) + " axes, got " +
                shape_str(kernel_size));
    for (int a = 0; a < rank; ++a) {
        require(pool_size[a] >= 1, ErrorCode::InvalidConfig, "pool_size entries must be >= 1");
        require(kernel_size[a] >= 1, ErrorCode::InvalidConfig,
                "kernel_size entries must be >= 1");
        if (padding == "same") {
            require(kernel_size[a] % 2 == 1, ErrorCode::InvalidConfig,
                    "kernel_size must be odd for same padding, got axis " + std::to_string(a) +
                        " = " + std::to_string(kernel_size[a]));
        }
        // Each axis must survive `depth` pooling stages exactly.
        int64_t extent = input_shape[a];
        for (int64_t level = 0; level < depth; ++level) {
            require(extent % pool_size[a] == 0, ErrorCode::InvalidConfig,
                    "input_shape axis " + std::to_string(a) + " (" +
                        std::to_string(input_shape[a]) + ") is not divisible by pool_size " +
                        std::to_string(pool_size[a]) + "^" + std::to_string(depth));
            extent /= pool_size[a];
        }
    }
    require(padding == "same", ErrorCode::InvalidConfig,
            "padding must be 'same' (decoder skip concatenation needs aligned extents)");
    require(activation == "relu", ErrorCode::InvalidConfig,
            "activation '" + activation + "' not supported (use relu)");
    require(downsize_filters_factor >= 1, ErrorCode::InvalidConfig,
            "downsize_filters_factor must be >= 1");
    require(max_filter / downsize_filters_factor >= (int64_t{1} << (depth - 1)),
            ErrorCode::InvalidConfig,
            "max_filter/downsize_filters_factor must be >= 2^(depth-1)");
    require(dropout >= 0 && dropout < 1, ErrorCode::InvalidConfig, "dropout must be in [0,1)");
    require(num_outputs >= 1, ErrorCode::InvalidConfig, "num_outputs must be >= 1");
    require(initial_learning_rate >= 0, ErrorCode::InvalidConfig,
            "initial_learning_rate must be >= 0");
}

std::vector<int64_t> UNetConfig::stage_filters() const {
    // Top stage = max_filter / 2^(depth-1) / factor, doubling each level down.
    std::vector<int64_t> filters;
    for (int64_t d = 0; d < depth; ++d) {
        filters.push_back(max_filter / (int64_t{1} << (depth - 1 - d)) /
                          downsize_filters_factor);
    }
    return filters;
}

int64_t UNetConfig::bottleneck_filters() const { return max_filter / downsize_filters_factor; }

namespace {

struct BuilderNode {
    int index = -1;
    int64_t channels = 0;
};

// Assembles one style of "conv block" pair after another; returns the pair's
// output node and channel count. All helpers keep spatial extent (padding
// 'same', stride 1).
class UNetBuilder {
public:
    UNetBuilder(Graph& g, const UNetConfig& cfg) : g_(g), cfg_(cfg) {}

    BuilderNode conv(BuilderNode in, int64_t filters, const Shape& kernel,
                     const std::string& name, bool main) {
        LayerSpec spec;
        spec.kind = LayerKind::Conv;
        spec.name = name;
        spec.inputs = {in.index};
        spec.kernel = kernel;
        spec.stride = Shape(static_cast<size_t>(cfg_.spatial_rank()), 1);
        spec.padding = Padding::Same;
        spec.filters = filters;
        spec.counts_as_main_conv = main;
        conv_in_channels_[name] = in.channels;
        return {g_.add(std::move(spec)), filters};
    }

    BuilderNode one_by_one(BuilderNode in, int64_t filters, const std::string& name,
                           bool main = false) {
        return conv(in, filters, Shape(static_cast<size_t>(cfg_.spatial_rank()), 1), name, main);
    }

    BuilderNode bn(BuilderNode in, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::BatchNorm;
        spec.name = name;
        spec.inputs = {in.index};
        bn_channels_[name] = in.channels;
        return {g_.add(std::move(spec)), in.channels};
    }

    BuilderNode act(BuilderNode in, const std::string& name,
                    ActivationKind kind = ActivationKind::Relu) {
        LayerSpec spec;
        spec.kind = LayerKind::Activation;
        spec.name = name;
        spec.inputs = {in.index};
        spec.activation = kind;
        return {g_.add(std::move(spec)), in.channels};
    }

    BuilderNode dropout(BuilderNode in, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::Dropout;
        spec.name = name;
        spec.inputs = {in.index};
        spec.dropout_rate = cfg_.dropout;
        return {g_.add(std::move(spec)), in.channels};
    }

    BuilderNode pool(BuilderNode in, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::PoolMax;
        spec.name = name;
        spec.inputs = {in.index};
        spec.kernel = cfg_.pool_size;
        spec.stride = cfg_.pool_size;
        spec.padding = Padding::Valid;
        return {g_.add(std::move(spec)), in.channels};
    }

    BuilderNode upsample(BuilderNode in, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::UpsampleNN;
        spec.name = name;
        spec.inputs = {in.index};
        spec.factor = cfg_.pool_size;
        return {g_.add(std::move(spec)), in.channels};
    }

    BuilderNode concat(const std::vector<BuilderNode>& ins, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::Concat;
        spec.name = name;
        int64_t channels = 0;
        for (const auto& node : ins) {
            spec.inputs.push_back(node.index);
            channels += node.channels;
        }
        return {g_.add(std::move(spec)), channels};
    }

    BuilderNode add2(BuilderNode a, BuilderNode b, const std::string& name) {
        LayerSpec spec;
        spec.kind = LayerKind::Add;
        spec.name = name;
        spec.inputs = {a.index, b.index};
        return {g_.add(std::move(spec)), a.channels};
    }

    // conv -> bn -> act, or the pre-activation ordering.
    BuilderNode basic_block(BuilderNode in, int64_t filters, const std::string& prefix,
                            bool main) {
        if (cfg_.block_order == BlockOrder::ConvBnAct) {
            BuilderNode cur = conv(in, filters, cfg_.kernel_size, prefix + ".conv", main);
            if (cfg_.batch_norm) {
                cur = bn(cur, prefix + ".bn");
            }
            return act(cur, prefix + ".act");
        }
        BuilderNode cur = in;
        if (cfg_.batch_norm) {
            cur = bn(cur, prefix + ".bn");
        }
        cur = act(cur, prefix + ".act");
        return conv(cur, filters, cfg_.kernel_size, prefix + ".conv", main);
    }

    // Linear conv (+bn) without the trailing activation, for residual tails.
    BuilderNode linear_block(BuilderNode in, int64_t filters, const std::string& prefix,
                             bool main) {
        BuilderNode cur = conv(in, filters, cfg_.kernel_size, prefix + ".conv", main);
        if (cfg_.batch_norm) {
            cur = bn(cur, prefix + ".bn");
        }
        return cur;
    }

    BuilderNode inception_block(BuilderNode in, int64_t filters, const std::string& prefix,
                                bool main) {
        BuilderNode p1 = one_by_one(in, filters, prefix + ".p1");
        BuilderNode p2 = conv(in, filters, cfg_.kernel_size, prefix + ".p2", main);
        LayerSpec pool_spec;
        pool_spec.kind = LayerKind::PoolMax;
        pool_spec.name = prefix + ".p3pool";
        pool_spec.inputs = {in.index};
        pool_spec.kernel = cfg_.kernel_size;
        pool_spec.stride = Shape(static_cast<size_t>(cfg_.spatial_rank()), 1);
        pool_spec.padding = Padding::Same;
        BuilderNode p3{g_.add(std::move(pool_spec)), in.channels};
        p3 = one_by_one(p3, filters, prefix + ".p3");
        BuilderNode cat = concat({p1, p2, p3}, prefix + ".cat");
        BuilderNode cur = one_by_one(cat, filters, prefix + ".proj");
        if (cfg_.batch_norm) {
            cur = bn(cur, prefix + ".bn");
        }
        return act(cur, prefix + ".act");
    }

    BuilderNode se_gate(BuilderNode in, const std::string& prefix) {
        LayerSpec gp;
        gp.kind = LayerKind::GlobalPool;
        gp.name = prefix + ".se_pool";
        gp.inputs = {in.index};
        BuilderNode cur{g_.add(std::move(gp)), in.channels};

        int64_t squeezed = std::max<int64_t>(1, in.channels / 4);
        LayerSpec fc1;
        fc1.kind = LayerKind::Dense;
        fc1.name = prefix + ".se_fc1";
        fc1.inputs = {cur.index};
        fc1.filters = squeezed;
        dense_in_[fc1.name] = cur.channels;
        cur = {g_.add(std::move(fc1)), squeezed};
        cur = act(cur, prefix + ".se_act");

        LayerSpec fc2;
        fc2.kind = LayerKind::Dense;
        fc2.name = prefix + ".se_fc2";
        fc2.inputs = {cur.index};
        fc2.filters = in.channels;
        dense_in_[fc2.name] = cur.channels;
        cur = {g_.add(std::move(fc2)), in.channels};
        cur = act(cur, prefix + ".se_gate", ActivationKind::Sigmoid);

        LayerSpec scale;
        scale.kind = LayerKind::Scale;
        scale.name = prefix + ".se_scale";
        scale.inputs = {in.index, cur.index};
        return {g_.add(std::move(scale)), in.channels};
    }

    // The "two convolutional layers between each pooling layer" unit, in the
    // configured style.
    BuilderNode conv_pair(BuilderNode in, int64_t filters, const std::string& prefix) {
        BuilderNode out{-1, 0};
        switch (cfg_.block_style) {
            case BlockStyle::Plain: {
                BuilderNode cur = basic_block(in, filters, prefix + "0", true);
                out = basic_block(cur, filters, prefix + "1", true);
                break;
            }
            case BlockStyle::SE: {
                BuilderNode cur = basic_block(in, filters, prefix + "0", true);
                cur = basic_block(cur, filters, prefix + "1", true);
                out = se_gate(cur, prefix);
                break;
            }
            case BlockStyle::Residual: {
                if (cfg_.block_order == BlockOrder::ConvBnAct) {
                    BuilderNode cur = basic_block(in, filters, prefix + "0", true);
                    cur = linear_block(cur, filters, prefix + "1", true);
                    BuilderNode skip = in.channels == filters
                                           ? in
                                           : one_by_one(in, filters, prefix + ".skip");
                    cur = add2(cur, skip, prefix + ".add");
                    out = act(cur, prefix + ".out_act");
                } else {
                    BuilderNode cur = basic_block(in, filters, prefix + "0", true);
                    cur = basic_block(cur, filters, prefix + "1", true);
                    BuilderNode skip = in.channels == filters
                                           ? in
                                           : one_by_one(in, filters, prefix + ".skip");
                    out = add2(cur, skip, prefix + ".add");
                }
                break;
            }
            case BlockStyle::Dense: {
                BuilderNode c1 = basic_block(in, filters, prefix + "0", true);
                BuilderNode s1 = concat({in, c1}, prefix + ".cat0");
                BuilderNode c2 = basic_block(s1, filters, prefix + "1", true);
                BuilderNode s2 = concat({s1, c2}, prefix + ".cat1");
                out = one_by_one(s2, filters, prefix + ".proj");
                break;
            }
            case BlockStyle::Inception: {
                BuilderNode cur = inception_block(in, filters, prefix + "0", true);
                out = inception_block(cur, filters, prefix + "1", true);
                break;
            }
        }
        if (cfg_.dropout > 0) {
            out = dropout(out, prefix + ".drop");
        }
        return out;
    }

    const std::map<std::string, int64_t>& conv_in_channels() const { return conv_in_channels_; }
    const std::map<std::string, int64_t>& bn_channels() const { return bn_channels_; }
    const std::map<std::string, int64_t>& dense_in() const { return dense_in_; }

private:
    Graph& g_;
    const UNetConfig& cfg_;
    std::map<std::string, int64_t> conv_in_channels_;
    std::map<std::string, int64_t> bn_channels_;
    std::map<std::string, int64_t> dense_in_;
};

}  // namespace

Model build_unet(const UNetConfig& cfg, uint64_t init_seed) {
    cfg.validate();

    Model m;
    m.config = cfg;
    Graph& g = m.graph;

    LayerSpec input;
    input.kind = LayerKind::Input;
    input.name = "input";
    g.input = g.add(std::move(input));

    UNetBuilder b(g, cfg);
    BuilderNode cur{g.input, cfg.input_channels()};
    std::vector<int64_t> filters = cfg.stage_filters();

    std::vector<BuilderNode> skips;
    for (int64_t d = 0; d < cfg.depth; ++d) {
        cur = b.conv_pair(cur, filters[static_cast<size_t>(d)],
                          "enc" + std::to_string(d) + ".b");
        skips.push_back(cur);
        cur = b.pool(cur, "enc" + std::to_string(d) + ".pool");
    }

    cur = b.conv_pair(cur, cfg.bottleneck_filters(), "bottleneck.b");

    for (int64_t d = cfg.depth - 1; d >= 0; --d) {
        cur = b.upsample(cur, "dec" + std::to_string(d) + ".up");
        cur = b.concat({skips[static_cast<size_t>(d)], cur},
                       "dec" + std::to_string(d) + ".concat");
        cur = b.conv_pair(cur, filters[static_cast<size_t>(d)],
                          "dec" + std::to_string(d) + ".b");
    }

    cur = b.one_by_one(cur, cfg.num_outputs, "head.proj");
    cur = b.act(cur, "head.act",
                cfg.num_outputs == 1 ? ActivationKind::Sigmoid : ActivationKind::Softmax);
    g.output = cur.index;

    // He-uniform conv/dense weights keyed by parameter name, so initialization
    // does not depend on graph assembly order.
    for (const LayerSpec& spec : g.nodes) {
        if (spec.kind == LayerKind::Conv) {
            int64_t in_ch = b.conv_in_channels().at(spec.name);
            Shape w_shape = spec.kernel;
            w_shape.push_back(in_ch);
            w_shape.push_back(spec.filters);
            Tensor w(w_shape);
            double fan_in = static_cast<double>(numel(spec.kernel) * in_ch);
            double limit = std::sqrt(6.0 / fan_in);
            Rng rng{hash_u64s({init_seed, hash_u64s({std::hash<std::string>{}(spec.name)})})};
            for (int64_t i = 0; i < w.size(); ++i) {
                w[i] = static_cast<float>(rng.uniform(-limit, limit));
            }
            m.params.values.emplace(spec.name + ".w", std::move(w));
            m.params.values.emplace(spec.name + ".b", Tensor(Shape{spec.filters}));
            m.params.trainable.insert(spec.name + ".w");
            m.params.trainable.insert(spec.name + ".b");
        } else if (spec.kind == LayerKind::Dense) {
            int64_t in_ch = b.dense_in().at(spec.name);
            Tensor w(Shape{in_ch, spec.filters});
            double limit = std::sqrt(6.0 / static_cast<double>(in_ch));
            Rng rng{hash_u64s({init_seed, hash_u64s({std::hash<std::string>{}(spec.name)})})};
            for (int64_t i = 0; i < w.size(); ++i) {
                w[i] = static_cast<float>(rng.uniform(-limit, limit));
            }
            m.params.values.emplace(spec.name + ".w", std::move(w));
            m.params.values.emplace(spec.name + ".b", Tensor(Shape{spec.filters}));
            m.params.trainable.insert(spec.name + ".w");
            m.params.trainable.insert(spec.name + ".b");
        } else if (spec.kind == LayerKind::BatchNorm) {
            int64_t ch = b.bn_channels().at(spec.name);
            m.params.values.emplace(spec.name + ".gamma", Tensor::full(Shape{ch}, 1.0f));
            m.params.values.emplace(spec.name + ".beta", Tensor(Shape{ch}));
            m.params.values.emplace(spec.name + ".running_mean", Tensor(Shape{ch}));
            m.params.values.emplace(spec.name + ".running_var", Tensor::full(Shape{ch}, 1.0f));
            m.params.trainable.insert(spec.name + ".gamma");
            m.params.trainable.insert(spec.name + ".beta");
        }
    }
    return m;
}

Tensor Model::forward(const Tensor& x, bool training, uint64_t dropout_seed) {
    require(x.rank() == static_cast<int>(config.input_shape.size()) + 1, ErrorCode::ShapeMismatch,
            "input must be batched " + shape_str(config.input_shape) + ", got " +
                shape_str(x.shape()));
    for (size_t a = 0; a < config.input_shape.size(); ++a) {
        require(x.shape()[a + 1] == config.input_shape[a], ErrorCode::ShapeMismatch,
                "input " + shape_str(x.shape()) + " does not match configured " +
                    shape_str(config.input_shape));
    }
    Executor<float> exec(graph, params);
    return exec.forward(x, training, dropout_seed);
}

// --- JSON (de)serialization ----------------------------------------------------

namespace {

std::string cost_name(CostFunction c) {
    return c == CostFunction::SoftDice ? "soft_dice" : "binary_crossentropy";
}
std::string optimizer_name(OptimizerKind o) { return o == OptimizerKind::Adam ? "adam" : "sgd"; }
std::string order_name(BlockOrder o) {
    return o == BlockOrder::ConvBnAct ? "conv_bn_act" : "bn_act_conv";
}
std::string style_name(BlockStyle s) {
    switch (s) {
        case BlockStyle::Plain: return "plain";
        case BlockStyle::Residual: return "residual";
        case BlockStyle::Dense: return "dense";
        case BlockStyle::SE: return "se";
        case BlockStyle::Inception: return "inception";
    }
    return "plain";
}

}  // namespace

UNetConfig UNetConfig::from_json_text(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("model config JSON: ") + e.what());
    }
    UNetConfig cfg;
    try {
        cfg.input_shape = j.at("input_shape").get<Shape>();
        cfg.depth = j.at("depth").get<int64_t>();
        cfg.max_filter = j.at("max_filter").get<int64_t>();
        cfg.downsize_filters_factor = j.value("downsize_filters_factor", int64_t{1});
        cfg.pool_size = j.at("pool_size").get<Shape>();
        cfg.kernel_size = j.at("kernel_size").get<Shape>();
        cfg.dropout = j.value("dropout", 0.0);
        cfg.batch_norm = j.value("batch_norm", true);
        cfg.activation = j.value("activation", std::string("relu"));
        cfg.padding = j.value("padding", std::string("same"));
        cfg.num_outputs = j.value("num_outputs", int64_t{1});
        std::string cost = j.value("cost_function", std::string("soft_dice"));
        require(cost == "soft_dice" || cost == "binary_crossentropy", ErrorCode::InvalidConfig,
                "cost_function '" + cost + "' unknown");
        cfg.cost_function =
            cost == "soft_dice" ? CostFunction::SoftDice : CostFunction::BinaryCrossentropy;
        cfg.initial_learning_rate = j.value("initial_learning_rate", 1e-4);
        std::string opt = j.value("optimizer", std::string("adam"));
        require(opt == "adam" || opt == "sgd", ErrorCode::InvalidConfig,
                "optimizer '" + opt + "' unknown");
        cfg.optimizer = opt == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
        std::string order = j.value("block_order", std::string("conv_bn_act"));
        require(order == "conv_bn_act" || order == "bn_act_conv", ErrorCode::InvalidConfig,
                "block_order '" + order + "' unknown");
        cfg.block_order = order == "conv_bn_act" ? BlockOrder::ConvBnAct : BlockOrder::BnActConv;
        std::string style = j.value("block_style", std::string("plain"));
        if (style == "plain") {
            cfg.block_style = BlockStyle::Plain;
        } else if (style == "residual") {
            cfg.block_style = BlockStyle::Residual;
        } else if (style == "dense") {
            cfg.block_style = BlockStyle::Dense;
        } else if (style == "se") {
            cfg.block_style = BlockStyle::SE;
        } else if (style == "inception") {
            cfg.block_style = BlockStyle::Inception;
        } else {
            raise(ErrorCode::InvalidConfig, "block_style '" + style + "' unknown");
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
    }
    return cfg;
}

std::string UNetConfig::to_json_text() const {
    nlohmann::json j;
    j["input_shape"] = input_shape;
    j["depth"] = depth;
    j["max_filter"] = max_filter;
    j["downsize_filters_factor"] = downsize_filters_factor;
    j["pool_size"] = pool_size;
    j["kernel_size"] = kernel_size;
    j["dropout"] = dropout;
    j["batch_norm"] = batch_norm;
    j["activation"] = activation;
    j["padding"] = padding;
    j["num_outputs"] = num_outputs;
    j["cost_function"] = cost_name(cost_function);
    j["initial_learning_rate"] = initial_learning_rate;
    j["optimizer"] = optimizer_name(optimizer);
    j["block_order"] = order_name(block_order);
    j["block_style"] = style_name(block_style);
    return j.dump();
}

}  // namespace neuropipe::net
