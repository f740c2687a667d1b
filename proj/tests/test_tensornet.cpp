#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers/net_fixtures.hpp"
#include "neuropipe/net/grad_check.hpp"
#include "neuropipe/net/loss.hpp"
#include "neuropipe/net/train.hpp"
#include "neuropipe/net/unet.hpp"

using namespace neuropipe;
using namespace neuropipe::net;
using namespace test_fixtures;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        return false;
    }
    for (int64_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("conv: 1x1 identity kernel reproduces the input") {
    TensorT<double> x = random_input64({3, 3, 2}, 1, 4);
    TensorT<double> w(Shape{1, 1, 2, 2});
    w[0] = 1;  // [k=0][ci=0][co=0]
    w[3] = 1;  // [k=0][ci=1][co=1]
    TensorT<double> b(Shape{2});
    TensorT<double> y = conv_forward(x, w, b, {1, 1}, Padding::Same);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        CHECK(y[i] == doctest::Approx(x[i]));
    }
}

TEST_CASE("conv: 3x3 ones kernel on constant image, valid padding") {
    TensorT<double> x = TensorT<double>::full(Shape{1, 5, 5, 1}, 1.0);
    TensorT<double> w = TensorT<double>::full(Shape{3, 3, 1, 1}, 1.0);
    TensorT<double> b(Shape{1});
    TensorT<double> y = conv_forward(x, w, b, {1, 1}, Padding::Valid);
    REQUIRE(y.shape() == Shape{1, 3, 3, 1});
    for (int64_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] == doctest::Approx(9.0));
    }
}

TEST_CASE("conv: gradients match central differences") {
    // 4x4 input, 2 -> 3 channels, via a single-conv graph.
    Graph g;
    LayerSpec input;
    input.kind = LayerKind::Input;
    input.name = "input";
    g.input = g.add(std::move(input));
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.name = "conv";
    conv.inputs = {g.input};
    conv.kernel = {3, 3};
    conv.stride = {1, 1};
    conv.padding = Padding::Same;
    conv.filters = 3;
    g.output = g.add(std::move(conv));

    ParamStore<double> params;
    Rng rng(7);
    TensorT<double> w(Shape{3, 3, 2, 3});
    for (int64_t i = 0; i < w.size(); ++i) {
        w[i] = rng.uniform(-0.5, 0.5);
    }
    TensorT<double> b(Shape{3});
    for (int64_t i = 0; i < b.size(); ++i) {
        b[i] = rng.uniform(-0.1, 0.1);
    }
    params.values.emplace("conv.w", std::move(w));
    params.values.emplace("conv.b", std::move(b));
    params.trainable = {"conv.w", "conv.b"};

    TensorT<double> x = random_input64({4, 4, 2}, 2, 8);
    GradCheckReport report = grad_check(g, params, x, linear_probe_loss(1), 1e-5, false);
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("soft dice: identity, disjoint closed form, gradient") {
    // pred == target (binary) -> 0.
    TensorT<double> target(Shape{1, 4, 4, 1});
    for (int64_t i = 0; i < 6; ++i) {
        target[i] = 1.0;
    }
    auto same = soft_dice_loss(target, target, 1.0);
    CHECK(same.value == doctest::Approx(0.0).epsilon(1e-6));

    // Disjoint masks with N foreground voxels each: 1 - 1/(2N+1).
    const int64_t n = 5;
    TensorT<double> a(Shape{1, 16, 1}), b(Shape{1, 16, 1});
    for (int64_t i = 0; i < n; ++i) {
        a[i] = 1.0;
        b[15 - i] = 1.0;
    }
    auto disjoint = soft_dice_loss(a, b, 1.0);
    CHECK(disjoint.value == doctest::Approx(1.0 - 1.0 / (2 * n + 1)).epsilon(1e-9));

    // Gradient vs finite differences on random (pred, target).
    Rng rng(3);
    TensorT<double> pred(Shape{2, 3, 3, 1}), truth(Shape{2, 3, 3, 1});
    for (int64_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(0.05, 0.95);
        truth[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    auto loss = soft_dice_loss(pred, truth, 1.0);
    double h = 1e-6;
    double worst = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        TensorT<double> plus = pred, minus = pred;
        plus[i] += h;
        minus[i] -= h;
        double numeric =
            (soft_dice_loss(plus, truth, 1.0).value - soft_dice_loss(minus, truth, 1.0).value) /
            (2 * h);
        worst = std::max(worst,
                         std::abs(numeric - loss.grad[i]) /
                             std::max({std::abs(numeric), std::abs(loss.grad[i]), 1e-3}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("binary crossentropy: value and gradient") {
    Rng rng(5);
    TensorT<double> pred(Shape{2, 4, 1}), truth(Shape{2, 4, 1});
    for (int64_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(0.1, 0.9);
        truth[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    auto loss = binary_crossentropy_loss(pred, truth);
    double manual = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        manual += -(truth[i] * std::log(pred[i]) + (1 - truth[i]) * std::log(1 - pred[i]));
    }
    manual /= static_cast<double>(pred.size());
    CHECK(loss.value == doctest::Approx(manual).epsilon(1e-12));

    double h = 1e-6, worst = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        TensorT<double> plus = pred, minus = pred;
        plus[i] += h;
        minus[i] -= h;
        double numeric = (binary_crossentropy_loss(plus, truth).value -
                          binary_crossentropy_loss(minus, truth).value) /
                         (2 * h);
        worst = std::max(worst,
                         std::abs(numeric - loss.grad[i]) /
                             std::max({std::abs(numeric), std::abs(loss.grad[i]), 1e-3}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("adam: one step matches the closed-form update") {
    ParamStore<float> params;
    params.values.emplace("theta", Tensor(Shape{1}, {1.0f}));
    params.trainable = {"theta"};
    ParamStore<float> grads;
    grads.values.emplace("theta", Tensor(Shape{1}, {1.0f}));  // d(theta^2/2)/dtheta at 1

    std::map<std::string, Tensor> moments;
    optimizer_step(params, grads, OptimizerKind::Adam, 0.1, 1, moments);

    // m=0.1, v=0.001; bias-corrected m_hat=1, v_hat=1.
    double expected = 1.0 - 0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
    CHECK(params.at("theta")[0] == doctest::Approx(expected).epsilon(1e-7));
    CHECK(moments.at("theta.m")[0] == doctest::Approx(0.1f));
    CHECK(moments.at("theta.v")[0] == doctest::Approx(0.001f));
}

TEST_CASE("sgd step and zero learning rate") {
    ParamStore<float> params;
    params.values.emplace("w", Tensor(Shape{2}, {1.0f, -2.0f}));
    params.trainable = {"w"};
    ParamStore<float> grads;
    grads.values.emplace("w", Tensor(Shape{2}, {0.5f, 0.25f}));
    std::map<std::string, Tensor> moments;

    optimizer_step(params, grads, OptimizerKind::Sgd, 0.1, 1, moments);
    CHECK(params.at("w")[0] == doctest::Approx(0.95f));
    CHECK(params.at("w")[1] == doctest::Approx(-2.025f));

    Tensor before = params.at("w");
    for (int step = 2; step < 10; ++step) {
        optimizer_step(params, grads, OptimizerKind::Adam, 0.0, step, moments);
    }
    CHECK(bitwise_equal(params.at("w"), before));
}

TEST_CASE("build_unet: conv count is 18 for the depth-4 cascade architecture") {
    UNetConfig cfg;
    cfg.input_shape = {32, 32, 32, 3};
    cfg.pool_size = {2, 2, 2};
    cfg.kernel_size = {5, 5, 5};
    cfg.depth = 4;
    cfg.max_filter = 256;
    cfg.downsize_filters_factor = 1;
    cfg.initial_learning_rate = 0.0001;
    Model m = build_unet(cfg);
    CHECK(m.main_conv_count() == 18);
}

TEST_CASE("build_unet: conv count law 4*depth+2 for depths 1..5") {
    for (int64_t depth = 1; depth <= 5; ++depth) {
        UNetConfig cfg;
        int64_t extent = int64_t{1} << depth;
        cfg.input_shape = {extent, extent, 1};
        cfg.pool_size = {2, 2};
        cfg.kernel_size = {3, 3};
        cfg.depth = depth;
        cfg.max_filter = int64_t{1} << (depth - 1);
        Model m = build_unet(cfg);
        CHECK(m.main_conv_count() == 4 * depth + 2);
    }
}

TEST_CASE("build_unet: filter schedule and bottleneck extent for the 64x64x8 config") {
    UNetConfig cfg;
    cfg.input_shape = {64, 64, 8, 2};
    cfg.pool_size = {2, 2, 1};
    cfg.kernel_size = {3, 3, 3};
    cfg.depth = 4;
    cfg.max_filter = 512;
    cfg.downsize_filters_factor = 1;
    cfg.initial_learning_rate = 0.00001;
    cfg.validate();

    CHECK(cfg.stage_filters() == std::vector<int64_t>{64, 128, 256, 512});
    CHECK(cfg.bottleneck_filters() == 512);

    // Bottleneck spatial extent: each axis divided by its pool factor, depth
    // times.
    Shape extent = cfg.spatial_shape();
    for (int64_t d = 0; d < cfg.depth; ++d) {
        for (size_t a = 0; a < extent.size(); ++a) {
            extent[a] /= cfg.pool_size[a];
        }
    }
    CHECK(extent == Shape{4, 4, 8});

    // Parameters exist without building activations; spot-check one shape.
    Model m = build_unet(cfg);
    CHECK(m.params.at("enc0.b0.conv.w").shape() == Shape{3, 3, 3, 2, 64});
    CHECK(m.params.at("bottleneck.b0.conv.w").shape() == Shape{3, 3, 3, 512, 512});
}

TEST_CASE("build_unet: config invariants name the offending field") {
    UNetConfig cfg = tiny_2d();
    cfg.input_shape = {6, 4, 1};  // 6 not divisible by 2^1? it is; use depth 2
    cfg.depth = 2;
    cfg.max_filter = 4;
    try {
        cfg.validate();
        FAIL("expected InvalidConfig");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidConfig);
        CHECK(std::string(e.what()).find("input_shape axis 0") != std::string::npos);
    }

    UNetConfig even = tiny_2d();
    even.kernel_size = {2, 2};
    CHECK_THROWS_AS(even.validate(), Error);

    UNetConfig shallow = tiny_2d();
    shallow.max_filter = 1;
    shallow.depth = 2;
    shallow.input_shape = {8, 8, 1};
    CHECK_THROWS_AS(shallow.validate(), Error);
}

TEST_CASE("smallest legal network: forward shape and output range") {
    UNetConfig cfg = tiny_2d();
    Model m = build_unet(cfg, 1);
    Tensor x = random_input32(cfg.input_shape, 2, 2);
    Tensor y = m.forward(x);
    REQUIRE(y.shape() == Shape{2, 4, 4, 1});
    for (int64_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] >= 0.0f);
        CHECK(y[i] <= 1.0f);
    }
}

TEST_CASE("forward: determinism and batch independence") {
    Model m = build_unet(tiny_2d(BlockStyle::Plain, BlockOrder::ConvBnAct, true), 3);
    Tensor x = random_input32({4, 4, 1}, 1, 5);

    // Same input twice in one batch -> identical rows (inference mode).
    Tensor doubled(Shape{2, 4, 4, 1});
    std::copy(x.data(), x.data() + 16, doubled.data());
    std::copy(x.data(), x.data() + 16, doubled.data() + 16);
    Tensor y = m.forward(doubled);
    for (int64_t i = 0; i < 16; ++i) {
        REQUIRE(y[i] == y[16 + i]);
    }

    Tensor y1 = m.forward(doubled);
    CHECK(bitwise_equal(y, y1));
}

TEST_CASE("softmax head: per-voxel channel sums are 1") {
    UNetConfig cfg = tiny_2d();
    cfg.num_outputs = 3;
    Model m = build_unet(cfg, 4);
    Tensor x = random_input32({4, 4, 1}, 2, 6);
    Tensor y = m.forward(x);
    REQUIRE(y.shape() == Shape{2, 4, 4, 3});
    for (int64_t v = 0; v < 2 * 16; ++v) {
        double sum = y[v * 3] + y[v * 3 + 1] + y[v * 3 + 2];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("same-padded U-Nets preserve spatial dims over random legal configs") {
    Rng rng(31);
    for (int round = 0; round < 8; ++round) {
        UNetConfig cfg;
        bool is_3d = round % 2 == 0;
        int64_t depth = 1 + static_cast<int64_t>(rng.next_below(2));
        int64_t base = (int64_t{1} << depth) * (1 + static_cast<int64_t>(rng.next_below(2)));
        if (is_3d) {
            cfg.input_shape = {base, base, 1 + static_cast<int64_t>(rng.next_below(3)), 1};
            cfg.pool_size = {2, 2, 1};
            cfg.kernel_size = {3, 3, 1};
        } else {
            cfg.input_shape = {base, 2 * base, 1};
            cfg.pool_size = {2, 2};
            cfg.kernel_size = {3, 3};
        }
        cfg.depth = depth;
        cfg.max_filter = int64_t{2} << (depth - 1);
        cfg.num_outputs = 1 + static_cast<int64_t>(rng.next_below(2));
        cfg.block_style = static_cast<BlockStyle>(rng.next_below(5));
        Model m = build_unet(cfg, 100 + static_cast<uint64_t>(round));
        Tensor x = random_input32(cfg.input_shape, 1, 7);
        Tensor y = m.forward(x);
        Shape expected(cfg.input_shape.begin(), cfg.input_shape.end() - 1);
        expected.insert(expected.begin(), 1);
        expected.push_back(cfg.num_outputs);
        REQUIRE(y.shape() == expected);
    }
}

TEST_CASE("gradient suite: whole tiny nets across styles and orders") {
    struct CaseSpec {
        BlockStyle style;
        BlockOrder order;
        bool batch_norm;
        double tolerance;
    };
    std::vector<CaseSpec> specs{
        {BlockStyle::Plain, BlockOrder::ConvBnAct, true, 1e-5},
        {BlockStyle::Plain, BlockOrder::BnActConv, true, 1e-5},
        {BlockStyle::Plain, BlockOrder::ConvBnAct, false, 1e-5},
        {BlockStyle::Residual, BlockOrder::ConvBnAct, true, 1e-5},
        {BlockStyle::Residual, BlockOrder::BnActConv, true, 1e-5},
        {BlockStyle::Dense, BlockOrder::ConvBnAct, true, 1e-5},
        {BlockStyle::SE, BlockOrder::ConvBnAct, true, 1e-5},
        {BlockStyle::Inception, BlockOrder::ConvBnAct, true, 1e-5},
    };
    for (const auto& spec : specs) {
        CAPTURE(static_cast<int>(spec.style));
        CAPTURE(static_cast<int>(spec.order));
        Model m = build_unet(tiny_2d(spec.style, spec.order, spec.batch_norm), 11);
        ParamStore<double> params = m.params.cast<double>();
        TensorT<double> x = random_input64({4, 4, 1}, 2, 21);
        GradCheckReport report = grad_check(m.graph, params, x, linear_probe_loss(2), 1e-5, true);
        CAPTURE(report.worst);
        CHECK(report.max_rel_error < spec.tolerance);
    }
}

TEST_CASE("gradient suite: 3D net and frozen-BN mode") {
    Model m = build_unet(tiny_3d(), 13);
    ParamStore<double> params = m.params.cast<double>();
    // Nudge running stats off their init so frozen mode is nontrivial.
    for (auto& [name, tensor] : params.values) {
        if (name.find("running_mean") != std::string::npos) {
            tensor[0] = 0.3;
        }
        if (name.find("running_var") != std::string::npos) {
            tensor[0] = 1.7;
        }
    }
    TensorT<double> x = random_input64({4, 4, 2, 2}, 1, 22);
    GradCheckReport training = grad_check(m.graph, params, x, linear_probe_loss(3), 1e-5, true);
    CHECK(training.max_rel_error < 1e-5);
    GradCheckReport frozen = grad_check(m.graph, params, x, linear_probe_loss(3), 1e-5, false);
    CHECK(frozen.max_rel_error < 1e-6);
}

TEST_CASE("gradient suite: dice and crossentropy heads through the net") {
    Model m = build_unet(tiny_2d(), 17);
    ParamStore<double> params = m.params.cast<double>();
    TensorT<double> x = random_input64({4, 4, 1}, 2, 23);

    TensorT<double> target(Shape{2, 4, 4, 1});
    Rng rng(9);
    for (int64_t i = 0; i < target.size(); ++i) {
        target[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    auto dice_head = [&target](const TensorT<double>& y) {
        return soft_dice_loss(y, target, 1.0);
    };
    auto bce_head = [&target](const TensorT<double>& y) {
        return binary_crossentropy_loss(y, target);
    };
    CHECK(grad_check(m.graph, params, x, dice_head, 1e-5, true).max_rel_error < 1e-5);
    CHECK(grad_check(m.graph, params, x, bce_head, 1e-5, true).max_rel_error < 1e-5);
}

TEST_CASE("dropout: gradient check with a fixed mask, and inference identity") {
    UNetConfig cfg = tiny_2d();
    cfg.dropout = 0.3;
    Model m = build_unet(cfg, 19);
    ParamStore<double> params = m.params.cast<double>();
    TensorT<double> x = random_input64({4, 4, 1}, 1, 25);
    GradCheckReport report =
        grad_check(m.graph, params, x, linear_probe_loss(4), 1e-5, true, 77);
    CHECK(report.max_rel_error < 1e-5);

    // Inference mode ignores dropout entirely.
    Tensor xf = random_input32({4, 4, 1}, 1, 26);
    Tensor a = m.forward(xf, false, 1);
    Tensor b = m.forward(xf, false, 2);
    CHECK(bitwise_equal(a, b));
}

TEST_CASE("SE gate forced to one reproduces the plain block") {
    UNetConfig se_cfg = tiny_2d(BlockStyle::SE);
    UNetConfig plain_cfg = tiny_2d(BlockStyle::Plain);
    Model se = build_unet(se_cfg, 29);
    Model plain = build_unet(plain_cfg, 29);  // same seed: shared names match

    // sigmoid(100) is exactly 1.0f, so the scale becomes the identity.
    for (auto& [name, tensor] : se.params.values) {
        if (name.find(".se_fc2.w") != std::string::npos) {
            tensor.fill(0.0f);
        }
        if (name.find(".se_fc2.b") != std::string::npos) {
            tensor.fill(100.0f);
        }
    }
    Tensor x = random_input32({4, 4, 1}, 2, 30);
    CHECK(bitwise_equal(se.forward(x), plain.forward(x)));
}

TEST_CASE("residual pair with zero second conv degenerates to the first block") {
    UNetConfig cfg = tiny_2d(BlockStyle::Residual, BlockOrder::ConvBnAct, true, 2);
    REQUIRE(cfg.stage_filters()[0] == 2);  // input channels == filters: identity skip
    Model m = build_unet(cfg, 33);
    for (auto& [name, tensor] : m.params.values) {
        if (name.find("enc0.b1.conv.") != std::string::npos) {
            tensor.fill(0.0f);
        }
    }

    Tensor x = random_input32({4, 4, 2}, 1, 31);
    Executor<float> exec(m.graph, m.params);
    ForwardTrace<float> trace;
    exec.forward(x, false, 0, &trace);

    int first_block = -1, pair_out = -1;
    for (size_t i = 0; i < m.graph.nodes.size(); ++i) {
        if (m.graph.nodes[i].name == "enc0.b0.act") {
            first_block = static_cast<int>(i);
        }
        if (m.graph.nodes[i].name == "enc0.b.out_act") {
            pair_out = static_cast<int>(i);
        }
    }
    REQUIRE(first_block >= 0);
    REQUIRE(pair_out >= 0);
    // relu(relu(h) + 0) == relu(h)
    CHECK(bitwise_equal(trace.nodes[static_cast<size_t>(pair_out)].output,
                        trace.nodes[static_cast<size_t>(first_block)].output));
}

TEST_CASE("model save/load: bit-exact forward and structured errors") {
    Model m = build_unet(tiny_2d(BlockStyle::SE), 37);
    m.state.step = 12;
    m.state.best_loss = 0.25;
    m.state.moments.emplace("enc0.b0.conv.w.m",
                            Tensor(m.params.at("enc0.b0.conv.w").shape()));

    fs::path path = fs::temp_directory_path() / "neuropipe-model.dnmd";
    save_model(m, path.string());
    Model loaded = load_model(path.string());

    CHECK(loaded.config == m.config);
    CHECK(loaded.state.step == 12);
    CHECK(loaded.state.best_loss == doctest::Approx(0.25));
    CHECK(loaded.state.moments.count("enc0.b0.conv.w.m") == 1);

    Tensor x = random_input32({4, 4, 1}, 2, 38);
    CHECK(bitwise_equal(m.forward(x), loaded.forward(x)));

    // Truncation and corruption produce structured errors.
    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    }();
    fs::path bad = fs::temp_directory_path() / "neuropipe-model-bad.dnmd";

    std::ofstream(bad, std::ios::binary).write(bytes.data(), 100);
    CHECK_THROWS_AS(load_model(bad.string()), Error);

    auto corrupt = bytes;
    corrupt[corrupt.size() - 3] ^= 0x11;
    std::ofstream(bad, std::ios::binary)
        .write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    try {
        load_model(bad.string());
        FAIL("expected ChecksumMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ChecksumMismatch);
    }

    auto not_model = bytes;
    not_model[0] = 'X';
    std::ofstream(bad, std::ios::binary)
        .write(not_model.data(), static_cast<std::streamsize>(not_model.size()));
    try {
        load_model(bad.string());
        FAIL("expected BadMagic");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadMagic);
    }
}

TEST_CASE("config JSON round trip") {
    UNetConfig cfg = tiny_2d(BlockStyle::Inception, BlockOrder::BnActConv);
    cfg.cost_function = CostFunction::BinaryCrossentropy;
    cfg.optimizer = OptimizerKind::Sgd;
    UNetConfig back = UNetConfig::from_json_text(cfg.to_json_text());
    CHECK(back == cfg);
    CHECK_THROWS_AS(UNetConfig::from_json_text("{}"), Error);
}

TEST_CASE("training: loss decreases on the disk task and runs are bit-reproducible") {
    auto [images, masks] = disk_task();
    DataCollection c({DataGroup{"input_data", {"img"}}, DataGroup{"ground_truth", {"mask"}}});
    for (size_t i = 0; i < images.size(); ++i) {
        Case kase{"d" + std::to_string(i), {}};
        kase.sources.emplace("input_data",
                             std::vector<ChannelSource>{AffineVolume(images[i])});
        kase.sources.emplace("ground_truth",
                             std::vector<ChannelSource>{AffineVolume(masks[i])});
        c.add_case(std::move(kase));
    }
    SampleStream stream = expand(c, {}, 0);

    TrainOptions opt;
    opt.batch_size = 2;
    opt.steps = 40;
    opt.seed = 5;

    Model m1 = build_unet(disk_config(), 5);
    auto records1 = net::train(m1, stream, opt);
    REQUIRE(records1.size() == 40);
    CHECK(records1.back().loss < records1.front().loss);

    Model m2 = build_unet(disk_config(), 5);
    auto records2 = net::train(m2, stream, opt);
    for (const auto& [name, tensor] : m1.params.values) {
        REQUIRE(bitwise_equal(tensor, m2.params.at(name)));
    }
    for (size_t i = 0; i < records1.size(); ++i) {
        REQUIRE(records1[i].loss == records2[i].loss);
    }
}

TEST_CASE("training: resume from checkpoint equals an uninterrupted run") {
    auto [images, masks] = disk_task();
    DataCollection c({DataGroup{"input_data", {"img"}}, DataGroup{"ground_truth", {"mask"}}});
    for (size_t i = 0; i < images.size(); ++i) {
        Case kase{"d" + std::to_string(i), {}};
        kase.sources.emplace("input_data",
                             std::vector<ChannelSource>{AffineVolume(images[i])});
        kase.sources.emplace("ground_truth",
                             std::vector<ChannelSource>{AffineVolume(masks[i])});
        c.add_case(std::move(kase));
    }
    SampleStream stream = expand(c, {}, 0);

    fs::path ckpt = fs::temp_directory_path() / "neuropipe-resume.dnmd";

    TrainOptions full;
    full.batch_size = 2;
    full.steps = 24;
    full.seed = 9;
    Model straight = build_unet(disk_config(), 9);
    net::train(straight, stream, full);

    TrainOptions first_half = full;
    first_half.steps = 11;
    first_half.checkpoint_path = ckpt.string();
    Model interrupted = build_unet(disk_config(), 9);
    net::train(interrupted, stream, first_half);

    Model resumed = load_model(ckpt.string());
    CHECK(resumed.state.step == 11);
    TrainOptions second_half = full;  // same absolute step target
    net::train(resumed, stream, second_half);

    for (const auto& [name, tensor] : straight.params.values) {
        REQUIRE(bitwise_equal(tensor, resumed.params.at(name)));
    }
}

TEST_CASE("training: non-finite loss aborts with a structured error") {
    Tensor image(Shape{4, 4, 1});
    image[0] = std::numeric_limits<float>::quiet_NaN();
    Tensor mask(Shape{4, 4, 1});
    mask[5] = 1.0f;
    DataCollection c({DataGroup{"input_data", {"img"}}, DataGroup{"ground_truth", {"mask"}}});
    Case kase{"n", {}};
    kase.sources.emplace("input_data", std::vector<ChannelSource>{AffineVolume(image)});
    kase.sources.emplace("ground_truth", std::vector<ChannelSource>{AffineVolume(mask)});
    c.add_case(std::move(kase));
    SampleStream stream = expand(c, {}, 0);

    Model m = build_unet(tiny_2d(), 1);
    TrainOptions opt;
    opt.batch_size = 1;
    opt.steps = 3;
    try {
        net::train(m, stream, opt);
        FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteLoss);
    }
}

TEST_CASE("lr=0 training leaves parameters bit-identical") {
    auto [images, masks] = disk_task();
    DataCollection c({DataGroup{"input_data", {"img"}}, DataGroup{"ground_truth", {"mask"}}});
    Case kase{"d0", {}};
    kase.sources.emplace("input_data", std::vector<ChannelSource>{AffineVolume(images[0])});
    kase.sources.emplace("ground_truth", std::vector<ChannelSource>{AffineVolume(masks[0])});
    c.add_case(std::move(kase));
    SampleStream stream = expand(c, {}, 0);

    UNetConfig cfg = disk_config();
    cfg.initial_learning_rate = 0.0;
    cfg.batch_norm = false;  // running-stat updates are training state, not params
    Model m = build_unet(cfg, 3);
    std::map<std::string, Tensor> before = m.params.values;

    TrainOptions opt;
    opt.batch_size = 1;
    opt.steps = 5;
    net::train(m, stream, opt);
    for (const auto& [name, tensor] : before) {
        REQUIRE(bitwise_equal(tensor, m.params.at(name)));
    }
}
