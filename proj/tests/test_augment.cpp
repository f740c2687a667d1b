#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "neuropipe/augment.hpp"

using namespace neuropipe;
namespace fs = std::filesystem;

namespace {

AffineVolume coordinate_volume(Shape spatial, int64_t channels = 1) {
    Shape shape = spatial;
    shape.push_back(channels);
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(i);
    }
    return AffineVolume(std::move(t));
}

AffineVolume binary_blob(Shape spatial, const std::vector<int64_t>& on_flat) {
    Shape shape = spatial;
    shape.push_back(1);
    Tensor t(shape);
    for (int64_t i : on_flat) {
        t[i] = 1.0f;
    }
    return AffineVolume(std::move(t));
}

DataCollection two_case_collection(Shape spatial = {8, 8, 8}, int64_t channels = 2) {
    std::vector<std::string> labels;
    for (int64_t c = 0; c < channels; ++c) {
        labels.push_back("ch" + std::to_string(c));
    }
    DataCollection c({DataGroup{"input_data", labels}, DataGroup{"ground_truth", {"mask"}}});
    for (int i = 0; i < 2; ++i) {
        Case kase{"p0" + std::to_string(i + 1), {}};
        std::vector<ChannelSource> inputs;
        for (int64_t ch = 0; ch < channels; ++ch) {
            Rng rng(static_cast<uint64_t>(i * 10 + ch));
            Shape shape = spatial;
            shape.push_back(1);
            Tensor t(shape);
            for (int64_t k = 0; k < t.size(); ++k) {
                t[k] = static_cast<float>(rng.uniform(0, 5));
            }
            inputs.emplace_back(AffineVolume(std::move(t)));
        }
        kase.sources.emplace("input_data", std::move(inputs));
        // A small centered blob as the label.
        Shape mask_shape = spatial;
        mask_shape.push_back(1);
        Tensor mask(mask_shape);
        Shape strides = row_major_strides(spatial);
        int64_t center = 0;
        for (size_t a = 0; a < spatial.size(); ++a) {
            center += (spatial[a] / 2) * strides[a];
        }
        mask[center] = 1.0f;
        mask[center + 1] = 1.0f;
        kase.sources.emplace("ground_truth", std::vector<ChannelSource>{AffineVolume(std::move(mask))});
        c.add_case(std::move(kase));
    }
    return c;
}

Sample one_sample(const AffineVolume& input, const AffineVolume& truth) {
    Sample s;
    s.id = "fixture";
    s.groups.emplace("input_data", input);
    s.groups.emplace("ground_truth", truth);
    return s;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
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

TEST_CASE("axis transforms: inverse and composition laws") {
    Tensor t = coordinate_volume({3, 4, 5}).data();
    auto group = enumerate_flip_rotate_group({3, 4, 5}, {});
    for (const AxisTransform& at : group) {
        Tensor forward = apply_axis_transform(t, at);
        Tensor back = apply_axis_transform(forward, inverse(at));
        REQUIRE(tensors_equal(back, t));
    }
    // Composition: apply(compose(b, a)) == apply(b, apply(a)).
    auto square_group = enumerate_flip_rotate_group({4, 4, 1}, {0, 1});
    Tensor sq = coordinate_volume({4, 4, 1}).data();
    for (size_t i = 0; i < square_group.size(); ++i) {
        for (size_t j = 0; j < std::min<size_t>(square_group.size(), 4); ++j) {
            Tensor two_step =
                apply_axis_transform(apply_axis_transform(sq, square_group[i]), square_group[j]);
            Tensor one_step =
                apply_axis_transform(sq, compose(square_group[j], square_group[i]));
            REQUIRE(tensors_equal(two_step, one_step));
        }
    }
}

TEST_CASE("flips are involutions") {
    Tensor t = coordinate_volume({5, 6, 7}, 2).data();
    for (int axis = 0; axis < 3; ++axis) {
        AxisTransform flip = identity_transform(3);
        flip.reversed[static_cast<size_t>(axis)] = true;
        Tensor twice = apply_axis_transform(apply_axis_transform(t, flip), flip);
        REQUIRE(tensors_equal(twice, t));
    }
}

TEST_CASE("dihedral-8: asymmetric 2D fixture has exactly 8 distinct images") {
    // [X, Y, C] with C=1; values chosen with no symmetry.
    Tensor t(Shape{4, 4, 1});
    Rng rng(99);
    for (int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(rng.next_below(1 << 20));
    }
    auto group = enumerate_flip_rotate_group({4, 4}, {});
    CHECK(group.size() == 8);

    std::set<std::vector<float>> images;
    for (const AxisTransform& at : group) {
        images.insert(apply_axis_transform(t, at).storage());
    }
    CHECK(images.size() == 8);

    // 3D cubic group has 48 elements; non-cubic shapes drop the axis swaps.
    CHECK(enumerate_flip_rotate_group({4, 4, 4}, {}).size() == 48);
    CHECK(enumerate_flip_rotate_group({4, 4, 6}, {}).size() == 16);
}

TEST_CASE("flip_rotate: identity element leaves the sample unchanged") {
    AffineVolume input = coordinate_volume({4, 4, 2});
    AffineVolume truth = binary_blob({4, 4, 2}, {5});
    Sample s = one_sample(input, truth);

    // Scan seeds until the drawn element is the identity.
    for (uint64_t seed = 0;; ++seed) {
        REQUIRE(seed < 2000);
        Rng rng(seed);
        Sample out = flip_rotate(s, {}, rng);
        nlohmann::json details = nlohmann::json::parse(out.provenance.back().details);
        auto src = details.at("src").get<std::vector<int>>();
        auto rev = details.at("reversed").get<std::vector<int>>();
        bool is_identity = true;
        for (size_t a = 0; a < src.size(); ++a) {
            if (src[a] != static_cast<int>(a) || rev[a] != 0) {
                is_identity = false;
            }
        }
        if (is_identity) {
            CHECK(tensors_equal(out.groups.at("input_data").data(), input.data()));
            CHECK(tensors_equal(out.groups.at("ground_truth").data(), truth.data()));
            break;
        }
    }
}

TEST_CASE("intensity_scale_shift: identity, arithmetic, statistics") {
    AffineVolume input = coordinate_volume({4, 4, 1});
    AffineVolume truth = binary_blob({4, 4, 1}, {3});
    Sample s = one_sample(input, truth);

    Rng rng(1);
    Sample same = intensity_scale_shift(s, 1, 1, 0, 0, rng);
    CHECK(tensors_equal(same.groups.at("input_data").data(), input.data()));

    Tensor fixed(Shape{1, 1, 1});
    fixed[0] = 1.5f;
    Sample tiny = one_sample(AffineVolume(fixed), truth);
    (void)tiny;
    Rng rng2(2);
    Sample scaled = intensity_scale_shift(one_sample(AffineVolume(fixed), binary_blob({1, 1}, {0})),
                                          2, 2, 3, 3, rng2);
    CHECK(scaled.groups.at("input_data").data()[0] == doctest::Approx(6.0f));
    // ground_truth untouched
    CHECK(tensors_equal(scaled.groups.at("ground_truth").data(), binary_blob({1, 1}, {0}).data()));

    // Mean of drawn scales approaches (a+b)/2.
    double sum = 0;
    const int draws = 10000;
    Rng rng3(3);
    for (int i = 0; i < draws; ++i) {
        Sample out = intensity_scale_shift(s, 0.5, 1.5, 0, 0, rng3);
        nlohmann::json details = nlohmann::json::parse(out.provenance.back().details);
        sum += details.at("scales")[0].get<double>();
    }
    double mean = sum / draws;
    double sigma = (1.0 / std::sqrt(12.0)) / std::sqrt(draws);  // U[0.5,1.5] has sd 1/sqrt(12)
    CHECK(std::abs(mean - 1.0) <= 3 * sigma);
}

TEST_CASE("extract_patches: whole-volume patch, label containment, fallback") {
    AffineVolume input = coordinate_volume({6, 6, 4});
    AffineVolume truth = binary_blob({6, 6, 4}, {(2 * 6 + 3) * 4 + 1});
    Sample s = one_sample(input, truth);

    Rng rng(5);
    auto whole = extract_patches(s, {6, 6, 4}, 1, PatchCriteria{}, rng);
    REQUIRE(whole.size() == 1);
    CHECK(tensors_equal(whole[0].groups.at("input_data").data(), input.data()));

    // label_fraction 1: every patch contains the single labeled voxel.
    PatchCriteria criteria;
    criteria.label_fraction = 1.0;
    Rng rng2(6);
    auto patches = extract_patches(s, {3, 3, 2}, 40, criteria, rng2);
    REQUIRE(patches.size() == 40);
    for (const Sample& p : patches) {
        const Tensor& mask = p.groups.at("ground_truth").data();
        double total = 0;
        for (int64_t i = 0; i < mask.size(); ++i) {
            total += mask[i];
        }
        REQUIRE(total >= 1.0);
        // Paired crop: input and label were cut identically.
        REQUIRE(p.groups.at("input_data").spatial_shape() == Shape{3, 3, 2});
    }

    // Empty label volume: falls back to uniform with a provenance note.
    Sample empty_label = one_sample(input, binary_blob({6, 6, 4}, {}));
    Rng rng3(7);
    auto fallback = extract_patches(empty_label, {3, 3, 2}, 4, criteria, rng3);
    nlohmann::json details = nlohmann::json::parse(fallback[0].provenance.back().details);
    CHECK(details.at("mode").get<std::string>() == "uniform_no_label_fallback");

    // min_label_voxels beyond what exists: the 100-attempt cap still accepts.
    criteria.min_label_voxels = 50;
    Rng rng4(8);
    auto capped = extract_patches(s, {3, 3, 2}, 2, criteria, rng4);
    CHECK(capped.size() == 2);

    Rng rng5(9);
    CHECK_THROWS_AS(extract_patches(s, {7, 6, 4}, 1, PatchCriteria{}, rng5), Error);
}

TEST_CASE("extract_patches: uniform corners cover the grid evenly") {
    AffineVolume input = coordinate_volume({12, 12, 1});
    AffineVolume truth = binary_blob({12, 12, 1}, {});
    Sample s = one_sample(input, truth);

    // 5 positions per axis (12 - 8 + 1); chi-squared on per-axis marginals.
    const int draws = 4000;
    std::vector<int> counts_x(5, 0), counts_y(5, 0);
    Rng rng(11);
    auto patches = extract_patches(s, {8, 8, 1}, draws, PatchCriteria{}, rng);
    for (const Sample& p : patches) {
        nlohmann::json details = nlohmann::json::parse(p.provenance.back().details);
        auto corner = details.at("corner").get<std::vector<int64_t>>();
        ++counts_x[static_cast<size_t>(corner[0])];
        ++counts_y[static_cast<size_t>(corner[1])];
    }
    double expected = draws / 5.0;
    for (const auto& counts : {counts_x, counts_y}) {
        double chi2 = 0;
        for (int c : counts) {
            chi2 += (c - expected) * (c - expected) / expected;
        }
        // 4 degrees of freedom; 99.9th percentile is 18.47.
        CHECK(chi2 < 18.47);
    }
}

TEST_CASE("channel_dropout: semantics and statistics") {
    AffineVolume input = coordinate_volume({4, 4, 1}, 2);
    AffineVolume truth = binary_blob({4, 4, 1}, {2});
    Sample s = one_sample(input, truth);

    Rng rng(1);
    Sample keep = channel_dropout(s, 0.0, rng);
    CHECK(tensors_equal(keep.groups.at("input_data").data(), input.data()));

    // Find a seed that drops channel 0, then verify masking semantics.
    for (uint64_t seed = 0;; ++seed) {
        REQUIRE(seed < 2000);
        Rng r(seed);
        Sample out = channel_dropout(s, 0.5, r);
        nlohmann::json details = nlohmann::json::parse(out.provenance.back().details);
        auto dropped = details.at("dropped").get<std::vector<int>>();
        if (dropped[0] == 1 && dropped[1] == 0) {
            const Tensor& t = out.groups.at("input_data").data();
            for (int64_t vx = 0; vx < 16; ++vx) {
                REQUIRE(t[vx * 2] == 0.0f);
                REQUIRE(t[vx * 2 + 1] == input.data()[vx * 2 + 1]);
            }
            break;
        }
    }

    // Drop frequency approaches p conditioned on the all-dropped redraw.
    const int draws = 10000;
    const double p = 0.3;
    int dropped0 = 0;
    Rng r2(3);
    for (int i = 0; i < draws; ++i) {
        Sample out = channel_dropout(s, p, r2);
        nlohmann::json details = nlohmann::json::parse(out.provenance.back().details);
        dropped0 += details.at("dropped")[0].get<int>();
    }
    // Conditioned on not-all-dropped: P(drop) = p(1-p)/(1-p^2) = p/(1+p).
    double expected = p / (1 + p);
    double sigma = std::sqrt(expected * (1 - expected) / draws);
    CHECK(std::abs(static_cast<double>(dropped0) / draws - expected) <= 3 * sigma);

    Sample single = one_sample(coordinate_volume({4, 4, 1}, 1), truth);
    Rng r3(4);
    CHECK_THROWS_AS(channel_dropout(single, 0.5, r3), Error);
}

TEST_CASE("downsample_nn: index mapping, composition, affine") {
    AffineVolume input = coordinate_volume({8, 8, 8});
    AffineVolume truth = binary_blob({8, 8, 8}, {0});
    Sample s = one_sample(input, truth);

    Sample half = downsample_nn(s, 2);
    const Tensor& t = half.groups.at("input_data").data();
    REQUIRE(t.shape() == Shape{4, 4, 4, 1});
    for (int64_t x = 0; x < 4; ++x) {
        for (int64_t y = 0; y < 4; ++y) {
            for (int64_t z = 0; z < 4; ++z) {
                float expected = input.data()[((2 * x * 8) + 2 * y) * 8 + 2 * z];
                REQUIRE(t[(x * 4 + y) * 4 + z] == expected);
            }
        }
    }
    CHECK(half.groups.at("input_data").spacing()[0] == doctest::Approx(2.0));

    Sample quarter_two_steps = downsample_nn(half, 2);
    Sample quarter_direct = downsample_nn(s, 4);
    REQUIRE(tensors_equal(quarter_two_steps.groups.at("input_data").data(),
                          quarter_direct.groups.at("input_data").data()));

    // Constant volumes stay constant.
    AffineVolume constant(Tensor::full(Shape{8, 8, 8, 1}, 3.0f));
    Sample const_half = downsample_nn(one_sample(constant, truth), 2);
    for (int64_t i = 0; i < const_half.groups.at("input_data").data().size(); ++i) {
        CHECK(const_half.groups.at("input_data").data()[i] == 3.0f);
    }
}

TEST_CASE("expand: count law over random node lists") {
    DataCollection c = two_case_collection();
    Rng rng(17);
    for (int round = 0; round < 20; ++round) {
        std::vector<AugmentationNode> nodes;
        int64_t expected = static_cast<int64_t>(c.case_count());
        int n_nodes = static_cast<int>(rng.next_below(4));
        for (int k = 0; k < n_nodes; ++k) {
            auto multiplicity = static_cast<int64_t>(1 + rng.next_below(4));
            switch (rng.next_below(3)) {
                case 0:
                    nodes.push_back(make_augmentation_node(FlipAug{}, multiplicity));
                    break;
                case 1:
                    nodes.push_back(
                        make_augmentation_node(IntensityScaleAug{0.9, 1.1}, multiplicity));
                    break;
                default: {
                    PatchExtractAug patch;
                    patch.shape = {4, 4, 4};
                    nodes.push_back(make_augmentation_node(std::move(patch), multiplicity));
                    break;
                }
            }
            expected *= multiplicity;
        }
        SampleStream stream = expand(c, std::move(nodes), 1);
        CHECK(stream.size() == expected);
    }
}

TEST_CASE("expand: 3x8x10 example and empty node list") {
    DataCollection c = two_case_collection();
    // Add a third case to match the 3-case count law example.
    {
        Case kase{"p03", {}};
        std::vector<ChannelSource> inputs;
        inputs.emplace_back(coordinate_volume({8, 8, 8}));
        inputs.emplace_back(coordinate_volume({8, 8, 8}));
        kase.sources.emplace("input_data", std::move(inputs));
        kase.sources.emplace("ground_truth",
                             std::vector<ChannelSource>{binary_blob({8, 8, 8}, {7})});
        c.add_case(std::move(kase));
    }
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(FlipAug{}, 8));
    PatchExtractAug patch;
    patch.shape = {4, 4, 4};
    nodes.push_back(make_augmentation_node(std::move(patch), 10));
    SampleStream stream = expand(c, nodes, 0);
    CHECK(stream.size() == 240);

    SampleStream raw = expand(c, {}, 0);
    CHECK(raw.size() == 3);
    Sample first = raw.materialize(0);
    CHECK(first.id == "p01");
    CHECK(first.provenance.empty());
}

TEST_CASE("expand: determinism and seed sensitivity") {
    DataCollection c = two_case_collection();
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(FlipAug{}, 3));
    nodes.push_back(make_augmentation_node(IntensityScaleAug{0.5, 1.5}, 2));

    SampleStream a = expand(c, nodes, 42);
    SampleStream b = expand(c, nodes, 42);
    SampleStream other = expand(c, nodes, 43);
    bool any_differ = false;
    for (int64_t i = 0; i < a.size(); ++i) {
        Sample sa = a.materialize(i);
        Sample sb = b.materialize(i);
        Sample sc = other.materialize(i);
        for (const auto& [group, vol] : sa.groups) {
            REQUIRE(tensors_equal(vol.data(), sb.groups.at(group).data()));
        }
        REQUIRE(sa.provenance.size() == sc.provenance.size());
        for (size_t k = 0; k < sa.provenance.size(); ++k) {
            if (sa.provenance[k].details != sc.provenance[k].details) {
                any_differ = true;
            }
        }
    }
    CHECK(any_differ);

    // Out-of-order materialization equals in-order.
    Sample last_first = a.materialize(a.size() - 1);
    for (int64_t i = 0; i < a.size() - 1; ++i) {
        a.materialize(i);
    }
    Sample last_again = a.materialize(a.size() - 1);
    for (const auto& [group, vol] : last_first.groups) {
        REQUIRE(tensors_equal(vol.data(), last_again.groups.at(group).data()));
    }
}

TEST_CASE("expand: spatial pairing via provenance inverse") {
    DataCollection c = two_case_collection();
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(FlipRotateAug{{0, 1}}, 6));
    SampleStream stream = expand(c, nodes, 5);

    for (int64_t i = 0; i < stream.size(); ++i) {
        Sample s = stream.materialize(i);
        nlohmann::json details = nlohmann::json::parse(s.provenance.back().details);
        AxisTransform at;
        at.src = details.at("src").get<std::vector<int>>();
        for (int r : details.at("reversed").get<std::vector<int>>()) {
            at.reversed.push_back(r != 0);
        }
        const Case& kase = c.case_by_id(s.id);
        (void)kase;
        const Tensor& raw_input = c.case_tensor(s.id, "input_data");
        const Tensor& raw_truth = c.case_tensor(s.id, "ground_truth");
        Tensor undone_input = apply_axis_transform(s.groups.at("input_data").data(), inverse(at));
        Tensor undone_truth =
            apply_axis_transform(s.groups.at("ground_truth").data(), inverse(at));
        REQUIRE(tensors_equal(undone_input, raw_input));
        REQUIRE(tensors_equal(undone_truth, raw_truth));
    }
}

TEST_CASE("expand: label preservation through spatial nodes") {
    DataCollection c = two_case_collection();
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(FlipAug{}, 2));
    PatchExtractAug patch;
    patch.shape = {4, 4, 4};
    patch.criteria.label_fraction = 0.5;
    nodes.push_back(make_augmentation_node(std::move(patch), 4));
    nodes.push_back(make_augmentation_node(DownsampleAug{2}, 1));

    SampleStream stream = expand(c, nodes, 9);
    for (int64_t i = 0; i < stream.size(); ++i) {
        Sample s = stream.materialize(i);
        const Tensor& mask = s.groups.at("ground_truth").data();
        for (int64_t k = 0; k < mask.size(); ++k) {
            REQUIRE((mask[k] == 0.0f || mask[k] == 1.0f));
        }
    }
}

TEST_CASE("expand: bind-time validation") {
    DataCollection c = two_case_collection();
    PatchExtractAug big;
    big.shape = {9, 8, 8};
    std::vector<AugmentationNode> nodes{make_augmentation_node(std::move(big), 1)};
    try {
        expand(c, nodes, 0);
        FAIL("expected PatchLargerThanVolume");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PatchLargerThanVolume);
    }

    DataCollection single = two_case_collection({8, 8, 8}, 1);
    std::vector<AugmentationNode> drop{make_augmentation_node(ChannelDropoutAug{0.5}, 1)};
    try {
        expand(single, drop, 0);
        FAIL("expected SingleChannelDropout");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingleChannelDropout);
    }
}

TEST_CASE("expand_to_archive: counts, determinism, shuffle is a permutation") {
    DataCollection c = two_case_collection({6, 6, 6});
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(FlipAug{}, 4));

    fs::path dir = fs::temp_directory_path() / "neuropipe-aug-archive";
    fs::create_directories(dir);
    fs::path a_path = dir / "a.dnar";
    fs::path b_path = dir / "b.dnar";
    expand_to_archive(c, nodes, 3, a_path.string());
    expand_to_archive(c, nodes, 3, b_path.string());

    auto read_bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    };
    CHECK(read_bytes(a_path) == read_bytes(b_path));

    DataCollection archived = read_archive(a_path.string());
    CHECK(archived.case_count() == 8);

    // Multiset equality with the unshuffled stream.
    SampleStream stream = expand(c, nodes, 3);
    std::multiset<std::vector<float>> expected, got;
    for (int64_t i = 0; i < stream.size(); ++i) {
        expected.insert(stream.materialize(i).groups.at("input_data").data().storage());
    }
    for (const auto& kase : archived.cases()) {
        got.insert(archived.case_tensor(kase.id, "input_data").storage());
    }
    CHECK(expected == got);

    // Ids encode provenance.
    bool found = false;
    for (const auto& kase : archived.cases()) {
        if (kase.id.rfind("p01/aug", 0) == 0) {
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("augmentation JSON round trip") {
    std::string text = R"([
        {"kind":"flip","params":{"axes":[0,1]},"multiplicity":8},
        {"kind":"patch_extract","params":{"shape":[4,4,4],"count":50,"label_fraction":0.7},"multiplicity":50},
        {"kind":"intensity_scale","params":{"range":[0.9,1.1]},"multiplicity":2},
        {"kind":"channel_dropout","params":{"probability":0.25}},
        {"kind":"downsample_nn","params":{"factor":2}}
    ])";
    auto nodes = augmentation_from_json_text(text);
    REQUIRE(nodes.size() == 5);
    CHECK(nodes[0].kind() == "flip");
    CHECK(nodes[0].multiplicity == 8);
    CHECK(nodes[1].multiplicity == 50);
    CHECK(nodes[1].spatial());
    CHECK_FALSE(nodes[3].spatial());

    auto reparsed = augmentation_from_json_text(augmentation_to_json_text(nodes));
    REQUIRE(reparsed.size() == nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) {
        CHECK(reparsed[i].kind() == nodes[i].kind());
        CHECK(reparsed[i].multiplicity == nodes[i].multiplicity);
    }

    CHECK_THROWS_AS(augmentation_from_json_text(
                        R"([{"kind":"patch_extract","params":{"shape":[4],"count":3},"multiplicity":5}])"),
                    Error);
    CHECK_THROWS_AS(augmentation_from_json_text(R"([{"kind":"wat"}])"), Error);
}
