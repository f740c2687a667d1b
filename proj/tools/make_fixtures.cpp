// Regenerates the repo's bundled data/ directory: the synthetic head phantom,
// the tiny offline registry models (trained here, on the phantom), the
// registry manifest with their checksums, and a demo CSV.
//
//   neuropipe-make-fixtures --data data [--steps N]
//
// Everything is seeded, so reruns reproduce the same phantom bit-exactly;
// model bytes depend on the local float pipeline and are pinned by sha256 at
// generation time.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "neuropipe/nifti.hpp"
#include "neuropipe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace neuropipe;

namespace {

constexpr int64_t kNx = 48, kNy = 48, kNz = 16;

struct Phantom {
    AffineVolume flair, t1pre, t1post;
    AffineVolume brain_mask, wholetumor, enhancing;
};

// Analytic two-tissue head: ellipsoid brain inside a skull shell, plus a
// bright tumor blob with an enhancing core.
Phantom make_phantom() {
    Mat4 affine = Mat4::diagonal(1.0, 1.0, 2.0);
    Shape shape{kNx, kNy, kNz, 1};
    Tensor flair(shape), t1pre(shape), t1post(shape);
    Tensor brain(shape), whole(shape), enhancing(shape);

    auto ellipse = [](double x, double y, double z, double cx, double cy, double cz, double rx,
                      double ry, double rz) {
        double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (z - cz) / rz;
        return dx * dx + dy * dy + dz * dz;
    };

    int64_t i = 0;
    for (int64_t x = 0; x < kNx; ++x) {
        for (int64_t y = 0; y < kNy; ++y) {
            for (int64_t z = 0; z < kNz; ++z, ++i) {
                double head = ellipse(x, y, z, 23.5, 23.5, 7.5, 20, 18, 6.5);
                double core = ellipse(x, y, z, 23.5, 23.5, 7.5, 16, 14, 5.0);
                double tumor = ellipse(x, y, z, 30, 18, 8, 5.5, 5.0, 2.8);
                double enh = ellipse(x, y, z, 30, 18, 8, 3.0, 2.6, 1.6);

                bool in_brain = core <= 1.0;
                bool in_skull = head <= 1.0 && core > 1.0;
                bool in_tumor = tumor <= 1.0 && in_brain;
                bool in_enh = enh <= 1.0 && in_brain;

                // Smooth radial falloff keeps intensities non-constant.
                float shade = static_cast<float>(1.0 - 0.25 * core);
                flair[i] = in_tumor ? 150.0f : (in_brain ? 95.0f * shade
                                                         : (in_skull ? 35.0f : 0.0f));
                t1pre[i] = in_brain ? 80.0f * shade : (in_skull ? 55.0f : 0.0f);
                t1post[i] = in_enh ? 160.0f : (in_brain ? 85.0f * shade
                                                        : (in_skull ? 60.0f : 0.0f));
                brain[i] = in_brain ? 1.0f : 0.0f;
                whole[i] = in_tumor ? 1.0f : 0.0f;
                enhancing[i] = in_enh ? 1.0f : 0.0f;
            }
        }
    }
    return Phantom{AffineVolume(std::move(flair), affine),
                   AffineVolume(std::move(t1pre), affine),
                   AffineVolume(std::move(t1post), affine),
                   AffineVolume(std::move(brain), affine),
                   AffineVolume(std::move(whole), affine),
                   AffineVolume(std::move(enhancing), affine)};
}

DataCollection training_collection(const std::vector<const AffineVolume*>& inputs,
                                   const std::vector<std::string>& labels,
                                   const AffineVolume& truth) {
    DataCollection c({DataGroup{"input_data", labels}, DataGroup{"ground_truth", {"mask"}}});
    Case kase{"phantom", {}};
    std::vector<ChannelSource> sources;
    for (const auto* v : inputs) {
        sources.emplace_back(*v);
    }
    kase.sources.emplace("input_data", std::move(sources));
    kase.sources.emplace("ground_truth", std::vector<ChannelSource>{truth});
    c.add_case(std::move(kase));
    return c;
}

net::Model train_toy(const net::UNetConfig& cfg, const DataCollection& raw,
                     const Shape& patch_shape, int64_t steps, uint64_t seed) {
    TransformChain preprocess;
    preprocess.nodes.push_back(
        make_transform_node(ClipPercentilesParams{1, 99}, {"input_data"}, "clip"));
    preprocess.nodes.push_back(make_transform_node(ZeroMeanUnitStdParams{true, ""},
                                                   {"input_data"}, "normalization"));
    DataCollection prepped = chain_apply(preprocess, raw);

    PatchExtractAug patches;
    patches.shape = patch_shape;
    patches.criteria.label_fraction = 0.75;
    std::vector<AugmentationNode> nodes;
    nodes.push_back(make_augmentation_node(std::move(patches), 48));
    SampleStream stream = expand(prepped, std::move(nodes), seed);

    net::Model model = net::build_unet(cfg, seed);
    net::TrainOptions opt;
    opt.batch_size = 4;
    opt.steps = steps;
    opt.seed = seed;
    std::vector<net::StepRecord> records = net::train(model, stream, opt);
    std::cout << "  trained " << records.size() << " steps, final loss "
              << records.back().loss << "\n";
    return model;
}

nlohmann::json registry_entry(const std::string& file_name, const net::Model& model,
                              const fs::path& models_dir) {
    fs::path path = models_dir / file_name;
    nlohmann::json entry;
    entry["version"] = "1";
    entry["url"] = "file:models/" + file_name;
    entry["sha256"] = sha256_file(path.string());
    entry["bytes"] = fs::file_size(path);
    entry["config"] = nlohmann::json::parse(model.config.to_json_text());
    return entry;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"regenerate the bundled phantom, toy models and registry manifest"};
    std::string data_dir = "data";
    int64_t steps = 260;
    app.add_option("--data", data_dir, "output data directory");
    app.add_option("--steps", steps, "training steps per toy model");
    CLI11_PARSE(app, argc, argv);

    fs::create_directories(fs::path(data_dir) / "phantom");
    fs::create_directories(fs::path(data_dir) / "models");

    std::cout << "writing phantom volumes\n";
    Phantom phantom = make_phantom();
    auto phantom_path = [&](const std::string& name) {
        return (fs::path(data_dir) / "phantom" / (name + ".nii.gz")).string();
    };
    write_nifti(phantom.flair, phantom_path("flair"), true);
    write_nifti(phantom.t1pre, phantom_path("t1pre"), true);
    write_nifti(phantom.t1post, phantom_path("t1post"), true);
    write_nifti(phantom.brain_mask, phantom_path("brain_mask"), true);
    write_nifti(phantom.wholetumor, phantom_path("wholetumor"), true);
    write_nifti(phantom.enhancing, phantom_path("enhancing"), true);

    // Skull-strip toy: 2-channel input, brain mask target.
    std::cout << "training skullstrip_toy\n";
    net::UNetConfig ss;
    ss.input_shape = {16, 16, 8, 2};
    ss.pool_size = {2, 2, 1};
    ss.kernel_size = {3, 3, 3};
    ss.depth = 2;
    ss.max_filter = 8;
    ss.downsize_filters_factor = 1;
    ss.num_outputs = 1;
    ss.initial_learning_rate = 1e-3;
    net::Model ss_model =
        train_toy(ss, training_collection({&phantom.flair, &phantom.t1post}, {"FLAIR", "T1POST"},
                                          phantom.brain_mask),
                  {16, 16, 8}, steps, 11);
    net::save_model(ss_model, (fs::path(data_dir) / "models" / "skullstrip_toy.dnmd").string());

    // GBM cascade toys: whole tumor from 3 channels, enhancing from 3 + mask.
    std::cout << "training gbm_wholetumor_toy\n";
    net::UNetConfig wt;
    wt.input_shape = {16, 16, 16, 3};
    wt.pool_size = {2, 2, 2};
    wt.kernel_size = {3, 3, 3};
    wt.depth = 2;
    wt.max_filter = 8;
    wt.initial_learning_rate = 1e-3;
    net::Model wt_model = train_toy(
        wt,
        training_collection({&phantom.flair, &phantom.t1pre, &phantom.t1post},
                            {"FLAIR", "T1PRE", "T1POST"}, phantom.wholetumor),
        {16, 16, 16}, steps, 12);
    net::save_model(wt_model,
                    (fs::path(data_dir) / "models" / "gbm_wholetumor_toy.dnmd").string());

    std::cout << "training gbm_enhancing_toy\n";
    net::UNetConfig en = wt;
    en.input_shape = {16, 16, 16, 4};
    net::Model en_model = train_toy(
        en,
        training_collection({&phantom.flair, &phantom.t1pre, &phantom.t1post,
                             &phantom.wholetumor},
                            {"FLAIR", "T1PRE", "T1POST", "WHOLETUMOR"}, phantom.enhancing),
        {16, 16, 16}, steps, 13);
    net::save_model(en_model,
                    (fs::path(data_dir) / "models" / "gbm_enhancing_toy.dnmd").string());

    std::cout << "writing registry manifest\n";
    nlohmann::json manifest;
    fs::path models_dir = fs::path(data_dir) / "models";
    manifest["entries"]["skullstrip_toy"] =
        registry_entry("skullstrip_toy.dnmd", ss_model, models_dir);
    manifest["entries"]["gbm_wholetumor_toy"] =
        registry_entry("gbm_wholetumor_toy.dnmd", wt_model, models_dir);
    manifest["entries"]["gbm_enhancing_toy"] =
        registry_entry("gbm_enhancing_toy.dnmd", en_model, models_dir);
    std::ofstream(fs::path(data_dir) / "registry.json") << manifest.dump(2) << "\n";

    std::cout << "done\n";
    return 0;
}
