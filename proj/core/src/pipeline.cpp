#include "neuropipe/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "json.hpp"
#include "neuropipe/nifti.hpp"

namespace fs = std::filesystem;

namespace neuropipe {

namespace {

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("pipeline JSON: ") + e.what());
    }

    PipelineConfig config;
    try {
        config.name = doc.at("name").get<std::string>();
        for (const auto& ch : doc.at("inputs").at("input_data")) {
            config.input_channels.push_back(PipelineInputChannel{
                ch.at("channel").get<std::string>(), ch.at("flag").get<std::string>()});
        }
        if (doc.contains("preprocess")) {
            config.preprocess = TransformChain::from_json_text(doc.at("preprocess").dump());
        }
        for (const auto& m : doc.at("models")) {
            PipelineModelStage stage;
            stage.registry_name = m.value("registry", std::string{});
            stage.model_path = m.value("path", std::string{});
            stage.train_config = net::UNetConfig::from_json_text(m.at("config").dump());
            if (m.contains("plan")) {
                stage.plan = InferenceParams::from_json_text(m.at("plan").dump());
            }
            stage.feed = m.value("feed", std::vector<int>{});
            stage.output_name = m.value("output", std::string{});
            config.models.push_back(std::move(stage));
        }
        if (doc.contains("postprocess")) {
            config.postprocess = TransformChain::from_json_text(doc.at("postprocess").dump());
        }
        for (const auto& out : doc.value("outputs", json::array())) {
            config.outputs.push_back(PipelineOutput{out.at("path").get<std::string>(),
                                                    out.value("model", 0)});
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("pipeline config: ") + e.what());
    }
    config.validate();
    return config;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void PipelineConfig::validate() const {
    require(!input_channels.empty(), ErrorCode::InvalidConfig,
            "pipeline '" + name + "' declares no input channels");
    require(!models.empty(), ErrorCode::InvalidConfig,
            "pipeline '" + name + "' declares no models");
    for (size_t k = 0; k < models.size(); ++k) {
        const PipelineModelStage& stage = models[k];
        for (int ref : stage.feed) {
            require(ref >= 0 && ref < static_cast<int>(k), ErrorCode::InvalidConfig,
                    "pipeline '" + name + "' model " + std::to_string(k) +
                        " feeds from stage " + std::to_string(ref) +
                        " which is not an earlier stage");
        }
        // Channel arithmetic must close: declared channels + fed outputs.
        int64_t expected =
            static_cast<int64_t>(input_channels.size()) + static_cast<int64_t>(stage.feed.size());
        require(stage.train_config.input_channels() == expected, ErrorCode::InvalidConfig,
                "pipeline '" + name + "' model " + std::to_string(k) + " config expects " +
                    std::to_string(stage.train_config.input_channels()) + " channels but " +
                    std::to_string(expected) + " are bound");
        stage.train_config.validate();
        require(!stage.registry_name.empty() || !stage.model_path.empty(),
                ErrorCode::InvalidConfig,
                "pipeline '" + name + "' model " + std::to_string(k) +
                    " names neither a registry entry nor a path");
    }
    for (const PipelineOutput& out : outputs) {
        require(out.model_index >= 0 && out.model_index < static_cast<int>(models.size()),
                ErrorCode::InvalidConfig, "output references model " +
                                              std::to_string(out.model_index) +
                                              " of " + std::to_string(models.size()));
    }
}

namespace {

// Appends extra single-channel volumes as channels of the stage input.
AffineVolume append_channels(const AffineVolume& base,
                             const std::vector<const AffineVolume*>& extra) {
    if (extra.empty()) {
        return base;
    }
    int64_t total = base.channels();
    for (const auto* v : extra) {
        require(v->spatial_shape() == base.spatial_shape(), ErrorCode::ShapeMismatch,
                "fed output shape " + shape_str(v->spatial_shape()) + " vs input " +
                    shape_str(base.spatial_shape()));
        total += v->channels();
    }
    Shape shape = base.spatial_shape();
    shape.push_back(total);
    Tensor out(shape);
    int64_t voxels = base.voxels();
    int64_t offset = 0;
    auto copy_in = [&](const AffineVolume& v) {
        int64_t c = v.channels();
        for (int64_t vx = 0; vx < voxels; ++vx) {
            for (int64_t k = 0; k < c; ++k) {
                out[vx * total + offset + k] = v.data()[vx * c + k];
            }
        }
        offset += c;
    };
    copy_in(base);
    for (const auto* v : extra) {
        copy_in(*v);
    }
    return AffineVolume(std::move(out), base.affine(), base.meta());
}

struct LoadedStage {
    net::Model model;
};

CaseReport run_case(const PipelineConfig& config, std::vector<LoadedStage>& stages,
                    const DataCollection& full, const std::string& case_id,
                    const PipelineRunOptions& options) {
    CaseReport report;
    report.case_id = case_id;
    try {
        auto stage_clock = [start = std::chrono::steady_clock::now()]() mutable {
            auto now = std::chrono::steady_clock::now();
            double ms = std::chrono::duration<double, std::milli>(now - start).count();
            start = now;
            return ms;
        };

        // Single-case view so per-case failures stay isolated.
        DataCollection collection(full.groups());
        collection.add_case(full.case_by_id(case_id));

        DataCollection preprocessed =
            chain_apply(config.preprocess, collection, options.skip_preprocess);
        report.stage_ms.emplace_back("preprocess", stage_clock());

        auto input = preprocessed.case_volume(case_id, "input_data");

        std::vector<AffineVolume> stage_outputs;
        for (size_t k = 0; k < config.models.size(); ++k) {
            const PipelineModelStage& stage = config.models[k];
            net::Model& model = stages[k].model;

            std::vector<const AffineVolume*> fed;
            for (int ref : stage.feed) {
                fed.push_back(&stage_outputs[static_cast<size_t>(ref)]);
            }
            AffineVolume stage_input = append_channels(*input, fed);

            require(model.config.input_channels() == stage_input.channels(),
                    ErrorCode::ShapeMismatch,
                    "stage " + std::to_string(k) + " model expects " +
                        std::to_string(model.config.input_channels()) + " channels, got " +
                        std::to_string(stage_input.channels()));

            InferenceParams plan = stage.plan;
            if (options.overlap_override) {
                plan.overlap = {*options.overlap_override};
            }
            Shape patch = plan.patch_shape.empty() ? model.config.spatial_shape()
                                                   : plan.patch_shape;
            std::vector<double> overlap = plan.overlap;
            if (overlap.empty()) {
                overlap.assign(patch.size(), 0.0);
            } else if (overlap.size() == 1 && patch.size() > 1) {
                overlap.assign(patch.size(), overlap[0]);
            }
            PatchPlan patches =
                plan_patches(stage_input.spatial_shape(), patch, overlap, plan.pad_mode);
            AffineVolume pred =
                run_patched_inference(model, stage_input, patches, plan.batch_size);
            report.stage_ms.emplace_back("model" + std::to_string(k), stage_clock());

            for (const TransformNode& node : config.postprocess.nodes) {
                bool applies = std::find(node.applies_to.begin(), node.applies_to.end(),
                                         "prediction") != node.applies_to.end();
                if (!applies) {
                    continue;
                }
                TransformChain single;
                single.nodes.push_back(node);
                pred = chain_apply(single, pred);
            }
            report.stage_ms.emplace_back("postprocess" + std::to_string(k), stage_clock());
            stage_outputs.push_back(std::move(pred));
        }

        for (const PipelineOutput& out : config.outputs) {
            std::string path = replace_all(out.path_template, "{output}", options.output_dir);
            path = replace_all(path, "{case}", case_id);
            fs::create_directories(fs::path(path).parent_path());
            bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
            write_nifti(stage_outputs[static_cast<size_t>(out.model_index)], path, gz);
        }
        report.stage_ms.emplace_back("write", stage_clock());
        report.ok = true;
    } catch (const std::exception& e) {
        report.ok = false;
        report.error = e.what();
    }
    return report;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, ModelRegistry& registry,
                            const PipelineRunOptions& options) {
    config.validate();

    // Bind inputs: either one case from CLI flags or a CSV batch.
    DataCollection collection;
    if (!options.csv_path.empty()) {
        collection = collection_from_csv(options.csv_path);
        require(collection.find_group("input_data") != nullptr, ErrorCode::InvalidConfig,
                "CSV must declare an input_data group");
    } else {
        std::vector<std::string> labels;
        std::vector<ChannelSource> sources;
        for (const PipelineInputChannel& ch : config.input_channels) {
            auto it = options.flag_values.find(ch.flag);
            require(it != options.flag_values.end() && !it->second.empty(),
                    ErrorCode::InvalidArgument, "missing required input " + ch.flag);
            require(fs::exists(it->second), ErrorCode::IoError,
                    ch.flag + ": no such file " + it->second);
            labels.push_back(ch.label);
            sources.emplace_back(it->second);
        }
        collection = DataCollection({DataGroup{"input_data", labels}});
        Case kase{"case", {}};
        kase.sources.emplace("input_data", std::move(sources));
        collection.add_case(std::move(kase));
    }

    // Resolve every model up front: fetch + load + early channel validation.
    std::vector<LoadedStage> stages;
    for (size_t k = 0; k < config.models.size(); ++k) {
        const PipelineModelStage& stage = config.models[k];
        std::string path = stage.model_path;
        if (path.empty()) {
            path = registry.fetch(stage.registry_name);
        }
        LoadedStage loaded{net::load_model(path)};
        int64_t expected = static_cast<int64_t>(config.input_channels.size()) +
                           static_cast<int64_t>(stage.feed.size());
        require(loaded.model.config.input_channels() == expected, ErrorCode::ShapeMismatch,
                "stage " + std::to_string(k) + " model file expects " +
                    std::to_string(loaded.model.config.input_channels()) +
                    " input channels but the pipeline binds " + std::to_string(expected));
        stages.push_back(std::move(loaded));
    }

    std::vector<std::string> case_ids;
    for (const auto& kase : collection.cases()) {
        case_ids.push_back(kase.id);
    }

    PipelineResult result;
    result.cases.resize(case_ids.size());
    int threads = std::max(1, options.threads);
    if (threads == 1) {
        for (size_t i = 0; i < case_ids.size(); ++i) {
            result.cases[i] = run_case(config, stages, collection, case_ids[i], options);
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                while (true) {
                    size_t i = next.fetch_add(1);
                    if (i >= case_ids.size()) {
                        return;
                    }
                    result.cases[i] = run_case(config, stages, collection, case_ids[i], options);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    for (const CaseReport& report : result.cases) {
        if (!report.ok) {
            result.exit_code = 1;
        }
        if (options.verbose) {
            std::cerr << "[" << config.name << "] case " << report.case_id << ": "
                      << (report.ok ? "ok" : report.error) << "\n";
            for (const auto& [stage, ms] : report.stage_ms) {
                std::cerr << "    " << stage << ": " << ms << " ms\n";
            }
        }
    }
    return result;
}

// --- training jobs ---------------------------------------------------------------

TrainingJobConfig TrainingJobConfig::from_json_text(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("training config JSON: ") + e.what());
    }
    TrainingJobConfig config;
    try {
        const json& source = doc.at("collection");
        config.csv_path = source.value("csv", std::string{});
        config.archive_path = source.value("archive", std::string{});
        config.directory_root = source.value("directory", std::string{});
        if (source.contains("patterns")) {
            for (const auto& [group, patterns] : source.at("patterns").items()) {
                config.directory_patterns[group] = patterns.get<std::vector<std::string>>();
            }
        }
        if (doc.contains("augmentation")) {
            config.augmentation = augmentation_from_json_text(doc.at("augmentation").dump());
        }
        config.model = net::UNetConfig::from_json_text(doc.at("model").dump());
        const json& train = doc.at("train");
        config.train.batch_size = train.value("batch_size", int64_t{1});
        config.train.steps = train.value("steps", int64_t{0});
        config.train.epochs = train.value("epochs", int64_t{0});
        config.train.seed = train.value("seed", uint64_t{0});
        config.train.checkpoint_path = train.value("checkpoint", std::string{});
        config.train.history_path = train.value("history", std::string{});
        config.output_model = doc.at("output_model").get<std::string>();
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("training config: ") + e.what());
    }
    return config;
}

TrainingJobConfig TrainingJobConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

TrainingJobResult run_training(const TrainingJobConfig& config, bool resume) {
    // Validate the model config before any data loads.
    config.model.validate();

    DataCollection collection;
    if (!config.csv_path.empty()) {
        collection = collection_from_csv(config.csv_path);
    } else if (!config.archive_path.empty()) {
        collection = read_archive(config.archive_path);
    } else if (!config.directory_root.empty()) {
        collection = collection_from_directory(config.directory_root, config.directory_patterns);
    } else {
        raise(ErrorCode::InvalidConfig, "training config names no collection source");
    }

    SampleStream stream = expand(collection, config.augmentation, config.train.seed);

    net::Model model;
    if (resume && !config.train.checkpoint_path.empty() &&
        fs::exists(config.train.checkpoint_path)) {
        model = net::load_model(config.train.checkpoint_path);
        require(model.config == config.model, ErrorCode::InvalidConfig,
                "checkpoint config does not match the training config");
    } else {
        model = net::build_unet(config.model, config.train.seed);
    }

    std::vector<net::StepRecord> records = net::train(model, stream, config.train);
    net::save_model(model, config.output_model);

    TrainingJobResult result;
    result.model_path = config.output_model;
    result.steps = model.state.step;
    result.final_loss = records.empty() ? 0.0 : records.back().loss;
    return result;
}

}  // namespace neuropipe
