#pragma once

#include <optional>

#include "neuropipe/augment.hpp"
#include "neuropipe/infer.hpp"
#include "neuropipe/net/train.hpp"
#include "neuropipe/registry.hpp"
#include "neuropipe/transforms.hpp"

namespace neuropipe {

/// One model stage of an inference pipeline. `feed` lists earlier stages
/// whose (postprocessed) outputs join the input channels of this stage.
struct PipelineModelStage {
    std::string registry_name;     // resolved through the model registry
    std::string model_path;        // or a direct file path (takes precedence)
    net::UNetConfig train_config;  // the architecture this stage is trained with
    InferenceParams plan;
    std::vector<int> feed;
    std::string output_name;  // label for output path templates
};

struct PipelineInputChannel {
    std::string label;  // e.g. "FLAIR"
    std::string flag;   // e.g. "--flair"
};

struct PipelineOutput {
    std::string path_template;  // {output} and {case} placeholders
    int model_index = 0;
};

struct PipelineConfig {
    std::string name;
    std::vector<PipelineInputChannel> input_channels;  // group "input_data"
    TransformChain preprocess;
    std::vector<PipelineModelStage> models;
    TransformChain postprocess;  // nodes with applies_to containing "prediction"
    std::vector<PipelineOutput> outputs;

    static PipelineConfig from_json_text(const std::string& text);
    static PipelineConfig from_file(const std::string& path);

    /// feed indices reference earlier stages only; every stage's declared
    /// input channels equal the pipeline channels plus its fed outputs.
    void validate() const;
};

struct PipelineRunOptions {
    std::map<std::string, std::string> flag_values;  // --flag -> file path
    std::string csv_path;                            // alternative batch input
    std::string output_dir;
    std::vector<std::string> skip_preprocess;  // node names
    std::optional<double> overlap_override;
    int threads = 1;
    uint64_t seed = 0;
    bool verbose = false;
};

struct CaseReport {
    std::string case_id;
    bool ok = false;
    std::string error;
    std::vector<std::pair<std::string, double>> stage_ms;
};

struct PipelineResult {
    int exit_code = 0;  // 0 ok, 1 any case failed
    std::vector<CaseReport> cases;
};

/// Per case: load -> preprocess (skippable per step) -> each model stage
/// (patch plan, inference, optional feed into the next stage) -> postprocess
/// -> NIfTI outputs. One bad case does not abort the batch.
PipelineResult run_pipeline(const PipelineConfig& config, ModelRegistry& registry,
                            const PipelineRunOptions& options);

// --- training jobs --------------------------------------------------------------

struct TrainingJobConfig {
    // Exactly one collection source.
    std::string csv_path;
    std::string directory_root;
    std::map<std::string, std::vector<std::string>> directory_patterns;
    std::string archive_path;

    std::vector<AugmentationNode> augmentation;
    net::UNetConfig model;
    net::TrainOptions train;
    std::string output_model;

    static TrainingJobConfig from_json_text(const std::string& text);
    static TrainingJobConfig from_file(const std::string& path);
};

struct TrainingJobResult {
    std::string model_path;
    double final_loss = 0;
    int64_t steps = 0;
};

/// Collection -> augmentation stream -> train -> save. With resume=true the
/// checkpoint at train.checkpoint_path continues toward the step target.
TrainingJobResult run_training(const TrainingJobConfig& config, bool resume = false);

}  // namespace neuropipe
