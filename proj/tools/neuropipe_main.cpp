// neuropipe: command-line front end for the shipped pipelines, training jobs
// and the model registry.
//
//   neuropipe skullstrip --flair F.nii.gz --t1post T.nii.gz --output DIR
//   neuropipe segment-gbm --flair F --t1pre P --t1post T --output DIR
//   neuropipe train --config job.json [--resume]
//   neuropipe model fetch|delete|list [NAME]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "neuropipe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace neuropipe;

namespace {

std::string find_data_dir(const char* argv0) {
    if (const char* env = std::getenv("NEUROPIPE_DATA")) {
        return env;
    }
    // Fall back to <exe>/../data, then ./data.
    std::error_code ec;
    fs::path exe = fs::canonical(argv0, ec);
    if (!ec) {
        fs::path candidate = exe.parent_path().parent_path() / "data";
        if (fs::is_directory(candidate)) {
            return candidate.string();
        }
        candidate = exe.parent_path() / "data";
        if (fs::is_directory(candidate)) {
            return candidate.string();
        }
    }
    return "data";
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidArgument:
            return 2;
        default:
            return 1;
    }
}

ModelRegistry open_registry(const std::string& data_dir) {
    std::string manifest_path = (fs::path(data_dir) / "registry.json").string();
    require(fs::exists(manifest_path), ErrorCode::InvalidConfig,
            "no registry manifest at " + manifest_path +
                " (set NEUROPIPE_DATA to the data directory)");
    return ModelRegistry(RegistryManifest::from_file(manifest_path), default_cache_dir());
}

struct PipelineCli {
    std::map<std::string, std::string> flags;
    std::string csv;
    std::string output;
    std::vector<std::string> skip;
    double overlap = -1;
    int threads = 1;
    uint64_t seed = 0;
    bool verbose = false;
    std::vector<std::string> model_paths;  // positional per stage, optional
};

int run_shipped_pipeline(const std::string& data_dir, const std::string& config_name,
                         const PipelineCli& cli) {
    std::string config_path =
        (fs::path(data_dir) / "pipelines" / (config_name + ".json")).string();
    PipelineConfig config = PipelineConfig::from_file(config_path);

    for (size_t k = 0; k < cli.model_paths.size() && k < config.models.size(); ++k) {
        config.models[k].model_path = cli.model_paths[k];
    }

    PipelineRunOptions options;
    options.flag_values = cli.flags;
    options.csv_path = cli.csv;
    options.output_dir = cli.output;
    options.skip_preprocess = cli.skip;
    if (cli.overlap >= 0) {
        options.overlap_override = cli.overlap;
    }
    options.threads = cli.threads;
    options.seed = cli.seed;
    options.verbose = cli.verbose;

    ModelRegistry registry = open_registry(data_dir);
    PipelineResult result = run_pipeline(config, registry, options);
    for (const CaseReport& report : result.cases) {
        if (!report.ok) {
            std::cerr << "case " << report.case_id << " failed: " << report.error << "\n";
        }
    }
    return result.exit_code;
}

void add_pipeline_options(CLI::App* cmd, PipelineCli& cli,
                          const std::vector<std::pair<std::string, std::string>>& inputs) {
    for (const auto& [flag, help] : inputs) {
        cmd->add_option_function<std::string>(
               flag,
               [&cli, flag = flag](const std::string& value) { cli.flags[flag] = value; }, help)
            ->type_name("FILE");
    }
    cmd->add_option("--csv", cli.csv, "process every case listed in a CSV instead");
    cmd->add_option("--output", cli.output, "output directory")->required();
    cmd->add_option("--skip-preprocess", cli.skip, "preprocess step name to skip (repeatable)");
    cmd->add_option("--overlap", cli.overlap, "patch overlap fraction override");
    cmd->add_option("--threads", cli.threads, "concurrent case workers (default 1)");
    cmd->add_option("--seed", cli.seed, "rng seed for deterministic runs");
    cmd->add_option("--model", cli.model_paths,
                    "model file override per stage (repeatable, bypasses the registry)");
    cmd->add_flag("--verbose", cli.verbose, "stream per-stage timings");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuropipe: neuroimaging segmentation pipelines"};
    app.require_subcommand(1);
    std::string data_dir = find_data_dir(argc > 0 ? argv[0] : "neuropipe");
    app.add_option("--data-dir", data_dir, "directory holding pipelines/ and registry.json");

    PipelineCli skullstrip_cli;
    CLI::App* skullstrip = app.add_subcommand("skullstrip", "brain extraction (FLAIR + T1POST)");
    add_pipeline_options(skullstrip, skullstrip_cli,
                         {{"--flair", "FLAIR volume"}, {"--t1post", "post-contrast T1 volume"}});

    PipelineCli gbm_cli;
    CLI::App* gbm = app.add_subcommand("segment-gbm",
                                       "glioblastoma cascade (whole tumor, then enhancing)");
    add_pipeline_options(gbm, gbm_cli,
                         {{"--flair", "FLAIR volume"},
                          {"--t1pre", "pre-contrast T1 volume"},
                          {"--t1post", "post-contrast T1 volume"}});

    std::string train_config;
    bool train_resume = false;
    CLI::App* train_cmd = app.add_subcommand("train", "run a training job from a JSON config");
    train_cmd->add_option("--config", train_config, "training job JSON")->required();
    train_cmd->add_flag("--resume", train_resume, "continue from the configured checkpoint");

    CLI::App* model_cmd = app.add_subcommand("model", "manage the local model cache");
    std::string fetch_name, delete_name;
    CLI::App* fetch_cmd = model_cmd->add_subcommand("fetch", "download and verify a model");
    fetch_cmd->add_option("name", fetch_name)->required();
    CLI::App* delete_cmd = model_cmd->add_subcommand("delete", "drop a model from the cache");
    delete_cmd->add_option("name", delete_name)->required();
    CLI::App* list_cmd = model_cmd->add_subcommand("list", "list registry entries");
    model_cmd->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*skullstrip) {
            return run_shipped_pipeline(data_dir, "skullstrip", skullstrip_cli);
        }
        if (*gbm) {
            return run_shipped_pipeline(data_dir, "segment_gbm", gbm_cli);
        }
        if (*train_cmd) {
            TrainingJobConfig config = TrainingJobConfig::from_file(train_config);
            TrainingJobResult result = run_training(config, train_resume);
            std::cout << "model written to " << result.model_path << " (" << result.steps
                      << " steps, final loss " << result.final_loss << ")\n";
            return 0;
        }
        if (*model_cmd) {
            ModelRegistry registry = open_registry(data_dir);
            if (*fetch_cmd) {
                std::cout << registry.fetch(fetch_name) << "\n";
            } else if (*delete_cmd) {
                registry.remove(delete_name);
            } else if (*list_cmd) {
                for (const RegistryEntry& entry : registry.list()) {
                    bool cached = fs::exists(registry.cache_path(entry.name));
                    std::cout << entry.name << "\tv" << entry.version << "\t"
                              << (cached ? "cached" : "remote") << "\n";
                }
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
