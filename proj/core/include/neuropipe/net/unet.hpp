#pragma once

#include <limits>

#include "neuropipe/net/graph.hpp"
#include "neuropipe/net/optimizer.hpp"

namespace neuropipe::net {

enum class BlockStyle { Plain, Residual, Dense, SE, Inception };
enum class BlockOrder { ConvBnAct, BnActConv };
enum class CostFunction { SoftDice, BinaryCrossentropy };

/// The model hyperparameter surface: depth, filter schedule, kernel/pool
/// sizes, block style and ordering, loss and optimizer selection.
struct UNetConfig {
    Shape input_shape;  // spatial dims then channels, e.g. {64,64,8,2}
    int64_t depth = 4;
    int64_t max_filter = 512;
    int64_t downsize_filters_factor = 1;
    Shape pool_size;
    Shape kernel_size;
    double dropout = 0;
    bool batch_norm = true;
    std::string activation = "relu";
    std::string padding = "same";
    int64_t num_outputs = 1;
    CostFunction cost_function = CostFunction::SoftDice;
    double initial_learning_rate = 1e-4;
    OptimizerKind optimizer = OptimizerKind::Adam;
    BlockOrder block_order = BlockOrder::ConvBnAct;
    BlockStyle block_style = BlockStyle::Plain;

    int spatial_rank() const { return static_cast<int>(input_shape.size()) - 1; }
    int64_t input_channels() const { return input_shape.back(); }
    Shape spatial_shape() const { return Shape(input_shape.begin(), input_shape.end() - 1); }

    /// Rejects invalid configs with the offending field named.
    void validate() const;

    /// Encoder filters, top stage first, doubling down to max_filter at the
    /// deepest stage; the bottleneck uses max_filter/downsize_filters_factor.
    std::vector<int64_t> stage_filters() const;
    int64_t bottleneck_filters() const;

    static UNetConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    bool operator==(const UNetConfig&) const = default;
};

struct TrainingState {
    int64_t step = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    uint64_t seed = 0;
    std::map<std::string, Tensor> moments;  // Adam first/second moments
};

struct Model {
    UNetConfig config;
    Graph graph;
    ParamStore<float> params;
    TrainingState state;

    /// Deterministic when training=false; dropout masks and BatchNorm batch
    /// statistics only engage in training mode.
    Tensor forward(const Tensor& x, bool training = false, uint64_t dropout_seed = 0);

    int64_t main_conv_count() const { return graph.main_conv_count(); }
};

/// Builds the encoder/decoder graph and He-uniform-initialized parameters.
Model build_unet(const UNetConfig& cfg, uint64_t init_seed = 0);

/// DNMD single-file container: magic, version, JSON manifest (config echo +
/// training state), CRC32-checked parameter blobs. load(save(m)) reproduces
/// forward outputs bit-exactly.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace neuropipe::net
