#pragma once

#include <functional>

#include "neuropipe/augment.hpp"
#include "neuropipe/net/unet.hpp"

namespace neuropipe::net {

struct StepRecord {
    int64_t step = 0;
    double loss = 0;
    double lr = 0;
    double wall_ms = 0;
};

struct TrainOptions {
    int64_t batch_size = 1;
    int64_t steps = 0;   // absolute optimizer-step target (resume continues toward it)
    int64_t epochs = 0;  // alternative: passes over the stream
    uint64_t seed = 0;
    std::string checkpoint_path;  // written every epoch and on best loss
    std::string history_path;     // JSON lines {step, loss, lr, wall_ms}
    std::function<void(const StepRecord&)> callback;
};

/// Deterministic single-threaded training. Batch composition, dropout masks
/// and shuffling are pure functions of (seed, absolute step), so resuming
/// from a checkpoint reproduces an uninterrupted run exactly. Aborts with
/// NonFiniteLoss if the loss leaves the reals; the last checkpoint survives.
std::vector<StepRecord> train(Model& m, const SampleStream& stream, const TrainOptions& opt);

/// Paired sampling (with replacement) straight from a collection.
std::vector<StepRecord> train(Model& m, const DataCollection& c, const TrainOptions& opt);

}  // namespace neuropipe::net
