#include "neuropipe/net/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "neuropipe/net/loss.hpp"

namespace neuropipe::net {

namespace {

Tensor stack_batch(const std::vector<Tensor>& tensors) {
    Shape shape = tensors[0].shape();
    shape.insert(shape.begin(), static_cast<int64_t>(tensors.size()));
    Tensor out(shape);
    int64_t per = tensors[0].size();
    for (size_t i = 0; i < tensors.size(); ++i) {
        require(tensors[i].size() == per, ErrorCode::ShapeMismatch,
                "batch members have differing shapes");
        std::copy(tensors[i].data(), tensors[i].data() + per,
                  out.data() + static_cast<int64_t>(i) * per);
    }
    return out;
}

struct BatchProvider {
    std::function<std::pair<Tensor, Tensor>(int64_t step)> fetch;  // (input, target)
    int64_t steps_per_epoch = 1;
};

std::vector<StepRecord> run_training(Model& m, const BatchProvider& provider,
                                     const TrainOptions& opt) {
    int64_t target_steps = opt.steps;
    if (target_steps <= 0) {
        require(opt.epochs > 0, ErrorCode::InvalidArgument, "need steps or epochs");
        target_steps = opt.epochs * provider.steps_per_epoch;
    }

    std::ofstream history;
    if (!opt.history_path.empty()) {
        history.open(opt.history_path, std::ios::app);
        require(history.good(), ErrorCode::IoError, "cannot open " + opt.history_path);
    }

    m.state.seed = opt.seed;
    double lr = m.config.initial_learning_rate;
    std::vector<StepRecord> records;

    while (m.state.step < target_steps) {
        auto t0 = std::chrono::steady_clock::now();
        int64_t step = m.state.step;  // 0-based index of the step being taken

        auto [x, target] = provider.fetch(step);

        ForwardTrace<float> trace;
        Executor<float> exec(m.graph, m.params);
        Tensor y = exec.forward(x, true, hash_u64s({opt.seed, 0xd20ULL, static_cast<uint64_t>(step)}),
                                &trace);

        LossResult<float> loss = m.config.cost_function == CostFunction::SoftDice
                                     ? soft_dice_loss(y, target)
                                     : binary_crossentropy_loss(y, target);
        if (!std::isfinite(loss.value)) {
            raise(ErrorCode::NonFiniteLoss,
                  "loss diverged at step " + std::to_string(step + 1));
        }

        ParamStore<float> grads;
        exec.backward(trace, loss.grad, grads);
        optimizer_step(m.params, grads, m.config.optimizer, lr, step + 1, m.state.moments);
        m.state.step = step + 1;

        auto t1 = std::chrono::steady_clock::now();
        StepRecord record{m.state.step, static_cast<double>(loss.value), lr,
                          std::chrono::duration<double, std::milli>(t1 - t0).count()};
        records.push_back(record);
        if (opt.callback) {
            opt.callback(record);
        }
        if (history.is_open()) {
            nlohmann::json line;
            line["step"] = record.step;
            line["loss"] = record.loss;
            line["lr"] = record.lr;
            line["wall_ms"] = record.wall_ms;
            history << line.dump() << "\n";
        }

        bool epoch_end = m.state.step % provider.steps_per_epoch == 0;
        bool new_best = record.loss < m.state.best_loss;
        if (new_best) {
            m.state.best_loss = record.loss;
        }
        if (!opt.checkpoint_path.empty() && (epoch_end || new_best)) {
            save_model(m, opt.checkpoint_path);
        }
    }
    return records;
}

}  // namespace

std::vector<StepRecord> train(Model& m, const SampleStream& stream, const TrainOptions& opt) {
    require(stream.size() > 0, ErrorCode::EmptyCollection, "empty sample stream");
    require(opt.batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");

    int64_t steps_per_epoch = (stream.size() + opt.batch_size - 1) / opt.batch_size;

    BatchProvider provider;
    provider.steps_per_epoch = steps_per_epoch;
    provider.fetch = [&m, &stream, &opt, steps_per_epoch](int64_t step) {
        // Epoch-local shuffled order, derived from (seed, epoch) alone.
        int64_t epoch = step / steps_per_epoch;
        std::vector<int64_t> order(static_cast<size_t>(stream.size()));
        for (size_t i = 0; i < order.size(); ++i) {
            order[i] = static_cast<int64_t>(i);
        }
        Rng rng{hash_u64s({opt.seed, 0xe90cULL, static_cast<uint64_t>(epoch)})};
        rng.shuffle(order);

        int64_t pos = (step % steps_per_epoch) * opt.batch_size;
        std::vector<Tensor> xs, ts;
        for (int64_t b = 0; b < opt.batch_size; ++b) {
            Sample sample = stream.materialize(order[static_cast<size_t>(
                (pos + b) % stream.size())]);
            auto xi = sample.groups.find("input_data");
            auto ti = sample.groups.find("ground_truth");
            require(xi != sample.groups.end() && ti != sample.groups.end(),
                    ErrorCode::InvalidArgument,
                    "training samples need input_data and ground_truth groups");
            xs.push_back(xi->second.data());
            ts.push_back(ti->second.data());
        }
        return std::make_pair(stack_batch(xs), stack_batch(ts));
    };
    return run_training(m, provider, opt);
}

std::vector<StepRecord> train(Model& m, const DataCollection& c, const TrainOptions& opt) {
    require(c.case_count() > 0, ErrorCode::EmptyCollection, "empty collection");
    require(opt.batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");

    int64_t steps_per_epoch =
        (static_cast<int64_t>(c.case_count()) + opt.batch_size - 1) / opt.batch_size;

    BatchProvider provider;
    provider.steps_per_epoch = steps_per_epoch;
    provider.fetch = [&c, &opt](int64_t step) {
        auto batch = c.sample_batch(opt.batch_size, DataCollection::SampleMode::Paired,
                                    hash_u64s({opt.seed, 0xba7cULL, static_cast<uint64_t>(step)}));
        auto xi = batch.find("input_data");
        auto ti = batch.find("ground_truth");
        require(xi != batch.end() && ti != batch.end(), ErrorCode::InvalidArgument,
                "training collections need input_data and ground_truth groups");
        return std::make_pair(std::move(xi->second), std::move(ti->second));
    };
    return run_training(m, provider, opt);
}

}  // namespace neuropipe::net
