#pragma once

#include <aftn/data.hpp>
#include <aftn/network.hpp>
#include <aftn/ops.hpp>
#include <aftn/optim.hpp>
#include <aftn/rng.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace aftn {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch = kDefaultBatchSize;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
        if (batch < 1) throw ConfigError("train.batch must be at least 1");
    }
};

struct TrainReport {
    std::vector<double> epoch_loss;    // mean training loss per epoch
    std::vector<double> epoch_seconds;
    std::vector<double> step_loss;     // every optimizer step
    std::size_t steps_per_epoch = 0;
    std::uint64_t seed = 0;
    std::string model_path;
};

/// Raised when a step produces a non-finite loss or gradient.
class DivergenceError : public NumericError {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : NumericError("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// One optimizer step on a prepared batch; returns the batch loss.
inline double train_step(TrackerModel& model, std::span<const TrainingPair> batch, const OptimConfig& optim,
                         Rng& dropout_rng) {
    std::vector<PatchPair> inputs;
    inputs.reserve(batch.size());
    Tensor target({batch.size(), 3});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        inputs.push_back(PatchPair{&batch[i].prev_patch, &batch[i].curr_patch});
        for (std::size_t k = 0; k < 3; ++k) target[i * 3 + k] = batch[i].target[k];
    }
    ForwardState state;
    model.forward(inputs, Mode::train, dropout_rng, state);
    const double loss = l1_loss(state.output, target);
    l1_loss_backward(state.output, target);
    model.backward(state);
    auto params = model.trainable_params();
    for (const Param* p : params)
        for (double g : p->value.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient");
    adam_step(params, optim);
    return loss;
}

/// Offline training: epochs x (pairs / batch) steps of sample, forward,
/// L1 loss, backward, Adam. Sets the model's mean color from the split.
inline TrainReport train(TrackerModel& model, std::span<const SequenceRecord> split, const OptimConfig& optim,
                         const TrainConfig& config,
                         const std::function<void(std::size_t epoch, double loss)>& on_epoch = {}) {
    optim.validate();
    config.validate();
    if (split.empty()) throw ConfigError("train: empty training split");
    const PairIndex index(split);
    model.set_mean_rgb(dataset_mean(split));
    Rng sampling(derive_seed(config.seed, SeedPurpose::sampling));
    Rng dropout_rng(derive_seed(config.seed, SeedPurpose::dropout));
    TrainReport report;
    report.seed = config.seed;
    report.steps_per_epoch = std::max<std::size_t>(1, index.size() / config.batch);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        double sum = 0.0;
        for (std::size_t i = 0; i < report.steps_per_epoch; ++i, ++step) {
            const auto batch = sample_pairs(split, index, config.batch, sampling, model.mean_rgb(), model.input_size());
            double loss = 0.0;
            try {
                loss = train_step(model, batch, optim, dropout_rng);
            } catch (const NumericError& e) {
                throw DivergenceError(step, e.what());
            }
            report.step_loss.push_back(loss);
            sum += loss;
        }
        report.epoch_loss.push_back(sum / static_cast<double>(report.steps_per_epoch));
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
    }
    return report;
}

} // namespace aftn
