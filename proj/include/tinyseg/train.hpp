#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyseg/architectures.hpp"
#include "tinyseg/checkpoint.hpp"
#include "tinyseg/image_io.hpp"
#include "tinyseg/loss.hpp"
#include "tinyseg/optim.hpp"
#include "tinyseg/rng.hpp"

namespace tinyseg {

struct TrainConfig {
    ArchitectureSpec arch;
    int epochs = 1;
    int batch_size = 2;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;
    std::filesystem::path checkpoint_path;  // written at every epoch end
    std::filesystem::path loss_log_path;    // optional CSV `step,epoch,loss`
    int log_interval = 10;                  // progress lines, in steps
};

struct LossRecord {
    int step;
    int epoch;
    double loss;
};

struct TrainResult {
    Model model;
    std::vector<LossRecord> history;
};

namespace detail {

/// Stacks samples (already at the model's input size) into one batch
/// image tensor and one one-hot truth tensor.
inline std::pair<Tensor, Tensor> stack_batch(const std::vector<Sample>& dataset,
                                             const std::vector<std::size_t>& order,
                                             std::size_t begin, std::size_t end,
                                             int num_classes) {
    const Shape one = dataset[order[begin]].image.shape();
    const std::int64_t batch = static_cast<std::int64_t>(end - begin);
    std::vector<double> images(static_cast<std::size_t>(batch * one.c * one.h * one.w));
    LabelMap masks{batch, one.h, one.w,
                   std::vector<std::uint8_t>(static_cast<std::size_t>(batch * one.h * one.w))};
    for (std::size_t b = begin; b < end; ++b) {
        const Sample& sample = dataset[order[b]];
        require(sample.image.shape() == one, "train: inconsistent sample shapes in batch");
        const auto src = sample.image.data();
        std::copy(src.begin(), src.end(),
                  images.begin() + static_cast<std::int64_t>(b - begin) * one.c * one.h * one.w);
        std::copy(sample.mask.labels.begin(), sample.mask.labels.end(),
                  masks.labels.begin() + static_cast<std::int64_t>(b - begin) * one.h * one.w);
    }
    return {Tensor({batch, one.c, one.h, one.w}, std::move(images)), one_hot(masks, num_classes)};
}

inline void write_loss_csv(const std::filesystem::path& path,
                           const std::vector<LossRecord>& history) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(path.string() + ": cannot open for writing");
    }
    out << "step,epoch,loss\n";
    out << std::setprecision(17);
    for (const LossRecord& r : history) {
        out << r.step << ',' << r.epoch << ',' << r.loss << '\n';
    }
}

}  // namespace detail

/// Mini-batch Dice training. Deterministic for a fixed seed: the model
/// init, the per-epoch shuffles, and every update depend only on the seed
/// and the dataset, so repeated runs produce bit-identical checkpoints
/// and loss histories.
inline TrainResult train(const TrainConfig& config, const std::vector<Sample>& dataset,
                         std::ostream* progress = nullptr) {
    require(!dataset.empty(), "train: dataset is empty");
    require(config.epochs >= 1, "train: epochs must be >= 1");
    require(config.batch_size >= 1, "train: batch_size must be >= 1");
    require(!config.checkpoint_path.empty(), "train: checkpoint path is required");
    validate_spec(config.arch);
    if (config.arch.family == Family::kResunet) {
        require(config.batch_size >= 2,
                "train: resunet uses batch norm; batch_size must be >= 2");
    }

    std::vector<Sample> resized;
    resized.reserve(dataset.size());
    for (const Sample& s : dataset) {
        resized.push_back(resize_sample(s, config.arch.input_size));
    }

    Rng init_rng(derive_seed(config.seed, 0));
    Rng shuffle_rng(derive_seed(config.seed, 1));
    TrainResult result{build_model(config.arch, init_rng), {}};
    Model& model = result.model;
    Optimizer optimizer(config.optimizer);

    std::vector<std::size_t> order(resized.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    int step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            auto [images, truth] =
                detail::stack_batch(resized, order, begin, end, config.arch.num_classes);
            Tape tape;
            ForwardCtx ctx;
            ctx.tape = &tape;
            ctx.training = true;
            const Tensor probs = model.forward(images, ctx);
            const Tensor loss = dice_loss(probs, truth, &tape);
            const double loss_value = loss.item();
            ++step;
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                         " (epoch " + std::to_string(epoch) + ")");
            }
            tape.backward(loss);
            std::unordered_map<std::string, std::vector<double>> grads;
            for (const ParamEntry& entry : model.params.entries()) {
                if (!entry.trainable) {
                    continue;
                }
                const auto bound = ctx.bound.find(entry.name);
                require(bound != ctx.bound.end(),
                        "train: parameter " + entry.name + " was not used in the forward pass");
                const std::vector<double>* g = tape.grad(bound->second);
                require(g != nullptr, "train: no gradient for parameter " + entry.name);
                grads.emplace(entry.name, *g);
            }
            optimizer.step(model.params, grads);
            result.history.push_back(LossRecord{step, epoch, loss_value});
            if (progress != nullptr && (step % config.log_interval == 0 || step == 1)) {
                *progress << "step " << step << " epoch " << epoch << " loss " << loss_value
                          << '\n';
            }
        }
        save_checkpoint(model, config.checkpoint_path);
    }
    if (!config.loss_log_path.empty()) {
        detail::write_loss_csv(config.loss_log_path, result.history);
    }
    return result;
}

}  // namespace tinyseg
