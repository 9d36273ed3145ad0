#ifndef GRADESHI_TRAINING_HPP
#define GRADESHI_TRAINING_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradeshi/checkpoint.hpp"
#include "gradeshi/dataset.hpp"
#include "gradeshi/network.hpp"
#include "gradeshi/optimization.hpp"

namespace gradeshi {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    AdamHyper adam;
    // Batch size of the post-epoch evaluation passes; results do not depend on it.
    std::size_t eval_batch_size = 64;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    // NaN when training ran without a validation set.
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    std::vector<double> wall_seconds;
};

// Called after each epoch's evaluation; returning false ends training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Per epoch: Adam over every batch of the (seed, epoch) order, then
// eval-mode passes over the training set and the validation set.
template <typename T>
TrainHistory train(Network<T>& net, AdamState<T>& optimizer, const ImageSet<T>& train_set,
                   const ImageSet<T>* val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Eval-mode mean loss and accuracy; independent of batch_size.
template <typename T>
BatchMetrics evaluate(Network<T>& net, const ImageSet<T>& data, std::size_t batch_size = 64);

// Metrics restricted to each category (samples = 0 for absent ones).
template <typename T>
std::array<BatchMetrics, kCategoryCount> evaluate_by_category(Network<T>& net, const ImageSet<T>& data,
                                                              const Manifest& manifest, std::size_t batch_size = 64);

// Builds `target` (family must match the checkpoint), copies every trunk
// tensor from the checkpoint, re-draws the head from `seed` and applies
// target.freeze_prefix.
template <typename T>
Network<T> transfer(const Checkpoint<T>& base, const ArchConfig& target, std::uint64_t seed);

// CSV `epoch,train_loss,train_acc,val_loss,val_acc`, 6 decimals.
void export_metrics(const TrainHistory& history, const std::filesystem::path& path);
TrainHistory read_metrics(const std::filesystem::path& path);

// Epoch records only; wall times are kept out so the file is reproducible.
void write_history(const TrainHistory& history, const std::filesystem::path& path);
TrainHistory read_history(const std::filesystem::path& path);
void write_timing(const TrainHistory& history, const std::filesystem::path& path);

} // namespace gradeshi

#endif
