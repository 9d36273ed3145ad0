#include "gradeshi/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "gradeshi/architectures.hpp"
#include "gradeshi/random.hpp"

namespace gradeshi {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleSalt = 0xba7c4;
constexpr std::uint64_t kHeadSalt = 0x4ead;

struct RowScore {
    double loss;
    bool correct;
};

template <typename T>
std::vector<RowScore> score_rows(Network<T>& net, const ImageSet<T>& data, std::size_t batch_size) {
    if (data.size() == 0) {
        throw EvaluationError("cannot evaluate an empty set");
    }
    if (data.class_count != net.class_count()) {
        throw EvaluationError("data has " + std::to_string(data.class_count) + " classes, network has " +
                              std::to_string(net.class_count()));
    }
    if (batch_size == 0) {
        throw ParameterError("batch size must be at least 1");
    }
    std::vector<RowScore> scores;
    scores.reserve(data.size());
    std::vector<std::size_t> rows;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(data.size(), begin + batch_size);
        rows.clear();
        for (std::size_t r = begin; r < end; ++r) {
            rows.push_back(r);
        }
        auto [x, y] = data.batch(rows);
        const auto probs = net.forward(x, Mode::eval);
        const auto losses = cross_entropy_rows(probs, y);
        const auto predicted = argmax_last_axis(probs);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            scores.push_back({losses[i], predicted[i] == data.labels[rows[i]]});
        }
    }
    return scores;
}

BatchMetrics summarize(const std::vector<RowScore>& scores, const std::function<bool(std::size_t)>& keep) {
    BatchMetrics m;
    double loss = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!keep(i)) {
            continue;
        }
        loss += scores[i].loss;
        hits += scores[i].correct ? 1 : 0;
        ++m.samples;
    }
    if (m.samples > 0) {
        m.loss = loss / static_cast<double>(m.samples);
        m.accuracy = static_cast<double>(hits) / static_cast<double>(m.samples);
    }
    return m;
}

} // namespace

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = {{"epochs", cfg.epochs},
         {"batch_size", cfg.batch_size},
         {"seed", cfg.seed},
         {"lr", cfg.adam.lr},
         {"beta1", cfg.adam.beta1},
         {"beta2", cfg.adam.beta2},
         {"epsilon", cfg.adam.epsilon},
         {"eval_batch_size", cfg.eval_batch_size}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    TrainConfig d;
    cfg.epochs = j.value("epochs", d.epochs);
    cfg.batch_size = j.value("batch_size", d.batch_size);
    cfg.seed = j.value("seed", d.seed);
    cfg.adam.lr = j.value("lr", d.adam.lr);
    cfg.adam.beta1 = j.value("beta1", d.adam.beta1);
    cfg.adam.beta2 = j.value("beta2", d.adam.beta2);
    cfg.adam.epsilon = j.value("epsilon", d.adam.epsilon);
    cfg.eval_batch_size = j.value("eval_batch_size", d.eval_batch_size);
}

template <typename T>
TrainHistory train(Network<T>& net, AdamState<T>& optimizer, const ImageSet<T>& train_set,
                   const ImageSet<T>* val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (cfg.epochs == 0 || cfg.batch_size == 0) {
        throw ConfigError("epochs and batch size must be at least 1");
    }
    if (train_set.size() == 0) {
        throw DataError("training set is empty");
    }
    if (train_set.class_count != net.class_count()) {
        throw ConfigError("training data has " + std::to_string(train_set.class_count) + " classes, network has " +
                          std::to_string(net.class_count()));
    }
    const bool has_val = val_set != nullptr && val_set->size() > 0;
    TrainHistory history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto plan = batch_plan(train_set.size(), cfg.batch_size, mix_seed(cfg.seed, kShuffleSalt), epoch);
        for (std::size_t b = 0; b < plan.size(); ++b) {
            auto [x, y] = train_set.batch(plan[b]);
            const auto probs = net.forward(x, Mode::train);
            const double loss = cross_entropy(probs, y);
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(b + 1));
            }
            net.backward_from_logits(softmax_cross_entropy_backward(probs, y));
            optimizer.step(net);
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        const auto tm = evaluate(net, train_set, cfg.eval_batch_size);
        rec.train_loss = tm.loss;
        rec.train_acc = tm.accuracy;
        if (has_val) {
            const auto vm = evaluate(net, *val_set, cfg.eval_batch_size);
            rec.val_loss = vm.loss;
            rec.val_acc = vm.accuracy;
        } else {
            rec.val_loss = rec.val_acc = std::numeric_limits<double>::quiet_NaN();
        }
        history.records.push_back(rec);
        history.wall_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        if (on_epoch && !on_epoch(rec)) {
            break;
        }
    }
    return history;
}

template <typename T>
BatchMetrics evaluate(Network<T>& net, const ImageSet<T>& data, std::size_t batch_size) {
    const auto scores = score_rows(net, data, batch_size);
    return summarize(scores, [](std::size_t) { return true; });
}

template <typename T>
std::array<BatchMetrics, kCategoryCount> evaluate_by_category(Network<T>& net, const ImageSet<T>& data,
                                                              const Manifest& manifest, std::size_t batch_size) {
    if (manifest.size() != data.class_count) {
        throw EvaluationError("manifest has " + std::to_string(manifest.size()) + " classes, data has " +
                              std::to_string(data.class_count));
    }
    const auto scores = score_rows(net, data, batch_size);
    std::array<BatchMetrics, kCategoryCount> out;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
        out[c] = summarize(scores, [&](std::size_t i) {
            return static_cast<std::size_t>(manifest.classes[data.labels[i]].category) == c;
        });
    }
    return out;
}

template <typename T>
Network<T> transfer(const Checkpoint<T>& base, const ArchConfig& target, std::uint64_t seed) {
    if (base.arch.family != target.family) {
        throw TransferError("checkpoint holds a " + std::string(to_string(base.arch.family)) +
                            ", target is a " + std::string(to_string(target.family)));
    }
    Network<T> net = build_network<T>(target, seed);
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& node = net.node(i);
        if (node.unit == Network<T>::kHead) {
            continue;
        }
        for (auto* map : {&node.layer->params(), &node.layer->buffers()}) {
            for (auto& [name, value] : *map) {
                const std::string key = node.name + "." + name;
                auto it = base.tensors.find(key);
                if (it == base.tensors.end()) {
                    throw TransferError("trunk tensor '" + key + "' is missing from the checkpoint");
                }
                if (it->second.shape() != value.shape()) {
                    throw TransferError("trunk tensor '" + key + "' has shape " + it->second.shape().str() +
                                        " in the checkpoint, target expects " + value.shape().str());
                }
                value = it->second;
            }
        }
    }
    reset_head(net, mix_seed(seed, kHeadSalt));
    return net;
}

void export_metrics(const TrainHistory& history, const fs::path& path) {
    if (history.records.empty()) {
        throw ParameterError("no epochs to export");
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write metrics to " + path.string());
    }
    out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char line[256];
    for (const auto& r : history.records) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.train_acc, r.val_loss,
                      r.val_acc);
        out << line;
    }
    if (!out) {
        throw IoError("cannot write metrics to " + path.string());
    }
}

TrainHistory read_metrics(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read metrics " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "epoch,train_loss,train_acc,val_loss,val_acc") {
        throw FormatError(path.string() + ": unexpected header '" + line + "'");
    }
    TrainHistory h;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(row, cell, ',')) {
            v.push_back(std::strtod(cell.c_str(), nullptr));
        }
        if (v.size() != 5) {
            throw FormatError(path.string() + ": malformed row '" + line + "'");
        }
        h.records.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4]});
    }
    return h;
}

void write_history(const TrainHistory& history, const fs::path& path) {
    auto epochs = nlohmann::json::array();
    for (const auto& r : history.records) {
        epochs.push_back({{"epoch", r.epoch},
                          {"train_loss", r.train_loss},
                          {"train_acc", r.train_acc},
                          {"val_loss", r.val_loss},
                          {"val_acc", r.val_acc}});
    }
    std::ofstream out(path);
    out << nlohmann::json{{"epochs", epochs}}.dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write history to " + path.string());
    }
}

TrainHistory read_history(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read history " + path.string());
    }
    TrainHistory h;
    try {
        const auto j = nlohmann::json::parse(in);
        auto num = [](const nlohmann::json& v) {
            return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
        };
        for (const auto& e : j.at("epochs")) {
            h.records.push_back({e.at("epoch").get<std::size_t>(), num(e.at("train_loss")), num(e.at("train_acc")),
                                 num(e.at("val_loss")), num(e.at("val_acc"))});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed history: " + e.what());
    }
    return h;
}

void write_timing(const TrainHistory& history, const fs::path& path) {
    std::ofstream out(path);
    char line[64];
    for (std::size_t i = 0; i < history.wall_seconds.size(); ++i) {
        std::snprintf(line, sizeof line, "epoch %zu %.3f s\n", i + 1, history.wall_seconds[i]);
        out << line;
    }
    if (!out) {
        throw IoError("cannot write timing log to " + path.string());
    }
}

#define GRADESHI_INSTANTIATE(T)                                                                              \
    template TrainHistory train(Network<T>&, AdamState<T>&, const ImageSet<T>&, const ImageSet<T>*,           \
                                const TrainConfig&, const EpochCallback&);                                   \
    template BatchMetrics evaluate(Network<T>&, const ImageSet<T>&, std::size_t);                            \
    template std::array<BatchMetrics, kCategoryCount> evaluate_by_category(Network<T>&, const ImageSet<T>&,   \
                                                                           const Manifest&, std::size_t);     \
    template Network<T> transfer(const Checkpoint<T>&, const ArchConfig&, std::uint64_t);

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
