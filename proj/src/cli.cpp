#include "gradeshi/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gradeshi/architectures.hpp"
#include "gradeshi/checkpoint.hpp"
#include "gradeshi/dataset.hpp"
#include "gradeshi/training.hpp"

namespace gradeshi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "model.ckpt";

// Flat run configuration: every key can come from --config and be
// overridden by the matching flag.
json default_config() {
    return {{"data", ""},
            {"manifest", ""},
            {"category", "all"},
            {"classes", 0},
            {"per_class", 0},
            {"subset", 0},
            {"fraction", 0.8},
            {"seed", 0},
            {"out", ""},
            {"arch", "simple-cnn"},
            {"image_size", 64},
            {"invert", true},
            {"stage_widths", json::array()},
            {"blocks_per_stage", 0},
            {"dropout", 0.5},
            {"dense_units", 128},
            {"freeze_prefix", 0},
            {"freeze_granularity", "block"},
            {"epochs", 10},
            {"batch_size", 32},
            {"lr", 1e-3},
            {"beta1", 0.9},
            {"beta2", 0.999},
            {"epsilon", 1e-8},
            {"eval_batch_size", 64}};
}

template <typename V>
V get(const json& cfg, const char* key) {
    try {
        return cfg.at(key).get<V>();
    } catch (const json::exception&) {
        throw UsageError(std::string("config value '") + key + "' has the wrong type");
    }
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Flags bound to typed storage; only flags actually given end up in the
// override object.
class Overrides {
public:
    template <typename V>
    CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto store = std::make_shared<V>();
        CLI::Option* opt = app->add_option(flag, *store, help);
        entries_.push_back({key, opt, [store] { return json(*store); }});
        return opt;
    }

    json collect() const {
        json j = json::object();
        for (const auto& e : entries_) {
            if (e.option->count() > 0) {
                j[e.key] = e.value();
            }
        }
        return j;
    }

private:
    struct Item {
        std::string key;
        CLI::Option* option;
        std::function<json()> value;
    };
    std::vector<Item> entries_;
};

struct Command {
    CLI::App* app = nullptr;
    Overrides flags;
    std::string config_path;
};

json load_config_file(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read config file " + path);
    }
    try {
        json j = json::parse(in);
        if (!j.is_object()) {
            throw UsageError("config file " + path + " must hold an object");
        }
        const json known = default_config();
        for (const auto& [k, v] : j.items()) {
            if (!known.contains(k)) {
                throw UsageError("unknown config key '" + k + "' in " + path);
            }
        }
        return j;
    } catch (const json::exception& e) {
        throw UsageError("malformed config file " + path + ": " + e.what());
    }
}

// Settings given explicitly (file, then flags on top).
json explicit_settings(const Command& cmd) {
    json j = load_config_file(cmd.config_path);
    j.merge_patch(cmd.flags.collect());
    return j;
}

json resolve(json explicit_cfg) {
    json cfg = default_config();
    cfg.merge_patch(explicit_cfg);
    return cfg;
}

std::string require_path(const json& cfg, const char* key, const char* flag) {
    auto v = get<std::string>(cfg, key);
    if (v.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
    return v;
}

SplitSpec split_spec(const json& cfg) {
    SplitSpec s;
    s.train_fraction = get<double>(cfg, "fraction");
    s.seed = get<std::uint64_t>(cfg, "seed");
    if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) {
        throw UsageError("--fraction must lie strictly between 0 and 1");
    }
    return s;
}

TrainConfig train_config(const json& cfg) {
    TrainConfig t;
    t.epochs = get<std::size_t>(cfg, "epochs");
    t.batch_size = get<std::size_t>(cfg, "batch_size");
    t.seed = get<std::uint64_t>(cfg, "seed");
    t.adam = AdamHyper{get<double>(cfg, "lr"), get<double>(cfg, "beta1"), get<double>(cfg, "beta2"),
                       get<double>(cfg, "epsilon")};
    t.eval_batch_size = get<std::size_t>(cfg, "eval_batch_size");
    if (t.epochs == 0 || t.batch_size == 0 || t.eval_batch_size == 0) {
        throw UsageError("--epochs and --batch-size must be at least 1");
    }
    if (!(t.adam.lr > 0.0)) {
        throw UsageError("--lr must be positive");
    }
    return t;
}

ArchConfig arch_config(const json& cfg, std::size_t class_count) {
    ArchConfig a;
    a.family = parse_family(get<std::string>(cfg, "arch"));
    a.image_size = get<std::size_t>(cfg, "image_size");
    a.class_count = class_count;
    a.stage_widths = get<std::vector<std::size_t>>(cfg, "stage_widths");
    a.blocks_per_stage = get<std::size_t>(cfg, "blocks_per_stage");
    a.dropout_rate = get<double>(cfg, "dropout");
    a.dense_units = get<std::size_t>(cfg, "dense_units");
    a.freeze_prefix = get<std::size_t>(cfg, "freeze_prefix");
    a.freeze_granularity = parse_granularity(get<std::string>(cfg, "freeze_granularity"));
    return a;
}

// Scan, category filter, class limit and sub-sampling, in that order.
DatasetIndex prepare_index(const json& cfg, std::ostream& err) {
    const auto root = require_path(cfg, "data", "--data");
    const auto manifest_path = get<std::string>(cfg, "manifest");
    const Manifest manifest = manifest_path.empty() ? Manifest::standard() : Manifest::load(manifest_path);
    const auto category = get<std::string>(cfg, "category");
    const bool filtered = category != "all";
    const Category wanted = filtered ? parse_category(category) : Category::vowel;
    const auto seed = get<std::uint64_t>(cfg, "seed");

    DatasetIndex index = scan_dataset(root, manifest);
    for (const auto& f : index.unreadable) {
        err << "unreadable image: " << f << '\n';
    }
    if (filtered) {
        index = filter_category(index, wanted);
    }
    if (const auto classes = get<std::size_t>(cfg, "classes"); classes > 0) {
        index = limit_classes(index, classes);
    }
    if (const auto per_class = get<std::size_t>(cfg, "per_class"); per_class > 0) {
        index = subsample_per_class(index, per_class, seed);
    }
    if (const auto subset = get<std::size_t>(cfg, "subset"); subset > 0) {
        index = subsample_total(index, subset, seed);
    }
    return index;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

void report_freeze(const Network<float>& net, std::ostream& out) {
    const auto& cfg = *net.config();
    std::size_t frozen_layers = 0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        frozen_layers += net.layer(i).trainable() ? 0 : 1;
    }
    if (cfg.freeze_granularity == FreezeGranularity::block) {
        out << "frozen blocks: " << cfg.freeze_prefix << " of " << net.unit_count() << '\n';
    } else {
        out << "frozen layers: " << cfg.freeze_prefix << " of " << net.size() << '\n';
    }
    out << "non-trainable nodes: " << frozen_layers << '\n';
}

// Shared tail of train and transfer.
void fit_and_save(Network<float>& net, const json& cfg, const DatasetIndex& index, std::ostream& out) {
    const fs::path dir = require_path(cfg, "out", "--out");
    const TrainConfig tcfg = train_config(cfg);
    const auto split = stratified_split(index, split_spec(cfg));
    const Preprocessing pre{net.config()->image_size, get<bool>(cfg, "invert")};
    fs::create_directories(dir);
    write_json(dir / "config.json", cfg);
    write_listing(dir / "train.txt", split.train);
    write_listing(dir / "test.txt", split.test);
    out << "train=" << split.train.size() << " test=" << split.test.size() << " classes=" << index.class_count()
        << '\n';
    report_freeze(net, out);

    const auto train_set = load_images<float>(split.train, pre.image_size, pre.invert);
    const auto test_set = load_images<float>(split.test, pre.image_size, pre.invert);
    AdamState<float> optimizer(tcfg.adam);
    const auto history = train(net, optimizer, train_set, &test_set, tcfg, [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " train_loss=" << fmt6(r.train_loss) << " train_acc=" << fmt6(r.train_acc)
            << " val_loss=" << fmt6(r.val_loss) << " val_acc=" << fmt6(r.val_acc) << std::endl;
        return true;
    });
    save_checkpoint(net, index.manifest, pre, dir / kCheckpointFile, &optimizer);
    export_metrics(history, dir / "metrics.csv");
    write_history(history, dir / "history.json");
    write_timing(history, dir / "timing.log");
    out << "wrote " << (dir / kCheckpointFile).string() << '\n';
}

int cmd_split(const Command& cmd, std::ostream& out, std::ostream& err) {
    const json cfg = resolve(explicit_settings(cmd));
    const fs::path dir = require_path(cfg, "out", "--out");
    const SplitSpec spec = split_spec(cfg);
    const DatasetIndex index = prepare_index(cfg, err);
    const auto split = stratified_split(index, spec);
    fs::create_directories(dir);
    write_listing(dir / "train.txt", split.train);
    write_listing(dir / "test.txt", split.test);
    write_json(dir / "config.json", cfg);
    out << "train=" << split.train.size() << " test=" << split.test.size() << '\n';
    return kExitOk;
}

int cmd_train(const Command& cmd, std::ostream& out, std::ostream& err) {
    const json cfg = resolve(explicit_settings(cmd));
    (void)train_config(cfg);
    (void)split_spec(cfg);
    (void)parse_family(get<std::string>(cfg, "arch"));
    const DatasetIndex index = prepare_index(cfg, err);
    auto net = build_network<float>(arch_config(cfg, index.class_count()), get<std::uint64_t>(cfg, "seed"));
    fit_and_save(net, cfg, index, out);
    return kExitOk;
}

int cmd_transfer(const Command& cmd, const std::string& base_path, std::ostream& out, std::ostream& err) {
    if (base_path.empty()) {
        throw UsageError("--base is required");
    }
    const auto base = load_checkpoint<float>(base_path);
    // Architecture settings not given explicitly come from the base model.
    json given = explicit_settings(cmd);
    json inherited = {{"arch", to_string(base.arch.family)},
                      {"image_size", base.preprocessing.image_size},
                      {"invert", base.preprocessing.invert},
                      {"stage_widths", base.arch.stage_widths},
                      {"blocks_per_stage", base.arch.blocks_per_stage},
                      {"dropout", base.arch.dropout_rate},
                      {"dense_units", base.arch.dense_units}};
    inherited.merge_patch(given);
    json cfg = resolve(inherited);
    cfg["base"] = base_path;
    (void)train_config(cfg);
    (void)split_spec(cfg);
    const DatasetIndex index = prepare_index(cfg, err);
    auto net = transfer(base, arch_config(cfg, index.class_count()), get<std::uint64_t>(cfg, "seed"));
    fit_and_save(net, cfg, index, out);
    return kExitOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& listing, std::size_t batch_size, std::ostream& out) {
    if (ckpt_path.empty() || listing.empty()) {
        throw UsageError("--checkpoint and --listing are required");
    }
    if (batch_size == 0) {
        throw UsageError("--batch-size must be at least 1");
    }
    const auto ckpt = load_checkpoint<float>(ckpt_path);
    DatasetIndex index;
    try {
        index = read_listing(listing, ckpt.manifest);
    } catch (const LabelError& e) {
        throw EvaluationError(std::string("listing does not match the checkpoint's ") +
                              std::to_string(ckpt.manifest.size()) + " classes: " + e.what());
    }
    if (index.entries.empty()) {
        throw UsageError("listing " + listing + " is empty");
    }
    auto net = network_from_checkpoint(ckpt);
    const auto data = load_images<float>(index, ckpt.preprocessing.image_size, ckpt.preprocessing.invert);
    const auto per_category = evaluate_by_category(net, data, ckpt.manifest, batch_size);
    const auto all = evaluate(net, data, batch_size);
    out << "loss=" << fmt6(all.loss) << " acc=" << fmt6(all.accuracy) << '\n';
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
        const auto cat = static_cast<Category>(c);
        const bool in_manifest = std::any_of(ckpt.manifest.classes.begin(), ckpt.manifest.classes.end(),
                                             [&](const ClassInfo& ci) { return ci.category == cat; });
        if (!in_manifest) {
            continue;
        }
        const auto& m = per_category[c];
        out << "category=" << to_string(cat) << " samples=" << m.samples << " loss=" << fmt6(m.loss)
            << " acc=" << fmt6(m.accuracy) << '\n';
    }
    return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image, std::size_t top_k, std::ostream& out) {
    if (ckpt_path.empty() || image.empty()) {
        throw UsageError("--checkpoint and --image are required");
    }
    const auto ckpt = load_checkpoint<float>(ckpt_path);
    const std::size_t classes = ckpt.manifest.size();
    if (top_k < 1 || top_k > classes) {
        throw UsageError("--top-k must lie in [1, " + std::to_string(classes) + "]");
    }
    auto net = network_from_checkpoint(ckpt);
    const Tensor x = load_image(image, ckpt.preprocessing.image_size, ckpt.preprocessing.invert);
    const Tensor probs = net.forward(x, Mode::eval);
    std::vector<std::size_t> order(classes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    for (std::size_t r = 0; r < top_k; ++r) {
        const std::size_t c = order[r];
        out << r + 1 << ' ' << ckpt.manifest.classes[c].name << ' ' << fmt6(probs[c]) << '\n';
    }
    return kExitOk;
}

int cmd_export(const std::string& history, const std::string& path, std::ostream& out) {
    if (history.empty() || path.empty()) {
        throw UsageError("--history and --out are required");
    }
    const auto h = read_history(history);
    export_metrics(h, path);
    out << "wrote " << h.records.size() << " epochs to " << path << '\n';
    return kExitOk;
}

void add_data_flags(Command& c) {
    c.flags.add<std::string>(c.app, "--data", "data", "dataset root (<root>/<class-id>/<images>)");
    c.flags.add<std::string>(c.app, "--manifest", "manifest", "class manifest JSON (default: standard 84 classes)");
    c.flags.add<std::string>(c.app, "--category", "category", "vowel|consonant|numeric|compound|all")
        ->check(CLI::IsMember({"vowel", "consonant", "numeric", "compound", "all"}));
    c.flags.add<std::size_t>(c.app, "--classes", "classes", "keep only the first N classes");
    c.flags.add<std::size_t>(c.app, "--per-class", "per_class", "seeded sub-sample of at most N images per class");
    c.flags.add<std::size_t>(c.app, "--subset", "subset", "seeded stratified sub-sample of N images");
    c.flags.add<double>(c.app, "--fraction", "fraction", "train fraction of the split");
    c.flags.add<std::uint64_t>(c.app, "--seed", "seed", "seed for splitting, initialization and shuffling");
    c.flags.add<std::string>(c.app, "--out", "out", "output directory");
    c.app->add_option("--config", c.config_path, "JSON run configuration; flags override its values");
}

void add_train_flags(Command& c) {
    c.flags.add<std::string>(c.app, "--arch", "arch", "simple-cnn|mini-resnet|mini-mobilenet");
    c.flags.add<std::size_t>(c.app, "--image-size", "image_size", "square input size");
    c.flags.add<std::size_t>(c.app, "--epochs", "epochs", "training epochs");
    c.flags.add<std::size_t>(c.app, "--batch-size", "batch_size", "mini-batch size");
    c.flags.add<double>(c.app, "--lr", "lr", "Adam learning rate");
    c.flags.add<std::size_t>(c.app, "--freeze-prefix", "freeze_prefix", "number of leading units to freeze");
    c.flags.add<std::string>(c.app, "--freeze-granularity", "freeze_granularity", "block|layer");
    c.flags.add<bool>(c.app, "--invert", "invert", "map pixel v to 1 - v after loading (true|false)");
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"gradeshi: train and evaluate handwritten character classifiers"};
    app.require_subcommand(1);

    Command split, train_cmd, transfer_cmd;
    split.app = app.add_subcommand("split", "write stratified train/test listings");
    add_data_flags(split);
    train_cmd.app = app.add_subcommand("train", "train a network from scratch");
    add_data_flags(train_cmd);
    add_train_flags(train_cmd);
    transfer_cmd.app = app.add_subcommand("transfer", "fine-tune from a checkpoint with a fresh head");
    add_data_flags(transfer_cmd);
    add_train_flags(transfer_cmd);
    std::string base;
    transfer_cmd.app->add_option("--base", base, "checkpoint providing the trunk")->required();

    std::string ckpt, listing, image, history, export_out;
    std::size_t eval_batch = 64, top_k = 5;
    auto* evaluate_app = app.add_subcommand("evaluate", "loss and accuracy of a checkpoint on a listing");
    evaluate_app->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    evaluate_app->add_option("--listing", listing, "file of path,class-id lines")->required();
    evaluate_app->add_option("--batch-size", eval_batch, "evaluation batch size");
    auto* predict_app = app.add_subcommand("predict", "top-k classes for one image");
    predict_app->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    predict_app->add_option("--image", image, "image file")->required();
    predict_app->add_option("--top-k", top_k, "number of classes to print");
    auto* export_app = app.add_subcommand("export-metrics", "write metrics CSV from a history file");
    export_app->add_option("--history", history, "history.json written by train")->required();
    export_app->add_option("--out", export_out, "CSV path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (split.app->parsed()) {
            return cmd_split(split, out, err);
        }
        if (train_cmd.app->parsed()) {
            return cmd_train(train_cmd, out, err);
        }
        if (transfer_cmd.app->parsed()) {
            return cmd_transfer(transfer_cmd, base, out, err);
        }
        if (evaluate_app->parsed()) {
            return cmd_evaluate(ckpt, listing, eval_batch, out);
        }
        if (predict_app->parsed()) {
            return cmd_predict(ckpt, image, top_k, out);
        }
        return cmd_export(history, export_out, out);
    } catch (const Error& e) {
        err << e.what() << '\n';
        return e.kind() == ErrorKind::usage ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

} // namespace gradeshi
