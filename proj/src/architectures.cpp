#include "gradeshi/architectures.hpp"

#include "gradeshi/random.hpp"

namespace gradeshi {

std::string_view to_string(Family family) noexcept {
    switch (family) {
    case Family::simple_cnn: return "simple-cnn";
    case Family::mini_resnet: return "mini-resnet";
    case Family::mini_mobilenet: return "mini-mobilenet";
    }
    return "unknown";
}

std::string_view to_string(FreezeGranularity granularity) noexcept {
    return granularity == FreezeGranularity::block ? "block" : "layer";
}

Family parse_family(std::string_view text) {
    for (Family f : {Family::simple_cnn, Family::mini_resnet, Family::mini_mobilenet}) {
        if (text == to_string(f)) {
            return f;
        }
    }
    throw UsageError("unknown architecture '" + std::string(text) +
                     "' (expected simple-cnn, mini-resnet or mini-mobilenet)");
}

FreezeGranularity parse_granularity(std::string_view text) {
    if (text == "block") {
        return FreezeGranularity::block;
    }
    if (text == "layer") {
        return FreezeGranularity::layer;
    }
    throw UsageError("unknown freeze granularity '" + std::string(text) + "' (expected block or layer)");
}

ArchConfig ArchConfig::resolved() const {
    ArchConfig r = *this;
    switch (family) {
    case Family::simple_cnn:
        if (r.stage_widths.empty()) r.stage_widths = {kSimpleCnnFirstWidth, 64};
        if (r.blocks_per_stage == 0) r.blocks_per_stage = 1;
        break;
    case Family::mini_resnet:
        if (r.stage_widths.empty()) r.stage_widths = {64, 128, 256};
        if (r.blocks_per_stage == 0) r.blocks_per_stage = 2;
        break;
    case Family::mini_mobilenet:
        if (r.stage_widths.empty()) r.stage_widths = {32, 64, 128, 256};
        if (r.blocks_per_stage == 0) r.blocks_per_stage = 1;
        break;
    }
    return r;
}

void to_json(nlohmann::json& j, const ArchConfig& cfg) {
    j = nlohmann::json{
        {"family", std::string(to_string(cfg.family))},
        {"image_size", cfg.image_size},
        {"input_channels", cfg.input_channels},
        {"class_count", cfg.class_count},
        {"stage_widths", cfg.stage_widths},
        {"blocks_per_stage", cfg.blocks_per_stage},
        {"dropout_rate", cfg.dropout_rate},
        {"dense_units", cfg.dense_units},
        {"freeze_prefix", cfg.freeze_prefix},
        {"freeze_granularity", std::string(to_string(cfg.freeze_granularity))},
    };
}

void from_json(const nlohmann::json& j, ArchConfig& cfg) {
    cfg.family = parse_family(j.at("family").get<std::string>());
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.input_channels = j.value("input_channels", std::size_t{1});
    cfg.class_count = j.at("class_count").get<std::size_t>();
    cfg.stage_widths = j.value("stage_widths", std::vector<std::size_t>{});
    cfg.blocks_per_stage = j.value("blocks_per_stage", std::size_t{0});
    cfg.dropout_rate = j.value("dropout_rate", 0.5);
    cfg.dense_units = j.value("dense_units", std::size_t{128});
    cfg.freeze_prefix = j.value("freeze_prefix", std::size_t{0});
    cfg.freeze_granularity = parse_granularity(j.value("freeze_granularity", std::string("block")));
}

std::size_t downsampling_factor(const ArchConfig& raw) {
    const ArchConfig cfg = raw.resolved();
    const std::size_t stages = cfg.stage_widths.size();
    std::size_t factor = 1;
    switch (cfg.family) {
    case Family::simple_cnn:
        for (std::size_t s = 0; s < stages; ++s) factor *= kPoolSize;
        break;
    case Family::mini_resnet:
        factor = kPoolSize;
        for (std::size_t s = 1; s < stages; ++s) factor *= 2;
        break;
    case Family::mini_mobilenet:
        factor = 2;
        for (std::size_t s = 1; s < stages; ++s) factor *= 2;
        break;
    }
    return factor;
}

namespace {

void check_config(const ArchConfig& cfg, Family expected) {
    if (cfg.family != expected) {
        throw ConfigError("builder for " + std::string(to_string(expected)) + " given a " +
                          std::string(to_string(cfg.family)) + " config");
    }
    if (cfg.class_count < 2) {
        throw ConfigError("class count must be >= 2, got " + std::to_string(cfg.class_count));
    }
    if (cfg.input_channels == 0 || cfg.dense_units == 0) {
        throw ConfigError("input channels and dense units must be >= 1");
    }
    if (cfg.stage_widths.empty() || cfg.blocks_per_stage == 0) {
        throw ConfigError("at least one stage with one block is required");
    }
    for (std::size_t w : cfg.stage_widths) {
        if (w == 0) {
            throw ConfigError("stage widths must be >= 1");
        }
    }
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
    const std::size_t factor = downsampling_factor(cfg);
    if (cfg.image_size < 2 * factor) {
        throw ConfigError("image size " + std::to_string(cfg.image_size) + " is too small for a trunk that " +
                          "downsamples by " + std::to_string(factor) + " (need >= " + std::to_string(2 * factor) +
                          ")");
    }
}

template <typename T>
void finish(Network<T>& net, const ArchConfig& cfg, std::uint64_t seed) {
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& layer = net.layer(i);
        layer.reset_parameters(mix_seed(seed, i));
        if (auto* d = dynamic_cast<Dropout<T>*>(&layer)) {
            d->reseed(mix_seed(seed ^ 0xd50f, i));
        }
    }
    try {
        net.validate();
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("architecture does not fit the input: ") + e.what());
    }
    net.set_config(cfg);
    set_trainable_prefix(net, cfg.freeze_prefix, cfg.freeze_granularity);
}

} // namespace

template <typename T>
Network<T> build_simple_cnn(const ArchConfig& raw, std::uint64_t seed) {
    const ArchConfig cfg = raw.resolved();
    check_config(cfg, Family::simple_cnn);
    Network<T> net(Shape(1, cfg.image_size, cfg.image_size, cfg.input_channels), cfg.class_count);
    std::size_t channels = cfg.input_channels;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const int unit = static_cast<int>(s);
        const std::string p = "s" + std::to_string(s);
        const std::size_t width = cfg.stage_widths[s];
        for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
            net.add(p + ".conv" + std::to_string(b), std::make_unique<Conv2d<T>>(kKernelSize, channels, width), unit);
            net.add(p + ".relu" + std::to_string(b), std::make_unique<Relu<T>>(), unit);
            channels = width;
        }
        net.add(p + ".pool", std::make_unique<MaxPool2d<T>>(kPoolSize), unit);
    }
    // Feature count after the pooling chain.
    std::size_t side = cfg.image_size;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        side = side >= kPoolSize ? (side - kPoolSize) / kPoolSize + 1 : 0;
    }
    const std::size_t features = side * side * channels;
    if (features == 0) {
        throw ConfigError("image size " + std::to_string(cfg.image_size) + " vanishes in the pooling chain");
    }
    const int head = Network<T>::kHead;
    net.add("head.flatten", std::make_unique<Flatten<T>>(), head);
    net.add("head.dense", std::make_unique<Dense<T>>(features, cfg.dense_units), head);
    net.add("head.relu", std::make_unique<Relu<T>>(), head);
    net.add("head.dropout", std::make_unique<Dropout<T>>(cfg.dropout_rate, 0), head);
    net.add("head.logits", std::make_unique<Dense<T>>(cfg.dense_units, cfg.class_count), head);
    net.add("head.softmax", std::make_unique<Softmax<T>>(), head);
    finish(net, cfg, seed);
    return net;
}

template <typename T>
Network<T> build_mini_resnet(const ArchConfig& raw, std::uint64_t seed) {
    const ArchConfig cfg = raw.resolved();
    check_config(cfg, Family::mini_resnet);
    Network<T> net(Shape(1, cfg.image_size, cfg.image_size, cfg.input_channels), cfg.class_count);
    net.add("stem.conv", std::make_unique<Conv2d<T>>(kKernelSize, cfg.input_channels, kResnetStemWidth), 0);
    net.add("stem.bn", std::make_unique<BatchNorm<T>>(kResnetStemWidth), 0);
    net.add("stem.relu", std::make_unique<Relu<T>>(), 0);
    int last = net.add("stem.pool", std::make_unique<MaxPool2d<T>>(kPoolSize), 0);
    std::size_t channels = kResnetStemWidth;
    int unit = 1;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const std::size_t width = cfg.stage_widths[s];
        for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b, ++unit) {
            const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string p = "s" + std::to_string(s) + "b" + std::to_string(b);
            const int block_in = last;
            net.add(p + ".conv1", std::make_unique<Conv2d<T>>(kKernelSize, channels, width, stride), unit);
            net.add(p + ".bn1", std::make_unique<BatchNorm<T>>(width), unit);
            net.add(p + ".relu1", std::make_unique<Relu<T>>(), unit);
            net.add(p + ".conv2", std::make_unique<Conv2d<T>>(kKernelSize, width, width), unit);
            const int main = net.add(p + ".bn2", std::make_unique<BatchNorm<T>>(width), unit);
            int skip = block_in;
            if (stride != 1 || channels != width) {
                net.add(p + ".proj", std::make_unique<Conv2d<T>>(1, channels, width, stride), unit, {block_in});
                skip = net.add(p + ".proj_bn", std::make_unique<BatchNorm<T>>(width), unit);
            }
            net.add(p + ".add", std::make_unique<ResidualAdd<T>>(), unit, {main, skip});
            last = net.add(p + ".relu2", std::make_unique<Relu<T>>(), unit);
            channels = width;
        }
    }
    const int head = Network<T>::kHead;
    net.add("head.gap", std::make_unique<GlobalAvgPool<T>>(), head);
    net.add("head.dropout", std::make_unique<Dropout<T>>(cfg.dropout_rate, 0), head);
    net.add("head.logits", std::make_unique<Dense<T>>(channels, cfg.class_count), head);
    net.add("head.softmax", std::make_unique<Softmax<T>>(), head);
    finish(net, cfg, seed);
    return net;
}

template <typename T>
Network<T> build_mini_mobilenet(const ArchConfig& raw, std::uint64_t seed) {
    const ArchConfig cfg = raw.resolved();
    check_config(cfg, Family::mini_mobilenet);
    Network<T> net(Shape(1, cfg.image_size, cfg.image_size, cfg.input_channels), cfg.class_count);
    const std::size_t stem = cfg.stage_widths.front();
    net.add("stem.conv", std::make_unique<Conv2d<T>>(kKernelSize, cfg.input_channels, stem, 2), 0);
    net.add("stem.bn", std::make_unique<BatchNorm<T>>(stem), 0);
    net.add("stem.relu", std::make_unique<Relu<T>>(), 0);
    std::size_t channels = stem;
    int unit = 1;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const std::size_t width = cfg.stage_widths[s];
        for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b, ++unit) {
            const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string p = "s" + std::to_string(s) + "b" + std::to_string(b);
            net.add(p + ".dw", std::make_unique<DepthwiseConv2d<T>>(kKernelSize, channels, stride), unit);
            net.add(p + ".dw_bn", std::make_unique<BatchNorm<T>>(channels), unit);
            net.add(p + ".dw_relu", std::make_unique<Relu<T>>(), unit);
            net.add(p + ".pw", std::make_unique<Conv2d<T>>(1, channels, width), unit);
            net.add(p + ".pw_bn", std::make_unique<BatchNorm<T>>(width), unit);
            net.add(p + ".pw_relu", std::make_unique<Relu<T>>(), unit);
            channels = width;
        }
    }
    const int head = Network<T>::kHead;
    net.add("head.gap", std::make_unique<GlobalAvgPool<T>>(), head);
    net.add("head.dense", std::make_unique<Dense<T>>(channels, cfg.dense_units), head);
    net.add("head.relu", std::make_unique<Relu<T>>(), head);
    net.add("head.dropout", std::make_unique<Dropout<T>>(cfg.dropout_rate, 0), head);
    net.add("head.logits", std::make_unique<Dense<T>>(cfg.dense_units, cfg.class_count), head);
    net.add("head.softmax", std::make_unique<Softmax<T>>(), head);
    finish(net, cfg, seed);
    return net;
}

template <typename T>
Network<T> build_network(const ArchConfig& cfg, std::uint64_t seed) {
    switch (cfg.family) {
    case Family::simple_cnn: return build_simple_cnn<T>(cfg, seed);
    case Family::mini_resnet: return build_mini_resnet<T>(cfg, seed);
    case Family::mini_mobilenet: return build_mini_mobilenet<T>(cfg, seed);
    }
    throw ConfigError("unknown architecture family");
}

template <typename T>
Network<T>& set_trainable_prefix(Network<T>& net, std::size_t prefix, FreezeGranularity granularity) {
    const std::size_t total = granularity == FreezeGranularity::block ? net.unit_count() : net.size();
    if (prefix > total) {
        throw ConfigError("freeze prefix " + std::to_string(prefix) + " exceeds the " + std::to_string(total) + " " +
                          (granularity == FreezeGranularity::block ? "trunk blocks" : "layers") +
                          " of this network");
    }
    for (std::size_t i = 0; i < net.size(); ++i) {
        const auto& node = net.node(i);
        const bool frozen = granularity == FreezeGranularity::block
                                ? node.unit >= 0 && static_cast<std::size_t>(node.unit) < prefix
                                : i < prefix;
        net.layer(i).set_trainable(!frozen);
    }
    if (net.config()) {
        ArchConfig cfg = *net.config();
        cfg.freeze_prefix = prefix;
        cfg.freeze_granularity = granularity;
        net.set_config(cfg);
    }
    return net;
}

template <typename T>
void reset_head(Network<T>& net, std::uint64_t seed) {
    for (std::size_t i = 0; i < net.size(); ++i) {
        if (net.node(i).unit == Network<T>::kHead) {
            net.layer(i).reset_parameters(mix_seed(seed, i));
            if (auto* d = dynamic_cast<Dropout<T>*>(&net.layer(i))) {
                d->reseed(mix_seed(seed ^ 0xd50f, i));
            }
        }
    }
}

#define GRADESHI_INSTANTIATE(T)                                                                      \
    template Network<T> build_simple_cnn<T>(const ArchConfig&, std::uint64_t);                      \
    template Network<T> build_mini_resnet<T>(const ArchConfig&, std::uint64_t);                     \
    template Network<T> build_mini_mobilenet<T>(const ArchConfig&, std::uint64_t);                  \
    template Network<T> build_network<T>(const ArchConfig&, std::uint64_t);                         \
    template Network<T>& set_trainable_prefix<T>(Network<T>&, std::size_t, FreezeGranularity);      \
    template void reset_head<T>(Network<T>&, std::uint64_t);

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
