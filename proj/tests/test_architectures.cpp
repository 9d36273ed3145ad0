#include <gtest/gtest.h>

#include <cmath>

#include "gradeshi/architectures.hpp"
#include "gradeshi/optimization.hpp"
#include "gradeshi/random.hpp"
#include "support/gradcheck.hpp"

using namespace gradeshi;

namespace {

ArchConfig config(Family family, std::size_t image, std::size_t classes = 84) {
    ArchConfig cfg;
    cfg.family = family;
    cfg.image_size = image;
    cfg.class_count = classes;
    return cfg;
}

// A small config per family that still exercises every block type.
ArchConfig tiny(Family family) {
    ArchConfig cfg;
    cfg.family = family;
    cfg.class_count = 5;
    cfg.dense_units = 8;
    switch (family) {
    case Family::simple_cnn:
        cfg.image_size = 18;
        cfg.stage_widths = {4, 6};
        break;
    case Family::mini_resnet:
        cfg.image_size = 12;
        cfg.stage_widths = {4, 6};
        break;
    case Family::mini_mobilenet:
        cfg.image_size = 16;
        cfg.stage_widths = {4, 6, 8};
        break;
    }
    return cfg;
}

template <typename T>
BasicTensor<T> random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
    return BasicTensor<T>::create(Shape(batch, size, size, 1), fill::Uniform{0.0, 1.0, seed});
}

template <typename T>
BasicTensor<T> random_targets(std::size_t batch, std::size_t classes, std::uint64_t seed) {
    BasicTensor<T> y(Shape::matrix(batch, classes));
    Rng rng(seed);
    for (std::size_t b = 0; b < batch; ++b) y.at(b, 0, 0, rng.index(classes)) = T(1);
    return y;
}

void zero_out(Tensor& t) { t = Tensor::zeros(t.shape()); }

const Family kFamilies[] = {Family::simple_cnn, Family::mini_resnet, Family::mini_mobilenet};

} // namespace

// ---- builder examples ---------------------------------------------------------

TEST(SimpleCnn, OutputShapeFor84Classes) {
    auto net = build_simple_cnn<float>(config(Family::simple_cnn, 32), 1);
    auto y = net.forward(random_images<float>(3, 32, 2), Mode::eval);
    EXPECT_EQ(y.shape(), Shape::matrix(3, 84));
}

TEST(SimpleCnn, FirstConvHas32Filters) {
    auto net = build_simple_cnn<float>(config(Family::simple_cnn, 32), 1);
    const auto& first = net.layer(0);
    ASSERT_EQ(first.kind(), LayerKind::conv2d);
    EXPECT_EQ(first.params().at("weights").shape(), Shape(3, 3, 1, 32));
    EXPECT_EQ(first.parameter_count(), 3u * 3u * 1u * 32u + 32u);
    EXPECT_EQ(first.parameter_count(), 320u);
}

TEST(SimpleCnn, StageLayout) {
    auto net = build_simple_cnn<float>(config(Family::simple_cnn, 32), 1);
    const char* expected[] = {"s0.conv0", "s0.relu0", "s0.pool", "s1.conv0", "s1.relu0", "s1.pool",
                              "head.flatten", "head.dense", "head.relu", "head.dropout", "head.logits",
                              "head.softmax"};
    ASSERT_EQ(net.size(), std::size(expected));
    for (std::size_t i = 0; i < net.size(); ++i) EXPECT_EQ(net.node(i).name, expected[i]);
    EXPECT_EQ(net.layer(2).kind(), LayerKind::maxpool2d);
}

TEST(MiniResnet, StemIs64Wide) {
    auto net = build_mini_resnet<float>(config(Family::mini_resnet, 32), 1);
    EXPECT_EQ(net.node(0).name, "stem.conv");
    EXPECT_EQ(net.layer(0).params().at("weights").shape(), Shape(3, 3, 1, 64));
    EXPECT_EQ(net.node(3).name, "stem.pool");
}

TEST(MiniResnet, DropoutDefaultsToHalf) {
    EXPECT_EQ(ArchConfig{}.dropout_rate, 0.5);
    auto net = build_mini_resnet<float>(config(Family::mini_resnet, 32), 1);
    auto idx = net.find("head.dropout");
    ASSERT_TRUE(idx.has_value());
    EXPECT_EQ(dynamic_cast<const Dropout<float>&>(net.layer(*idx)).rate(), 0.5);
}

TEST(MiniResnet, ZeroConvWeightsGiveUniformOutput) {
    auto net = build_mini_resnet<float>(config(Family::mini_resnet, 32), 3);
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& layer = net.layer(i);
        if (layer.kind() == LayerKind::conv2d || layer.kind() == LayerKind::pointwise_conv2d) {
            zero_out(layer.params().at("weights"));
        }
    }
    for (Mode mode : {Mode::eval, Mode::train}) {
        auto y = net.forward(random_images<float>(4, 32, 7), mode);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y[i], 1.0f / 84.0f);
        EXPECT_EQ(y.values(), net.forward(random_images<float>(4, 32, 8), mode).values());
    }
}

TEST(MiniMobilenet, OutputHas84Classes) {
    auto net = build_mini_mobilenet<float>(config(Family::mini_mobilenet, 32), 1);
    EXPECT_EQ(net.node_shapes(2).back(), Shape::matrix(2, 84));
    EXPECT_EQ(net.forward(random_images<float>(2, 32, 1), Mode::eval).shape(), Shape::matrix(2, 84));
}

TEST(MiniMobilenet, DepthwiseLayersHaveOneKernelPerChannel) {
    auto net = build_mini_mobilenet<float>(config(Family::mini_mobilenet, 32), 1);
    const auto shapes = net.node_shapes(1);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        if (net.layer(i).kind() != LayerKind::depthwise_conv2d) continue;
        ++seen;
        const std::size_t channels = shapes[i].channels();
        EXPECT_EQ(net.layer(i).params().at("weights").shape(), Shape(3, 3, channels, 1)) << net.node(i).name;
    }
    EXPECT_EQ(seen, 4u);
}

TEST(MiniMobilenet, SeparableBlockParameterArithmetic) {
    ArchConfig cfg = config(Family::mini_mobilenet, 32);
    cfg.stage_widths = {64};
    auto net = build_mini_mobilenet<float>(cfg, 1);
    const auto& dw = net.layer(*net.find("s0b0.dw")).params().at("weights");
    const auto& pw = net.layer(*net.find("s0b0.pw")).params().at("weights");
    EXPECT_EQ(dw.size() + pw.size(), 4672u);
    EXPECT_EQ(3u * 3u * 64u * 64u, 36864u);
}

// ---- graph invariants ----------------------------------------------------------

class Builders : public ::testing::TestWithParam<std::tuple<Family, std::size_t>> {};

TEST_P(Builders, ShapeAudit) {
    const auto [family, size] = GetParam();
    auto net = build_network<float>(config(family, size), 5);
    const auto shapes = net.node_shapes(2);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        for (std::size_t e : shapes[i].extents) EXPECT_GT(e, 0u) << net.node(i).name;
    }
    EXPECT_EQ(shapes.back(), Shape::matrix(2, 84));
    EXPECT_NO_THROW(net.validate());
    for (auto [src, dst] : net.skip_edges()) EXPECT_LT(src, dst);
    EXPECT_EQ(net.layer(net.size() - 1).kind(), LayerKind::softmax);
}

TEST_P(Builders, ForwardMatchesAudit) {
    const auto [family, size] = GetParam();
    auto net = build_network<float>(config(family, size), 5);
    auto trace = net.forward_trace(random_images<float>(2, size, 3), Mode::train);
    const auto shapes = net.node_shapes(2);
    ASSERT_EQ(trace.size(), shapes.size());
    for (std::size_t i = 0; i < trace.size(); ++i) EXPECT_EQ(trace[i].shape(), shapes[i]) << net.node(i).name;
    double sum = 0.0;
    for (std::size_t c = 0; c < 84; ++c) sum += trace.back().at(0, 0, 0, c);
    EXPECT_NEAR(sum, 1.0, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(AllSizes, Builders,
                         ::testing::Combine(::testing::ValuesIn(kFamilies), ::testing::Values(50u, 100u, 160u)),
                         [](const auto& info) {
                             std::string name(to_string(std::get<0>(info.param)));
                             for (auto& ch : name)
                                 if (ch == '-') ch = '_';
                             return name + "_" + std::to_string(std::get<1>(info.param));
                         });

TEST(Builders, SameSeedIsBitIdentical) {
    for (Family f : kFamilies) {
        auto a = build_network<float>(config(f, 50), 11);
        auto b = build_network<float>(config(f, 50), 11);
        auto c = build_network<float>(config(f, 50), 12);
        const auto sa = a.state(), sb = b.state(), sc = c.state();
        ASSERT_EQ(sa.size(), sb.size());
        bool any_diff = false;
        for (const auto& [k, v] : sa) {
            EXPECT_EQ(v.values(), sb.at(k).values()) << k;
            any_diff = any_diff || v.values() != sc.at(k).values();
        }
        EXPECT_TRUE(any_diff) << to_string(f);
    }
}

TEST(Builders, DropoutMasksReplayWithSeed) {
    auto cfg = config(Family::simple_cnn, 32);
    auto a = build_network<float>(cfg, 4);
    auto b = build_network<float>(cfg, 4);
    auto x = random_images<float>(3, 32, 5);
    for (int step = 0; step < 3; ++step) {
        EXPECT_EQ(a.forward(x, Mode::train).values(), b.forward(x, Mode::train).values());
    }
}

TEST(Builders, ConfigErrors) {
    EXPECT_THROW(build_simple_cnn<float>(config(Family::simple_cnn, 17), 0), ConfigError);
    EXPECT_NO_THROW(build_simple_cnn<float>(config(Family::simple_cnn, 18), 0));
    EXPECT_THROW(build_mini_resnet<float>(config(Family::mini_resnet, 23), 0), ConfigError);
    EXPECT_NO_THROW(build_mini_resnet<float>(config(Family::mini_resnet, 24), 0));
    EXPECT_THROW(build_mini_mobilenet<float>(config(Family::mini_mobilenet, 31), 0), ConfigError);
    EXPECT_NO_THROW(build_mini_mobilenet<float>(config(Family::mini_mobilenet, 32), 0));
    EXPECT_THROW(build_simple_cnn<float>(config(Family::simple_cnn, 32, 1), 0), ConfigError);
    EXPECT_THROW(build_mini_resnet<float>(config(Family::simple_cnn, 32), 0), ConfigError);
    auto bad = config(Family::simple_cnn, 32);
    bad.dropout_rate = 1.0;
    EXPECT_THROW(build_network<float>(bad, 0), ConfigError);
    bad = config(Family::mini_mobilenet, 32);
    bad.stage_widths = {8, 0};
    EXPECT_THROW(build_network<float>(bad, 0), ConfigError);
}

TEST(Builders, DownsamplingFactor) {
    EXPECT_EQ(downsampling_factor(config(Family::simple_cnn, 64)), 9u);
    EXPECT_EQ(downsampling_factor(config(Family::mini_resnet, 64)), 12u);
    EXPECT_EQ(downsampling_factor(config(Family::mini_mobilenet, 64)), 16u);
}

TEST(ArchConfigJson, RoundTrip) {
    ArchConfig cfg = config(Family::mini_mobilenet, 100, 11);
    cfg.stage_widths = {8, 16};
    cfg.freeze_prefix = 5;
    cfg.freeze_granularity = FreezeGranularity::layer;
    cfg.dropout_rate = 0.25;
    nlohmann::json j = cfg;
    EXPECT_EQ(j.get<ArchConfig>(), cfg);
    EXPECT_THROW(parse_family("vgg"), UsageError);
}

// ---- residual identity -----------------------------------------------------------

TEST(MiniResnet, ZeroMainBranchIsReluOfSkip) {
    auto net = build_mini_resnet<float>(config(Family::mini_resnet, 32), 21);
    // s0b0 has an identity skip (64 -> 64); s1b0 projects (64 -> 128, stride 2).
    for (const std::string block : {"s0b0", "s1b0", "s2b1"}) {
        for (const char* conv : {".conv1", ".conv2"}) {
            zero_out(net.layer(*net.find(block + conv)).params().at("weights"));
        }
    }
    for (Mode mode : {Mode::eval, Mode::train}) {
        const auto trace = net.forward_trace(random_images<float>(3, 32, 22), mode);
        for (const std::string block : {"s0b0", "s1b0", "s2b1"}) {
            const std::size_t add = *net.find(block + ".add");
            const int skip = net.node(add).inputs.at(1);
            ASSERT_GE(skip, 0);
            const auto expected = ops::relu(trace[static_cast<std::size_t>(skip)]);
            const auto& out = trace[*net.find(block + ".relu2")];
            EXPECT_EQ(out.values(), expected.values()) << block;
        }
        EXPECT_EQ(net.node(*net.find("s1b0.add")).inputs.at(1), static_cast<int>(*net.find("s1b0.proj_bn")));
        EXPECT_EQ(net.node(*net.find("s0b0.add")).inputs.at(1), static_cast<int>(*net.find("stem.pool")));
    }
}

// ---- freezing ---------------------------------------------------------------------

TEST(Freeze, ZeroPrefixLeavesEverythingTrainable) {
    for (Family f : kFamilies) {
        auto net = build_network<float>(config(f, 50), 1);
        for (std::size_t i = 0; i < net.size(); ++i) EXPECT_TRUE(net.layer(i).trainable());
    }
}

TEST(Freeze, ResnetFirstSevenBlocks) {
    auto cfg = config(Family::mini_resnet, 50);
    auto net = build_network<float>(cfg, 1);
    ASSERT_EQ(net.unit_count(), 7u);
    set_trainable_prefix(net, 7, FreezeGranularity::block);
    for (std::size_t i = 0; i < net.size(); ++i) {
        const bool trunk = net.node(i).unit >= 0;
        EXPECT_EQ(net.layer(i).trainable(), !trunk) << net.node(i).name;
    }
    set_trainable_prefix(net, 3, FreezeGranularity::block);
    EXPECT_FALSE(net.layer(*net.find("stem.conv")).trainable());
    EXPECT_FALSE(net.layer(*net.find("s0b1.conv2")).trainable());
    EXPECT_TRUE(net.layer(*net.find("s1b0.conv1")).trainable());
    EXPECT_TRUE(net.layer(*net.find("s1b0.proj")).trainable());
    ASSERT_TRUE(net.config().has_value());
    EXPECT_EQ(net.config()->freeze_prefix, 3u);
    EXPECT_THROW(set_trainable_prefix(net, 8, FreezeGranularity::block), ConfigError);
}

TEST(Freeze, MobilenetFirstTwentyLayers) {
    auto cfg = config(Family::mini_mobilenet, 50);
    cfg.freeze_prefix = 20;
    cfg.freeze_granularity = FreezeGranularity::layer;
    auto net = build_network<float>(cfg, 1);
    for (std::size_t i = 0; i < net.size(); ++i) EXPECT_EQ(net.layer(i).trainable(), i >= 20) << net.node(i).name;
    EXPECT_THROW(set_trainable_prefix(net, net.size() + 1, FreezeGranularity::layer), ConfigError);
    EXPECT_NO_THROW(set_trainable_prefix(net, net.size(), FreezeGranularity::layer));
}

TEST(Freeze, StepsLeaveFrozenTensorsUntouched) {
    struct Case {
        Family family;
        std::size_t prefix;
        FreezeGranularity granularity;
    };
    for (const Case& c : {Case{Family::simple_cnn, 1, FreezeGranularity::block},
                          Case{Family::mini_resnet, 2, FreezeGranularity::block},
                          Case{Family::mini_mobilenet, 9, FreezeGranularity::layer}}) {
        auto cfg = tiny(c.family);
        cfg.freeze_prefix = c.prefix;
        cfg.freeze_granularity = c.granularity;
        auto net = build_network<float>(cfg, 31);
        const auto before = net.state();
        AdamState<float> adam;
        for (std::uint64_t k = 0; k < 5; ++k) {
            auto x = random_images<float>(4, cfg.image_size, 100 + k);
            auto y = random_targets<float>(4, cfg.class_count, 200 + k);
            auto p = net.forward(x, Mode::train);
            net.backward_from_logits(softmax_cross_entropy_backward(p, y));
            adam.step(net);
        }
        const auto after = net.state();
        std::size_t frozen = 0, moved = 0;
        for (std::size_t i = 0; i < net.size(); ++i) {
            const auto& layer = net.layer(i);
            for (const auto* map : {&layer.params(), &layer.buffers()}) {
                for (const auto& [k, v] : *map) {
                    const auto key = net.node(i).name + "." + k;
                    if (!layer.trainable()) {
                        ++frozen;
                        EXPECT_EQ(after.at(key).values(), before.at(key).values()) << key;
                        EXPECT_EQ(adam.moments().count(key), 0u) << key;
                    } else if (after.at(key).values() != before.at(key).values()) {
                        ++moved;
                    }
                }
            }
        }
        EXPECT_GT(frozen, 0u) << to_string(c.family);
        EXPECT_GT(moved, 0u) << to_string(c.family);
    }
}

TEST(ResetHead, RedrawsOnlyHeadParameters) {
    auto net = build_network<float>(tiny(Family::mini_mobilenet), 3);
    const auto before = net.state();
    reset_head(net, 99);
    const auto after = net.state();
    for (std::size_t i = 0; i < net.size(); ++i) {
        for (const auto& [k, v] : net.layer(i).params()) {
            const auto key = net.node(i).name + "." + k;
            if (net.node(i).unit >= 0) {
                EXPECT_EQ(after.at(key).values(), before.at(key).values()) << key;
            } else if (k == "weights") {
                EXPECT_NE(after.at(key).values(), before.at(key).values()) << key;
            }
        }
    }
}

// ---- whole-network gradients ------------------------------------------------------

TEST(NetworkGradient, MatchesFiniteDifferences) {
    for (Family f : kFamilies) {
        auto cfg = tiny(f);
        cfg.dropout_rate = 0.0;
        auto net = build_network<double>(cfg, 41);
        const auto x = random_images<double>(3, cfg.image_size, 42);
        const auto y = random_targets<double>(3, cfg.class_count, 43);
        auto loss = [&] { return cross_entropy(net.forward(x, Mode::train), y); };

        auto p = net.forward(x, Mode::train);
        const auto dx = net.backward_from_logits(softmax_cross_entropy_backward(p, y), true);

        check::GradCheck result;
        const double h = 1e-6;
        Rng pick(44);
        for (std::size_t i = 0; i < net.size(); ++i) {
            const auto* grads = net.param_grads(i);
            for (auto& [k, v] : net.layer(i).params()) {
                ASSERT_NE(grads, nullptr) << net.node(i).name;
                const auto& g = grads->at(k);
                for (int probe = 0; probe < 3; ++probe) {
                    const std::size_t j = pick.index(v.size());
                    const double saved = v[j];
                    v[j] = saved + h;
                    const double up = loss();
                    v[j] = saved - h;
                    const double down = loss();
                    v[j] = saved;
                    check::record(result, net.node(i).name + "." + k, g[j], (up - down) / (2 * h), 1e-4);
                }
            }
        }
        auto xs = x;
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t j = pick.index(xs.size());
            const double saved = xs[j];
            xs[j] = saved + h;
            const double up = cross_entropy(net.forward(xs, Mode::train), y);
            xs[j] = saved - h;
            const double down = cross_entropy(net.forward(xs, Mode::train), y);
            xs[j] = saved;
            check::record(result, "input", dx[j], (up - down) / (2 * h), 1e-4);
        }
        EXPECT_TRUE(result.ok()) << to_string(f) << ": " << result.failed << "/" << result.checked
                                 << " worst " << result.worst;
    }
}
