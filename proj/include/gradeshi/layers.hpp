#ifndef GRADESHI_LAYERS_HPP
#define GRADESHI_LAYERS_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "gradeshi/ops.hpp"

namespace gradeshi {

using ops::LayerGrads;
using ops::Mode;
using ops::Padding;

enum class LayerKind {
    conv2d,
    depthwise_conv2d,
    pointwise_conv2d,
    dense,
    relu,
    maxpool2d,
    dropout,
    batchnorm,
    softmax,
    residual_add,
    flatten,
    global_avgpool,
};

std::string_view to_string(LayerKind kind) noexcept;

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

// One differentiable node. forward() keeps whatever backward() needs; a
// layer instance therefore belongs to one training step at a time.
template <typename T>
class Layer {
public:
    using TensorT = BasicTensor<T>;

    virtual ~Layer() = default;

    virtual LayerKind kind() const noexcept = 0;
    virtual std::size_t arity() const noexcept { return 1; }
    virtual Shape output_shape(std::span<const Shape> inputs) const = 0;
    virtual TensorT forward(std::span<const TensorT* const> inputs, Mode mode) = 0;
    virtual LayerGrads<T> backward(const TensorT& upstream, bool want_inputs, bool want_params) = 0;
    virtual std::string describe() const { return std::string(to_string(kind())); }

    // Re-draws parameters (He-normal weights, zero bias, unit gamma).
    virtual void reset_parameters(std::uint64_t /*seed*/) {}

    TensorT forward(const TensorT& x, Mode mode) {
        const TensorT* in[] = {&x};
        return forward(std::span<const TensorT* const>(in), mode);
    }
    Shape output_shape(const Shape& input) const { return output_shape(std::span<const Shape>(&input, 1)); }
    LayerGrads<T> backward(const TensorT& upstream) { return backward(upstream, true, true); }

    ParamMap<T>& params() noexcept { return params_; }
    const ParamMap<T>& params() const noexcept { return params_; }
    // Non-trainable state (batchnorm running statistics).
    ParamMap<T>& buffers() noexcept { return buffers_; }
    const ParamMap<T>& buffers() const noexcept { return buffers_; }

    std::size_t parameter_count() const;

    bool trainable() const noexcept { return trainable_; }
    void set_trainable(bool on) noexcept { trainable_ = on; }

protected:
    ParamMap<T> params_;
    ParamMap<T> buffers_;
    bool trainable_ = true;
};

// conv2d and pointwise_conv2d (the 1x1 case, reported as its own kind).
template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t kernel, std::size_t in_channels, std::size_t out_channels, std::size_t stride = 1,
           Padding padding = Padding::same);

    LayerKind kind() const noexcept override;
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    void reset_parameters(std::uint64_t seed) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::size_t kernel_, in_, out_, stride_;
    Padding padding_;
    std::optional<ops::ConvCache<T>> cache_;
};

template <typename T>
class DepthwiseConv2d final : public Layer<T> {
public:
    DepthwiseConv2d(std::size_t kernel, std::size_t channels, std::size_t stride = 1,
                    Padding padding = Padding::same);

    LayerKind kind() const noexcept override { return LayerKind::depthwise_conv2d; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    void reset_parameters(std::uint64_t seed) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::size_t kernel_, channels_, stride_;
    Padding padding_;
    std::optional<ops::ConvCache<T>> cache_;
};

template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(std::size_t in_features, std::size_t units);

    LayerKind kind() const noexcept override { return LayerKind::dense; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    void reset_parameters(std::uint64_t seed) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::size_t in_, units_;
    std::optional<ops::DenseCache<T>> cache_;
};

template <typename T>
class Relu final : public Layer<T> {
public:
    LayerKind kind() const noexcept override { return LayerKind::relu; }
    Shape output_shape(std::span<const Shape> inputs) const override { return inputs[0]; }
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::optional<BasicTensor<T>> input_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
public:
    explicit MaxPool2d(std::size_t pool, std::size_t stride = 0) : pool_(pool), stride_(stride == 0 ? pool : stride) {}

    LayerKind kind() const noexcept override { return LayerKind::maxpool2d; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::size_t pool_, stride_;
    std::optional<ops::PoolCache> cache_;
};

// Masks are drawn from mix_seed(seed, n) for the n-th train-mode call, so a
// rerun with the same seed replays the same masks.
template <typename T>
class Dropout final : public Layer<T> {
public:
    Dropout(double rate, std::uint64_t seed);

    LayerKind kind() const noexcept override { return LayerKind::dropout; }
    Shape output_shape(std::span<const Shape> inputs) const override { return inputs[0]; }
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

    double rate() const noexcept { return rate_; }
    void reseed(std::uint64_t seed) noexcept {
        seed_ = seed;
        calls_ = 0;
    }

private:
    double rate_;
    std::uint64_t seed_;
    std::uint64_t calls_ = 0;
    std::optional<BasicTensor<T>> mask_;
};

// Running statistics start at mean 0 / variance 1. A frozen batchnorm layer
// always normalizes with its running statistics and never updates them.
template <typename T>
class BatchNorm final : public Layer<T> {
public:
    explicit BatchNorm(std::size_t channels, double momentum = ops::kBatchNormMomentum,
                       double epsilon = ops::kBatchNormEpsilon);

    LayerKind kind() const noexcept override { return LayerKind::batchnorm; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    std::string describe() const override;
    void reset_parameters(std::uint64_t seed) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::size_t channels_;
    double momentum_, epsilon_;
    std::optional<ops::BatchNormCache<T>> cache_;
};

template <typename T>
class Softmax final : public Layer<T> {
public:
    LayerKind kind() const noexcept override { return LayerKind::softmax; }
    Shape output_shape(std::span<const Shape> inputs) const override { return inputs[0]; }
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    std::optional<BasicTensor<T>> output_;
};

// inputs[0] is the main branch, inputs[1] the skip branch.
template <typename T>
class ResidualAdd final : public Layer<T> {
public:
    LayerKind kind() const noexcept override { return LayerKind::residual_add; }
    std::size_t arity() const noexcept override { return 2; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;
};

template <typename T>
class Flatten final : public Layer<T> {
public:
    LayerKind kind() const noexcept override { return LayerKind::flatten; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    Shape input_shape_{};
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
public:
    LayerKind kind() const noexcept override { return LayerKind::global_avgpool; }
    Shape output_shape(std::span<const Shape> inputs) const override;
    BasicTensor<T> forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) override;
    LayerGrads<T> backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) override;
    using Layer<T>::forward;
    using Layer<T>::output_shape;
    using Layer<T>::backward;

private:
    Shape input_shape_{};
};

} // namespace gradeshi

#endif
