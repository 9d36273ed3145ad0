#include "gradeshi/layers.hpp"

#include <sstream>

#include "gradeshi/random.hpp"

namespace gradeshi {

std::string_view to_string(LayerKind kind) noexcept {
    switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::depthwise_conv2d: return "depthwise-conv2d";
    case LayerKind::pointwise_conv2d: return "pointwise-conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::softmax: return "softmax";
    case LayerKind::residual_add: return "residual-add";
    case LayerKind::flatten: return "flatten";
    case LayerKind::global_avgpool: return "global-avgpool";
    }
    return "unknown";
}

namespace {

const char* padding_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

template <typename T>
const BasicTensor<T>& single_input(std::span<const BasicTensor<T>* const> inputs, LayerKind kind) {
    if (inputs.size() != 1 || inputs[0] == nullptr) {
        throw ShapeError(std::string(to_string(kind)) + " takes exactly one input");
    }
    return *inputs[0];
}

template <typename T>
LayerGrads<T> input_only(BasicTensor<T> dx) {
    LayerGrads<T> g;
    g.inputs.push_back(std::move(dx));
    return g;
}

Shape spatial_out(const Shape& in, std::size_t kernel, std::size_t stride, Padding padding, std::size_t channels) {
    const auto rows = ops::axis_window(in.height(), kernel, stride, padding);
    const auto cols = ops::axis_window(in.width(), kernel, stride, padding);
    return {in.batch(), rows.out, cols.out, channels};
}

} // namespace

template <typename T>
std::size_t Layer<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
        n += p.size();
    }
    return n;
}

// ---- Conv2d ----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t kernel, std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                  Padding padding)
    : kernel_(kernel), in_(in_channels), out_(out_channels), stride_(stride), padding_(padding) {
    if (kernel == 0 || in_channels == 0 || out_channels == 0 || stride == 0) {
        throw ParameterError("conv2d extents and stride must be >= 1");
    }
    this->params_.emplace("weights", BasicTensor<T>(Shape(kernel, kernel, in_channels, out_channels)));
    this->params_.emplace("bias", BasicTensor<T>(Shape(1, 1, 1, out_channels)));
}

template <typename T>
LayerKind Conv2d<T>::kind() const noexcept {
    return kernel_ == 1 ? LayerKind::pointwise_conv2d : LayerKind::conv2d;
}

template <typename T>
Shape Conv2d<T>::output_shape(std::span<const Shape> inputs) const {
    if (inputs[0].channels() != in_) {
        throw ShapeError("conv2d expects " + std::to_string(in_) + " channels, got " + inputs[0].str());
    }
    return spatial_out(inputs[0], kernel_, stride_, padding_, out_);
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    const auto& w = this->params_.at("weights");
    auto out = ops::conv2d(x, w, this->params_.at("bias"), stride_, padding_);
    cache_ = ops::ConvCache<T>{x, w, stride_, padding_};
    return out;
}

template <typename T>
LayerGrads<T> Conv2d<T>::backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) {
    return ops::conv2d_backward(cache_, upstream, want_inputs, want_params);
}

template <typename T>
std::string Conv2d<T>::describe() const {
    std::ostringstream os;
    os << to_string(kind()) << ' ' << kernel_ << 'x' << kernel_ << ' ' << in_ << "->" << out_ << " stride " << stride_
       << ' ' << padding_name(padding_);
    return os.str();
}

template <typename T>
void Conv2d<T>::reset_parameters(std::uint64_t seed) {
    const Shape ws(kernel_, kernel_, in_, out_);
    this->params_["weights"] = BasicTensor<T>::create(ws, fill::HeNormal{kernel_ * kernel_ * in_, seed});
    this->params_["bias"] = BasicTensor<T>(Shape(1, 1, 1, out_));
}

// ---- DepthwiseConv2d -------------------------------------------------------

template <typename T>
DepthwiseConv2d<T>::DepthwiseConv2d(std::size_t kernel, std::size_t channels, std::size_t stride, Padding padding)
    : kernel_(kernel), channels_(channels), stride_(stride), padding_(padding) {
    if (kernel == 0 || channels == 0 || stride == 0) {
        throw ParameterError("depthwise conv2d extents and stride must be >= 1");
    }
    this->params_.emplace("weights", BasicTensor<T>(Shape(kernel, kernel, channels, 1)));
    this->params_.emplace("bias", BasicTensor<T>(Shape(1, 1, 1, channels)));
}

template <typename T>
Shape DepthwiseConv2d<T>::output_shape(std::span<const Shape> inputs) const {
    if (inputs[0].channels() != channels_) {
        throw ShapeError("depthwise conv2d expects " + std::to_string(channels_) + " channels, got " +
                         inputs[0].str());
    }
    return spatial_out(inputs[0], kernel_, stride_, padding_, channels_);
}

template <typename T>
BasicTensor<T> DepthwiseConv2d<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    const auto& w = this->params_.at("weights");
    auto out = ops::depthwise_conv2d(x, w, this->params_.at("bias"), stride_, padding_);
    cache_ = ops::ConvCache<T>{x, w, stride_, padding_};
    return out;
}

template <typename T>
LayerGrads<T> DepthwiseConv2d<T>::backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) {
    return ops::depthwise_conv2d_backward(cache_, upstream, want_inputs, want_params);
}

template <typename T>
std::string DepthwiseConv2d<T>::describe() const {
    std::ostringstream os;
    os << "depthwise-conv2d " << kernel_ << 'x' << kernel_ << " x" << channels_ << " stride " << stride_ << ' '
       << padding_name(padding_);
    return os.str();
}

template <typename T>
void DepthwiseConv2d<T>::reset_parameters(std::uint64_t seed) {
    const Shape ws(kernel_, kernel_, channels_, 1);
    this->params_["weights"] = BasicTensor<T>::create(ws, fill::HeNormal{kernel_ * kernel_, seed});
    this->params_["bias"] = BasicTensor<T>(Shape(1, 1, 1, channels_));
}

// ---- Dense -----------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t units) : in_(in_features), units_(units) {
    if (in_features == 0 || units == 0) {
        throw ParameterError("dense extents must be >= 1");
    }
    this->params_.emplace("weights", BasicTensor<T>(Shape::matrix(in_features, units)));
    this->params_.emplace("bias", BasicTensor<T>(Shape(1, 1, 1, units)));
}

template <typename T>
Shape Dense<T>::output_shape(std::span<const Shape> inputs) const {
    if (!inputs[0].is_matrix() || inputs[0].channels() != in_) {
        throw ShapeError("dense expects (B,1,1," + std::to_string(in_) + "), got " + inputs[0].str());
    }
    return Shape::matrix(inputs[0].batch(), units_);
}

template <typename T>
BasicTensor<T> Dense<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    const auto& w = this->params_.at("weights");
    auto out = ops::dense(x, w, this->params_.at("bias"));
    cache_ = ops::DenseCache<T>{x, w};
    return out;
}

template <typename T>
LayerGrads<T> Dense<T>::backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) {
    return ops::dense_backward(cache_, upstream, want_inputs, want_params);
}

template <typename T>
std::string Dense<T>::describe() const {
    return "dense " + std::to_string(in_) + "->" + std::to_string(units_);
}

template <typename T>
void Dense<T>::reset_parameters(std::uint64_t seed) {
    this->params_["weights"] = BasicTensor<T>::create(Shape::matrix(in_, units_), fill::HeNormal{in_, seed});
    this->params_["bias"] = BasicTensor<T>(Shape(1, 1, 1, units_));
}

// ---- Relu ------------------------------------------------------------------

template <typename T>
BasicTensor<T> Relu<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    input_ = x;
    return ops::relu(x);
}

template <typename T>
LayerGrads<T> Relu<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    if (!input_) {
        throw StateError("relu backward called without a forward pass");
    }
    return input_only(ops::relu_backward(*input_, upstream));
}

// ---- MaxPool2d -------------------------------------------------------------

template <typename T>
Shape MaxPool2d<T>::output_shape(std::span<const Shape> inputs) const {
    const Shape& s = inputs[0];
    if (s.height() < pool_ || s.width() < pool_) {
        throw ShapeError("input " + s.str() + " smaller than one " + std::to_string(pool_) + "x" +
                         std::to_string(pool_) + " pooling window");
    }
    return {s.batch(), (s.height() - pool_) / stride_ + 1, (s.width() - pool_) / stride_ + 1, s.channels()};
}

template <typename T>
BasicTensor<T> MaxPool2d<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    auto r = ops::maxpool2d(single_input(inputs, kind()), pool_, stride_);
    cache_ = std::move(r.cache);
    return std::move(r.output);
}

template <typename T>
LayerGrads<T> MaxPool2d<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    if (!cache_) {
        throw StateError("maxpool backward called without a forward pass");
    }
    return input_only(ops::maxpool2d_backward(*cache_, upstream));
}

template <typename T>
std::string MaxPool2d<T>::describe() const {
    return "maxpool2d " + std::to_string(pool_) + "x" + std::to_string(pool_) + " stride " + std::to_string(stride_);
}

// ---- Dropout ---------------------------------------------------------------

template <typename T>
Dropout<T>::Dropout(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

template <typename T>
BasicTensor<T> Dropout<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) {
    const auto& x = single_input(inputs, kind());
    const std::uint64_t seed = mix_seed(seed_, calls_);
    if (mode == Mode::train) {
        ++calls_;
    }
    auto r = ops::dropout(x, rate_, mode, seed);
    mask_ = std::move(r.mask);
    return std::move(r.output);
}

template <typename T>
LayerGrads<T> Dropout<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    if (!mask_) {
        throw StateError("dropout backward called without a forward pass");
    }
    return input_only(ops::dropout_backward(*mask_, upstream));
}

template <typename T>
std::string Dropout<T>::describe() const {
    std::ostringstream os;
    os << "dropout " << rate_;
    return os.str();
}

// ---- BatchNorm -------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, double momentum, double epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
    if (channels == 0) {
        throw ParameterError("batchnorm needs >= 1 channel");
    }
    reset_parameters(0);
}

template <typename T>
Shape BatchNorm<T>::output_shape(std::span<const Shape> inputs) const {
    if (inputs[0].channels() != channels_) {
        throw ShapeError("batchnorm expects " + std::to_string(channels_) + " channels, got " + inputs[0].str());
    }
    return inputs[0];
}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode mode) {
    const auto& x = single_input(inputs, kind());
    ops::RunningStats<T> running{this->buffers_.at("running_mean"), this->buffers_.at("running_var")};
    const Mode effective = this->trainable_ ? mode : Mode::eval;
    auto r = ops::batchnorm(x, this->params_.at("gamma"), this->params_.at("beta"), &running, effective, momentum_,
                            epsilon_, true);
    if (effective == Mode::train) {
        this->buffers_["running_mean"] = std::move(running.mean);
        this->buffers_["running_var"] = std::move(running.var);
    }
    cache_ = std::move(r.cache);
    return std::move(r.output);
}

template <typename T>
LayerGrads<T> BatchNorm<T>::backward(const BasicTensor<T>& upstream, bool want_inputs, bool want_params) {
    if (!cache_) {
        throw StateError("batchnorm backward called without a forward pass");
    }
    return ops::batchnorm_backward(*cache_, upstream, want_inputs, want_params);
}

template <typename T>
std::string BatchNorm<T>::describe() const {
    return "batchnorm x" + std::to_string(channels_);
}

template <typename T>
void BatchNorm<T>::reset_parameters(std::uint64_t) {
    const Shape cs(1, 1, 1, channels_);
    this->params_["gamma"] = BasicTensor<T>::create(cs, fill::Constant{1.0});
    this->params_["beta"] = BasicTensor<T>(cs);
    this->buffers_["running_mean"] = BasicTensor<T>(cs);
    this->buffers_["running_var"] = BasicTensor<T>::create(cs, fill::Constant{1.0});
}

// ---- Softmax ---------------------------------------------------------------

template <typename T>
BasicTensor<T> Softmax<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    output_ = ops::softmax(single_input(inputs, kind()));
    return *output_;
}

template <typename T>
LayerGrads<T> Softmax<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    if (!output_) {
        throw StateError("softmax backward called without a forward pass");
    }
    return input_only(ops::softmax_backward(*output_, upstream));
}

// ---- ResidualAdd -----------------------------------------------------------

template <typename T>
Shape ResidualAdd<T>::output_shape(std::span<const Shape> inputs) const {
    if (inputs.size() != 2 || inputs[0] != inputs[1]) {
        throw ShapeError("residual branches differ: " + inputs[0].str() + " vs " +
                         (inputs.size() > 1 ? inputs[1].str() : std::string("<missing>")));
    }
    return inputs[0];
}

template <typename T>
BasicTensor<T> ResidualAdd<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    if (inputs.size() != 2 || inputs[0] == nullptr || inputs[1] == nullptr) {
        throw ShapeError("residual-add takes a main and a skip input");
    }
    return ops::residual_add(*inputs[0], *inputs[1]);
}

template <typename T>
LayerGrads<T> ResidualAdd<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    LayerGrads<T> g;
    g.inputs = {upstream, upstream};
    return g;
}

// ---- Flatten, GlobalAvgPool ------------------------------------------------

template <typename T>
Shape Flatten<T>::output_shape(std::span<const Shape> inputs) const {
    return Shape::matrix(inputs[0].batch(), inputs[0].features());
}

template <typename T>
BasicTensor<T> Flatten<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    input_shape_ = x.shape();
    return x.reshaped(Shape::matrix(x.shape().batch(), x.shape().features()));
}

template <typename T>
LayerGrads<T> Flatten<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    return input_only(upstream.reshaped(input_shape_));
}

template <typename T>
Shape GlobalAvgPool<T>::output_shape(std::span<const Shape> inputs) const {
    return {inputs[0].batch(), 1, 1, inputs[0].channels()};
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::forward(std::span<const BasicTensor<T>* const> inputs, Mode) {
    const auto& x = single_input(inputs, kind());
    input_shape_ = x.shape();
    return ops::global_avgpool(x);
}

template <typename T>
LayerGrads<T> GlobalAvgPool<T>::backward(const BasicTensor<T>& upstream, bool, bool) {
    return input_only(ops::global_avgpool_backward(input_shape_, upstream));
}

#define GRADESHI_INSTANTIATE(T)         \
    template class Layer<T>;            \
    template class Conv2d<T>;           \
    template class DepthwiseConv2d<T>;  \
    template class Dense<T>;            \
    template class Relu<T>;             \
    template class MaxPool2d<T>;        \
    template class Dropout<T>;          \
    template class BatchNorm<T>;        \
    template class Softmax<T>;          \
    template class ResidualAdd<T>;      \
    template class Flatten<T>;          \
    template class GlobalAvgPool<T>;

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
