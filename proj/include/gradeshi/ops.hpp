#ifndef GRADESHI_OPS_HPP
#define GRADESHI_OPS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradeshi/tensor.hpp"

// Stateless forward/backward kernels. Layers in layers.hpp wrap these with
// parameter storage and the caches the backward pass needs.
namespace gradeshi::ops {

enum class Padding { valid, same };
enum class Mode { train, eval };

// Output extent and leading pad along one spatial axis.
//  valid: out = floor((n - k) / s) + 1, no padding.
//  same:  out = ceil(n / s); total pad = max((out - 1) * s + k - n, 0), split
//         with the odd remainder on the bottom/right side.
struct AxisWindow {
    std::size_t out = 0;
    std::size_t pad_before = 0;
};

AxisWindow axis_window(std::size_t n, std::size_t k, std::size_t stride, Padding padding);

template <typename T>
struct LayerGrads {
    // One entry per forward input, empty tensors where not requested.
    std::vector<BasicTensor<T>> inputs;
    std::map<std::string, BasicTensor<T>> params;

    const BasicTensor<T>& input() const { return inputs.at(0); }
};

// ---- convolution ---------------------------------------------------------

// weights (kh, kw, cin, cout), bias (1, 1, 1, cout).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                      std::size_t stride, Padding padding);

template <typename T>
struct ConvCache {
    BasicTensor<T> input;
    BasicTensor<T> weights;
    std::size_t stride = 1;
    Padding padding = Padding::valid;
};

template <typename T>
LayerGrads<T> conv2d_backward(const std::optional<ConvCache<T>>& cache, const BasicTensor<T>& upstream,
                              bool want_input = true, bool want_params = true);

// One (kh, kw) kernel per channel: weights (kh, kw, c, 1), bias (1, 1, 1, c).
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                                std::size_t stride, Padding padding);

template <typename T>
LayerGrads<T> depthwise_conv2d_backward(const std::optional<ConvCache<T>>& cache, const BasicTensor<T>& upstream,
                                        bool want_input = true, bool want_params = true);

// ---- dense ---------------------------------------------------------------

// x (B, 1, 1, F), weights (F, 1, 1, units), bias (1, 1, 1, units).
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

template <typename T>
struct DenseCache {
    BasicTensor<T> input;
    BasicTensor<T> weights;
};

template <typename T>
LayerGrads<T> dense_backward(const std::optional<DenseCache<T>>& cache, const BasicTensor<T>& upstream,
                             bool want_input = true, bool want_params = true);

// ---- activations and pooling ---------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// Gradient at exactly zero is zero.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& upstream);

struct PoolCache {
    Shape input_shape;
    // Flat input offset of the winning element for every output element.
    std::vector<std::size_t> argmax;
};

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    PoolCache cache;
};

// Non-overlapping by default (stride 0 means stride = pool). Windows that
// would overhang the input are dropped. Ties go to the first element in
// row-major scan order.
template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& x, std::size_t pool, std::size_t stride = 0);

template <typename T>
BasicTensor<T> maxpool2d_backward(const PoolCache& cache, const BasicTensor<T>& upstream);

template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> global_avgpool_backward(const Shape& input_shape, const BasicTensor<T>& upstream);

// ---- dropout --------------------------------------------------------------

template <typename T>
struct DropoutResult {
    BasicTensor<T> output;
    // Per-element multiplier (0 or 1 / (1 - rate)); empty in eval mode.
    BasicTensor<T> mask;
};

// Inverted dropout: eval mode and rate 0 are the identity.
template <typename T>
DropoutResult<T> dropout(const BasicTensor<T>& x, double rate, Mode mode, std::uint64_t seed);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& upstream);

// ---- batch normalization --------------------------------------------------

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

template <typename T>
struct RunningStats {
    BasicTensor<T> mean;
    BasicTensor<T> var;
};

template <typename T>
struct BatchNormCache {
    BasicTensor<T> normalized;
    std::vector<double> inv_std;
    BasicTensor<T> gamma;
    // True when batch statistics were used (the backward pass then includes
    // the dependence of mean and variance on the input).
    bool batch_statistics = false;
};

template <typename T>
struct BatchNormResult {
    BasicTensor<T> output;
    BatchNormCache<T> cache;
};

// Per-channel statistics over (batch, height, width). Train mode uses the
// biased batch variance and, when update_running is set, moves the running
// stats as run <- m * run + (1 - m) * batch. Eval mode needs running stats.
template <typename T>
BatchNormResult<T> batchnorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                             RunningStats<T>* running, Mode mode, double momentum = kBatchNormMomentum,
                             double epsilon = kBatchNormEpsilon, bool update_running = true);

template <typename T>
LayerGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& upstream,
                                 bool want_input = true, bool want_params = true);

// ---- softmax, residual ----------------------------------------------------

// Over the channel axis with max subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& upstream);

template <typename T>
BasicTensor<T> residual_add(const BasicTensor<T>& main, const BasicTensor<T>& skip);

// ---- depthwise-separable block ---------------------------------------------

template <typename T>
struct SeparableBlockParams {
    BasicTensor<T> dw_weights;  // (kh, kw, c, 1)
    BasicTensor<T> dw_bias;     // (1, 1, 1, c); empty means zero
    BasicTensor<T> pw_weights;  // (1, 1, c, cout)
    BasicTensor<T> pw_bias;     // (1, 1, 1, cout); empty means zero
    BasicTensor<T> bn1_gamma, bn1_beta;  // empty means ones / zeros
    BasicTensor<T> bn2_gamma, bn2_beta;
};

// DW -> BN -> ReLU -> PW -> BN -> ReLU with batch statistics.
template <typename T>
BasicTensor<T> depthwise_separable_block(const BasicTensor<T>& x, const SeparableBlockParams<T>& params,
                                         std::size_t stride, Padding padding = Padding::same);

} // namespace gradeshi::ops

#endif
