#ifndef GRADESHI_OPTIMIZATION_HPP
#define GRADESHI_OPTIMIZATION_HPP

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "gradeshi/network.hpp"

namespace gradeshi {

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over the batch of -ln(max(p_target, 1e-12)). Targets must be one-hot.
template <typename T>
double cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& targets);

// Per-row losses, same clamp; used where a batch-independent sum is needed.
template <typename T>
std::vector<double> cross_entropy_rows(const BasicTensor<T>& probs, const BasicTensor<T>& targets);

// Gradient of the batch-mean loss w.r.t. the pre-softmax logits:
// (probs - targets) / B.
template <typename T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& probs, const BasicTensor<T>& targets);

// Fraction of rows whose argmax (lowest index on ties) hits the target.
template <typename T>
double accuracy(const BasicTensor<T>& probs, const BasicTensor<T>& targets);

// Index of the single 1 in each row; throws DataError otherwise.
template <typename T>
std::vector<std::size_t> one_hot_indices(const BasicTensor<T>& targets);

struct BatchMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t samples = 0;
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

template <typename T>
struct AdamMoments {
    BasicTensor<T> m;
    BasicTensor<T> v;
};

// One bias-corrected Adam update at step t (t >= 1, already incremented):
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// Throws NumericError naming `name` if g holds a non-finite value.
template <typename T>
void adam_step(BasicTensor<T>& param, const BasicTensor<T>& grad, AdamMoments<T>& moments, std::uint64_t t,
               const AdamHyper& hyper, std::string_view name = "parameter");

// Adam over every trainable parameter of a network, keyed by
// "<node>.<param>". Frozen parameters are skipped and keep their moments.
template <typename T>
class AdamState {
public:
    explicit AdamState(AdamHyper hyper = {}) : hyper_(hyper) {}

    void step(Network<T>& net);

    std::uint64_t t() const noexcept { return t_; }
    const AdamHyper& hyper() const noexcept { return hyper_; }
    std::map<std::string, AdamMoments<T>>& moments() noexcept { return moments_; }
    const std::map<std::string, AdamMoments<T>>& moments() const noexcept { return moments_; }
    void restore(std::uint64_t t, std::map<std::string, AdamMoments<T>> moments) {
        t_ = t;
        moments_ = std::move(moments);
    }

private:
    AdamHyper hyper_;
    std::uint64_t t_ = 0;
    std::map<std::string, AdamMoments<T>> moments_;
};

} // namespace gradeshi

#endif
