#include "gradeshi/optimization.hpp"

#include <algorithm>
#include <cmath>

namespace gradeshi {

template <typename T>
std::vector<std::size_t> one_hot_indices(const BasicTensor<T>& targets) {
    const std::size_t classes = targets.shape().channels();
    if (classes == 0) {
        throw DataError("targets have no classes");
    }
    const std::size_t rows = targets.size() / classes;
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t hot = classes;
        for (std::size_t c = 0; c < classes; ++c) {
            const T v = targets[r * classes + c];
            if (v == T(1) && hot == classes) {
                hot = c;
            } else if (v != T(0)) {
                throw DataError("target row " + std::to_string(r) + " is not one-hot");
            }
        }
        if (hot == classes) {
            throw DataError("target row " + std::to_string(r) + " is not one-hot");
        }
        out[r] = hot;
    }
    return out;
}

template <typename T>
std::vector<double> cross_entropy_rows(const BasicTensor<T>& probs, const BasicTensor<T>& targets) {
    require_same_shape(probs.shape(), targets.shape(), "cross-entropy operands");
    const auto hot = one_hot_indices(targets);
    const std::size_t classes = probs.shape().channels();
    std::vector<double> out(hot.size());
    for (std::size_t r = 0; r < hot.size(); ++r) {
        const double p = probs[r * classes + hot[r]];
        out[r] = -std::log(std::max(p, kProbabilityFloor));
    }
    return out;
}

template <typename T>
double cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& targets) {
    const auto rows = cross_entropy_rows(probs, targets);
    if (rows.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (double l : rows) {
        total += l;
    }
    return total / static_cast<double>(rows.size());
}

template <typename T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& probs, const BasicTensor<T>& targets) {
    require_same_shape(probs.shape(), targets.shape(), "softmax-cross-entropy operands");
    const std::size_t classes = probs.shape().channels();
    const std::size_t rows = classes == 0 ? 0 : probs.size() / classes;
    BasicTensor<T> grad(probs.shape());
    if (rows == 0) {
        return grad;
    }
    const T inv = T(1) / static_cast<T>(rows);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = (probs[i] - targets[i]) * inv;
    }
    return grad;
}

template <typename T>
double accuracy(const BasicTensor<T>& probs, const BasicTensor<T>& targets) {
    require_same_shape(probs.shape(), targets.shape(), "accuracy operands");
    const auto predicted = argmax_last_axis(probs);
    const auto expected = argmax_last_axis(targets);
    if (predicted.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < predicted.size(); ++r) {
        hits += predicted[r] == expected[r] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

template <typename T>
void adam_step(BasicTensor<T>& param, const BasicTensor<T>& grad, AdamMoments<T>& moments, std::uint64_t t,
               const AdamHyper& hyper, std::string_view name) {
    require_same_shape(param.shape(), grad.shape(), "adam gradient");
    if (t == 0) {
        throw StateError("adam step counter must be >= 1");
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(grad[i]))) {
            throw NumericError("non-finite gradient in '" + std::string(name) + "' at element " + std::to_string(i));
        }
    }
    if (moments.m.empty()) {
        moments.m = BasicTensor<T>(param.shape());
        moments.v = BasicTensor<T>(param.shape());
    }
    const T b1 = static_cast<T>(hyper.beta1);
    const T b2 = static_cast<T>(hyper.beta2);
    const T one = T(1);
    const T c1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(t)));
    const T c2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(t)));
    const T lr = static_cast<T>(hyper.lr);
    const T eps = static_cast<T>(hyper.epsilon);
    auto p = param.data();
    auto g = grad.data();
    auto m = moments.m.data();
    auto v = moments.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <typename T>
void AdamState<T>::step(Network<T>& net) {
    ++t_;
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& layer = net.layer(i);
        if (!layer.trainable() || layer.params().empty()) {
            continue;
        }
        const ParamMap<T>* grads = net.param_grads(i);
        if (grads == nullptr) {
            continue;
        }
        for (auto& [pname, value] : layer.params()) {
            auto it = grads->find(pname);
            if (it == grads->end()) {
                continue;
            }
            const std::string key = net.node(i).name + "." + pname;
            adam_step(value, it->second, moments_[key], t_, hyper_, key);
        }
    }
}

#define GRADESHI_INSTANTIATE(T)                                                                          \
    template std::vector<std::size_t> one_hot_indices(const BasicTensor<T>&);                           \
    template std::vector<double> cross_entropy_rows(const BasicTensor<T>&, const BasicTensor<T>&);      \
    template double cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>&, const BasicTensor<T>&); \
    template double accuracy(const BasicTensor<T>&, const BasicTensor<T>&);                             \
    template void adam_step(BasicTensor<T>&, const BasicTensor<T>&, AdamMoments<T>&, std::uint64_t,     \
                            const AdamHyper&, std::string_view);                                        \
    template class AdamState<T>;

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
