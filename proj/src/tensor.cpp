#include "gradeshi/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "gradeshi/gemm.hpp"
#include "gradeshi/random.hpp"

namespace gradeshi {

std::size_t Shape::size() const {
    std::size_t total = 1;
    for (std::size_t e : extents) {
        if (e != 0 && total > std::numeric_limits<std::size_t>::max() / e) {
            throw ShapeError("element count of " + str() + " overflows the index type");
        }
        total *= e;
    }
    return total;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << extents[0] << ',' << extents[1] << ',' << extents[2] << ',' << extents[3] << ')';
    return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": " + a.str() + " vs " + b.str());
    }
}

template <std::floating_point T>
BasicTensor<T>::BasicTensor(Shape shape) : shape_(shape), data_(shape.size(), T(0)) {}

template <std::floating_point T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
        throw ShapeError("explicit data has " + std::to_string(data_.size()) + " values, shape " + shape_.str() +
                         " needs " + std::to_string(shape_.size()));
    }
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::create(Shape shape, const FillSpec<T>& spec) {
    return std::visit(
        [&](const auto& f) -> BasicTensor<T> {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, fill::Constant>) {
                return BasicTensor(shape, std::vector<T>(shape.size(), static_cast<T>(f.value)));
            } else if constexpr (std::is_same_v<F, fill::Explicit<T>>) {
                return BasicTensor(shape, f.values);
            } else if constexpr (std::is_same_v<F, fill::Uniform>) {
                Rng rng(f.seed);
                std::vector<T> v(shape.size());
                for (auto& x : v) {
                    x = static_cast<T>(rng.uniform(f.lo, f.hi));
                }
                return BasicTensor(shape, std::move(v));
            } else {
                if (f.fan_in == 0) {
                    throw ParameterError("He-normal fill needs fan_in >= 1");
                }
                Rng rng(f.seed);
                const double stddev = std::sqrt(2.0 / static_cast<double>(f.fan_in));
                std::vector<T> v(shape.size());
                for (auto& x : v) {
                    x = static_cast<T>(stddev * rng.normal());
                }
                return BasicTensor(shape, std::move(v));
            }
        },
        spec);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
    BasicTensor copy = *this;
    return std::move(copy).reshaped(shape);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
    if (shape.size() != data_.size()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    BasicTensor out;
    out.shape_ = shape;
    out.data_ = std::move(data_);
    shape_ = Shape{};
    data_.clear();
    return out;
}

template <std::floating_point T>
bool BasicTensor<T>::bit_equal(const BasicTensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template <std::floating_point T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "elementwise operands differ");
    BasicTensor<T> out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto o = out.data();
    switch (op) {
    case ElementwiseOp::add:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
        break;
    case ElementwiseOp::sub:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
        break;
    case ElementwiseOp::mul:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
        break;
    }
    return out;
}

template <std::floating_point T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    auto x = a.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = x[i] * factor;
    }
    return out;
}

template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (!a.shape().is_matrix() || !b.shape().is_matrix()) {
        throw ShapeError("matmul needs matrix operands, got " + a.shape().str() + " and " + b.shape().str());
    }
    const std::size_t m = a.shape().batch();
    const std::size_t k = a.shape().channels();
    const std::size_t n = b.shape().channels();
    if (b.shape().batch() != k) {
        throw ShapeError("matmul inner extents differ: " + a.shape().str() + " x " + b.shape().str());
    }
    BasicTensor<T> out(Shape::matrix(m, n));
    gemm(m, n, k, a.data().data(), k, b.data().data(), n, out.data().data(), n);
    return out;
}

template <std::floating_point T>
std::vector<std::size_t> argmax_last_axis(const BasicTensor<T>& t) {
    const std::size_t classes = t.shape().channels();
    if (classes == 0) {
        return {};
    }
    const std::size_t rows = t.size() / classes;
    std::vector<std::size_t> out(rows);
    auto d = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = d.data() + r * classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (row[c] > row[best]) {
                best = c;
            }
        }
        out[r] = best;
    }
    return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

#define GRADESHI_INSTANTIATE(T)                                                                         \
    template BasicTensor<T> elementwise(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                          \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template std::vector<std::size_t> argmax_last_axis(const BasicTensor<T>&);

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
