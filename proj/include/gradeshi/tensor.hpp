#ifndef GRADESHI_TENSOR_HPP
#define GRADESHI_TENSOR_HPP

#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gradeshi/error.hpp"

namespace gradeshi {

// Extents in (batch, height, width, channels) order. A matrix (rank-2 use)
// is stored as (rows, 1, 1, cols).
struct Shape {
    std::array<std::size_t, 4> extents{0, 0, 0, 0};

    constexpr Shape() = default;
    constexpr Shape(std::size_t b, std::size_t h, std::size_t w, std::size_t c) : extents{b, h, w, c} {}

    static constexpr Shape matrix(std::size_t rows, std::size_t cols) { return {rows, 1, 1, cols}; }

    constexpr std::size_t batch() const noexcept { return extents[0]; }
    constexpr std::size_t height() const noexcept { return extents[1]; }
    constexpr std::size_t width() const noexcept { return extents[2]; }
    constexpr std::size_t channels() const noexcept { return extents[3]; }

    // Per-example element count (everything but the batch axis).
    constexpr std::size_t features() const noexcept { return extents[1] * extents[2] * extents[3]; }

    std::size_t size() const;

    constexpr bool is_matrix() const noexcept { return extents[1] == 1 && extents[2] == 1; }

    std::string str() const;

    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

namespace fill {
struct Constant {
    double value = 0.0;
};
template <typename T>
struct Explicit {
    std::vector<T> values;
};
struct Uniform {
    double lo = 0.0;
    double hi = 1.0;
    std::uint64_t seed = 0;
};
// N(0, 2 / fan_in)
struct HeNormal {
    std::size_t fan_in = 1;
    std::uint64_t seed = 0;
};
} // namespace fill

template <typename T>
using FillSpec = std::variant<fill::Constant, fill::Explicit<T>, fill::Uniform, fill::HeNormal>;

// Dense row-major array over (batch, height, width, channels). Operations
// return new tensors; the mutable accessors exist for kernels and optimizers
// that own the tensor they write to.
template <std::floating_point T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape);
    BasicTensor(Shape shape, std::vector<T> data);

    static BasicTensor create(Shape shape, const FillSpec<T>& spec);
    static BasicTensor zeros(Shape shape) { return BasicTensor(shape); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const T> data() const noexcept { return data_; }
    std::span<T> data() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T operator[](std::size_t i) const { return data_[i]; }
    T& operator[](std::size_t i) { return data_[i]; }

    std::size_t offset(std::size_t b, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return ((b * shape_.extents[1] + h) * shape_.extents[2] + w) * shape_.extents[3] + c;
    }
    T at(std::size_t b, std::size_t h, std::size_t w, std::size_t c) const { return data_[offset(b, h, w, c)]; }
    T& at(std::size_t b, std::size_t h, std::size_t w, std::size_t c) { return data_[offset(b, h, w, c)]; }

    // Same elements under a new shape; element counts must agree.
    BasicTensor reshaped(Shape shape) const&;
    BasicTensor reshaped(Shape shape) &&;

    template <std::floating_point U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool bit_equal(const BasicTensor& other) const;

private:
    Shape shape_{};
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

enum class ElementwiseOp { add, sub, mul };

template <std::floating_point T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <std::floating_point T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <std::floating_point T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::add, a, b);
}
template <std::floating_point T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::sub, a, b);
}
template <std::floating_point T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::mul, a, b);
}

// (m x k) * (k x n) over matrix-shaped tensors.
template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Row-wise argmax over the channel axis; ties resolve to the lowest index.
template <std::floating_point T>
std::vector<std::size_t> argmax_last_axis(const BasicTensor<T>& t);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

} // namespace gradeshi

#endif
