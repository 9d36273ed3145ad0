#include "gradeshi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradeshi/gemm.hpp"
#include "gradeshi/random.hpp"

namespace gradeshi::ops {

AxisWindow axis_window(std::size_t n, std::size_t k, std::size_t stride, Padding padding) {
    if (k == 0 || stride == 0) {
        throw ShapeError("kernel and stride must be >= 1");
    }
    if (n == 0) {
        throw ShapeError("empty spatial axis");
    }
    if (padding == Padding::valid) {
        if (k > n) {
            throw ShapeError("kernel " + std::to_string(k) + " larger than input extent " + std::to_string(n));
        }
        return {(n - k) / stride + 1, 0};
    }
    const std::size_t out = (n + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    const std::size_t total = needed > n ? needed - n : 0;
    return {out, total / 2};
}

namespace {

struct ConvGeometry {
    std::size_t batch, in_h, in_w, in_c;
    std::size_t kh, kw, out_c;
    std::size_t stride;
    AxisWindow rows, cols;

    std::size_t pixels() const { return batch * rows.out * cols.out; }
    std::size_t patch() const { return kh * kw * in_c; }
    bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, Padding padding, bool depthwise) {
    ConvGeometry g{};
    g.batch = x.batch();
    g.in_h = x.height();
    g.in_w = x.width();
    g.in_c = x.channels();
    g.kh = w.extents[0];
    g.kw = w.extents[1];
    if (w.extents[2] != g.in_c) {
        throw ShapeError("kernel expects " + std::to_string(w.extents[2]) + " input channels, input " + x.str() +
                         " has " + std::to_string(g.in_c));
    }
    if (depthwise && w.extents[3] != 1) {
        throw ShapeError("depthwise kernel must have shape (kh, kw, c, 1), got " + w.str());
    }
    g.out_c = depthwise ? g.in_c : w.extents[3];
    g.stride = stride;
    g.rows = axis_window(g.in_h, g.kh, stride, padding);
    g.cols = axis_window(g.in_w, g.kw, stride, padding);
    return g;
}

void check_bias(const Shape& bias, std::size_t channels) {
    if (bias.size() != 0 && bias != Shape(1, 1, 1, channels)) {
        throw ShapeError("bias shape " + bias.str() + " does not match " + std::to_string(channels) + " channels");
    }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t patch = g.patch();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t i = 0; i < g.rows.out; ++i) {
            for (std::size_t j = 0; j < g.cols.out; ++j) {
                T* row = col + ((b * g.rows.out + i) * g.cols.out + j) * patch;
                for (std::size_t u = 0; u < g.kh; ++u) {
                    const auto hi = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.rows.pad_before);
                    for (std::size_t v = 0; v < g.kw; ++v) {
                        const auto wi = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                        static_cast<std::ptrdiff_t>(g.cols.pad_before);
                        T* dst = row + (u * g.kw + v) * g.in_c;
                        if (hi < 0 || wi < 0 || hi >= static_cast<std::ptrdiff_t>(g.in_h) ||
                            wi >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            std::fill(dst, dst + g.in_c, T(0));
                        } else {
                            const T* src = x + ((b * g.in_h + static_cast<std::size_t>(hi)) * g.in_w +
                                                static_cast<std::size_t>(wi)) *
                                                   g.in_c;
                            std::copy(src, src + g.in_c, dst);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
    const std::size_t patch = g.patch();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t i = 0; i < g.rows.out; ++i) {
            for (std::size_t j = 0; j < g.cols.out; ++j) {
                const T* row = col + ((b * g.rows.out + i) * g.cols.out + j) * patch;
                for (std::size_t u = 0; u < g.kh; ++u) {
                    const auto hi = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.rows.pad_before);
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        continue;
                    }
                    for (std::size_t v = 0; v < g.kw; ++v) {
                        const auto wi = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                        static_cast<std::ptrdiff_t>(g.cols.pad_before);
                        if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            continue;
                        }
                        const T* src = row + (u * g.kw + v) * g.in_c;
                        T* dst = dx + ((b * g.in_h + static_cast<std::size_t>(hi)) * g.in_w +
                                       static_cast<std::size_t>(wi)) *
                                          g.in_c;
                        for (std::size_t c = 0; c < g.in_c; ++c) {
                            dst[c] += src[c];
                        }
                    }
                }
            }
        }
    }
}

// Column sums of a row-major (rows x cols) matrix, accumulated in double.
template <typename T>
BasicTensor<T> column_sums(const T* m, std::size_t rows, std::size_t cols) {
    std::vector<double> acc(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = m + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            acc[c] += row[c];
        }
    }
    BasicTensor<T> out(Shape(1, 1, 1, cols));
    for (std::size_t c = 0; c < cols; ++c) {
        out[c] = static_cast<T>(acc[c]);
    }
    return out;
}

template <typename T>
void add_bias_rows(T* out, std::size_t rows, const BasicTensor<T>& bias) {
    if (bias.empty()) {
        return;
    }
    const std::size_t cols = bias.size();
    const T* b = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] += b[c];
        }
    }
}

} // namespace

// ---- convolution ---------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                      std::size_t stride, Padding padding) {
    const ConvGeometry g = conv_geometry(x.shape(), weights.shape(), stride, padding, false);
    check_bias(bias.shape(), g.out_c);
    BasicTensor<T> out(Shape(g.batch, g.rows.out, g.cols.out, g.out_c));
    const std::size_t pixels = g.pixels();
    const std::size_t patch = g.patch();
    if (g.is_pointwise()) {
        gemm(pixels, g.out_c, patch, x.data().data(), patch, weights.data().data(), g.out_c, out.data().data(),
             g.out_c);
    } else {
        std::vector<T> col(pixels * patch);
        im2col(g, x.data().data(), col.data());
        gemm(pixels, g.out_c, patch, col.data(), patch, weights.data().data(), g.out_c, out.data().data(), g.out_c);
    }
    add_bias_rows(out.data().data(), pixels, bias);
    return out;
}

template <typename T>
LayerGrads<T> conv2d_backward(const std::optional<ConvCache<T>>& cache, const BasicTensor<T>& upstream,
                              bool want_input, bool want_params) {
    if (!cache) {
        throw StateError("conv2d backward called without a forward cache");
    }
    const ConvGeometry g =
        conv_geometry(cache->input.shape(), cache->weights.shape(), cache->stride, cache->padding, false);
    require_same_shape(upstream.shape(), Shape(g.batch, g.rows.out, g.cols.out, g.out_c),
                       "conv2d upstream gradient");
    const std::size_t pixels = g.pixels();
    const std::size_t patch = g.patch();
    const T* dy = upstream.data().data();

    LayerGrads<T> grads;
    grads.inputs.resize(1);

    std::vector<T> col;
    const T* col_ptr = cache->input.data().data();
    if (!g.is_pointwise() && want_params) {
        col.resize(pixels * patch);
        im2col(g, cache->input.data().data(), col.data());
        col_ptr = col.data();
    }

    if (want_params) {
        std::vector<T> col_t(patch * pixels);
        transpose(pixels, patch, col_ptr, col_t.data());
        BasicTensor<T> dw(cache->weights.shape());
        gemm(patch, g.out_c, pixels, col_t.data(), pixels, dy, g.out_c, dw.data().data(), g.out_c);
        grads.params.emplace("weights", std::move(dw));
        grads.params.emplace("bias", column_sums(dy, pixels, g.out_c));
    }

    if (want_input) {
        std::vector<T> w_t(g.out_c * patch);
        transpose(patch, g.out_c, cache->weights.data().data(), w_t.data());
        BasicTensor<T> dx(cache->input.shape());
        if (g.is_pointwise()) {
            gemm(pixels, patch, g.out_c, dy, g.out_c, w_t.data(), patch, dx.data().data(), patch);
        } else {
            std::vector<T> dcol(pixels * patch);
            gemm(pixels, patch, g.out_c, dy, g.out_c, w_t.data(), patch, dcol.data(), patch);
            col2im(g, dcol.data(), dx.data().data());
        }
        grads.inputs[0] = std::move(dx);
    }
    return grads;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                                std::size_t stride, Padding padding) {
    const ConvGeometry g = conv_geometry(x.shape(), weights.shape(), stride, padding, true);
    check_bias(bias.shape(), g.in_c);
    BasicTensor<T> out(Shape(g.batch, g.rows.out, g.cols.out, g.in_c));
    const std::size_t c_n = g.in_c;
    const T* xd = x.data().data();
    const T* wd = weights.data().data();
    T* od = out.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t i = 0; i < g.rows.out; ++i) {
            for (std::size_t j = 0; j < g.cols.out; ++j) {
                T* o = od + ((b * g.rows.out + i) * g.cols.out + j) * c_n;
                if (!bias.empty()) {
                    std::copy(bias.data().begin(), bias.data().end(), o);
                }
                for (std::size_t u = 0; u < g.kh; ++u) {
                    const auto hi = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.rows.pad_before);
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        continue;
                    }
                    for (std::size_t v = 0; v < g.kw; ++v) {
                        const auto wi = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                        static_cast<std::ptrdiff_t>(g.cols.pad_before);
                        if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            continue;
                        }
                        const T* xi = xd + ((b * g.in_h + static_cast<std::size_t>(hi)) * g.in_w +
                                            static_cast<std::size_t>(wi)) *
                                               c_n;
                        const T* wk = wd + (u * g.kw + v) * c_n;
                        for (std::size_t c = 0; c < c_n; ++c) {
                            o[c] += xi[c] * wk[c];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
LayerGrads<T> depthwise_conv2d_backward(const std::optional<ConvCache<T>>& cache, const BasicTensor<T>& upstream,
                                        bool want_input, bool want_params) {
    if (!cache) {
        throw StateError("depthwise conv2d backward called without a forward cache");
    }
    const ConvGeometry g =
        conv_geometry(cache->input.shape(), cache->weights.shape(), cache->stride, cache->padding, true);
    require_same_shape(upstream.shape(), Shape(g.batch, g.rows.out, g.cols.out, g.in_c),
                       "depthwise upstream gradient");
    const std::size_t c_n = g.in_c;
    const T* xd = cache->input.data().data();
    const T* wd = cache->weights.data().data();
    const T* dy = upstream.data().data();

    LayerGrads<T> grads;
    grads.inputs.resize(1);
    BasicTensor<T> dx;
    BasicTensor<T> dw;
    if (want_input) {
        dx = BasicTensor<T>(cache->input.shape());
    }
    if (want_params) {
        dw = BasicTensor<T>(cache->weights.shape());
    }
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t i = 0; i < g.rows.out; ++i) {
            for (std::size_t j = 0; j < g.cols.out; ++j) {
                const T* gy = dy + ((b * g.rows.out + i) * g.cols.out + j) * c_n;
                for (std::size_t u = 0; u < g.kh; ++u) {
                    const auto hi = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                    static_cast<std::ptrdiff_t>(g.rows.pad_before);
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        continue;
                    }
                    for (std::size_t v = 0; v < g.kw; ++v) {
                        const auto wi = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                        static_cast<std::ptrdiff_t>(g.cols.pad_before);
                        if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            continue;
                        }
                        const std::size_t in_off = ((b * g.in_h + static_cast<std::size_t>(hi)) * g.in_w +
                                                    static_cast<std::size_t>(wi)) *
                                                   c_n;
                        const std::size_t k_off = (u * g.kw + v) * c_n;
                        if (want_params) {
                            T* gw = dw.data().data() + k_off;
                            const T* xi = xd + in_off;
                            for (std::size_t c = 0; c < c_n; ++c) {
                                gw[c] += gy[c] * xi[c];
                            }
                        }
                        if (want_input) {
                            T* gx = dx.data().data() + in_off;
                            const T* wk = wd + k_off;
                            for (std::size_t c = 0; c < c_n; ++c) {
                                gx[c] += gy[c] * wk[c];
                            }
                        }
                    }
                }
            }
        }
    }
    if (want_params) {
        grads.params.emplace("weights", std::move(dw));
        grads.params.emplace("bias", column_sums(dy, g.pixels(), c_n));
    }
    if (want_input) {
        grads.inputs[0] = std::move(dx);
    }
    return grads;
}

// ---- dense ---------------------------------------------------------------

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
    if (!x.shape().is_matrix()) {
        throw ShapeError("dense expects a flattened input, got " + x.shape().str());
    }
    const std::size_t rows = x.shape().batch();
    const std::size_t features = x.shape().channels();
    if (!weights.shape().is_matrix() || weights.shape().batch() != features) {
        throw ShapeError("dense weights " + weights.shape().str() + " do not accept " + std::to_string(features) +
                         " features");
    }
    const std::size_t units = weights.shape().channels();
    check_bias(bias.shape(), units);
    BasicTensor<T> out(Shape::matrix(rows, units));
    gemm(rows, units, features, x.data().data(), features, weights.data().data(), units, out.data().data(), units);
    add_bias_rows(out.data().data(), rows, bias);
    return out;
}

template <typename T>
LayerGrads<T> dense_backward(const std::optional<DenseCache<T>>& cache, const BasicTensor<T>& upstream,
                             bool want_input, bool want_params) {
    if (!cache) {
        throw StateError("dense backward called without a forward cache");
    }
    const std::size_t rows = cache->input.shape().batch();
    const std::size_t features = cache->input.shape().channels();
    const std::size_t units = cache->weights.shape().channels();
    require_same_shape(upstream.shape(), Shape::matrix(rows, units), "dense upstream gradient");
    const T* dy = upstream.data().data();

    LayerGrads<T> grads;
    grads.inputs.resize(1);
    if (want_params) {
        std::vector<T> x_t(features * rows);
        transpose(rows, features, cache->input.data().data(), x_t.data());
        BasicTensor<T> dw(cache->weights.shape());
        gemm(features, units, rows, x_t.data(), rows, dy, units, dw.data().data(), units);
        grads.params.emplace("weights", std::move(dw));
        grads.params.emplace("bias", column_sums(dy, rows, units));
    }
    if (want_input) {
        std::vector<T> w_t(units * features);
        transpose(features, units, cache->weights.data().data(), w_t.data());
        BasicTensor<T> dx(cache->input.shape());
        gemm(rows, features, units, dy, units, w_t.data(), features, dx.data().data(), features);
        grads.inputs[0] = std::move(dx);
    }
    return grads;
}

// ---- activations and pooling ---------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    auto in = x.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = in[i] > T(0) ? in[i] : T(0);
    }
    return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& upstream) {
    require_same_shape(input.shape(), upstream.shape(), "relu upstream gradient");
    BasicTensor<T> out(input.shape());
    auto in = input.data();
    auto g = upstream.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = in[i] > T(0) ? g[i] : T(0);
    }
    return out;
}

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& x, std::size_t pool, std::size_t stride) {
    if (pool == 0) {
        throw ParameterError("pool size must be >= 1");
    }
    if (stride == 0) {
        stride = pool;
    }
    const Shape& s = x.shape();
    if (s.height() < pool || s.width() < pool) {
        throw ShapeError("input " + s.str() + " smaller than one " + std::to_string(pool) + "x" +
                         std::to_string(pool) + " pooling window");
    }
    const std::size_t oh = (s.height() - pool) / stride + 1;
    const std::size_t ow = (s.width() - pool) / stride + 1;
    const std::size_t c_n = s.channels();
    PoolResult<T> r{BasicTensor<T>(Shape(s.batch(), oh, ow, c_n)), PoolCache{s, {}}};
    r.cache.argmax.resize(r.output.size());
    const T* xd = x.data().data();
    T* od = r.output.data().data();
    for (std::size_t b = 0; b < s.batch(); ++b) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const std::size_t o_off = ((b * oh + i) * ow + j) * c_n;
                for (std::size_t c = 0; c < c_n; ++c) {
                    std::size_t best = x.offset(b, i * stride, j * stride, c);
                    for (std::size_t u = 0; u < pool; ++u) {
                        for (std::size_t v = 0; v < pool; ++v) {
                            const std::size_t off = x.offset(b, i * stride + u, j * stride + v, c);
                            if (xd[off] > xd[best]) {
                                best = off;
                            }
                        }
                    }
                    od[o_off + c] = xd[best];
                    r.cache.argmax[o_off + c] = best;
                }
            }
        }
    }
    return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const PoolCache& cache, const BasicTensor<T>& upstream) {
    if (upstream.size() != cache.argmax.size()) {
        throw ShapeError("maxpool upstream gradient " + upstream.shape().str() + " does not match forward output");
    }
    BasicTensor<T> dx(cache.input_shape);
    auto g = upstream.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        dx[cache.argmax[i]] += g[i];
    }
    return dx;
}

template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& x) {
    const Shape& s = x.shape();
    const std::size_t area = s.height() * s.width();
    if (area == 0) {
        throw ShapeError("global average pool over empty spatial extent " + s.str());
    }
    BasicTensor<T> out(Shape(s.batch(), 1, 1, s.channels()));
    const std::size_t c_n = s.channels();
    for (std::size_t b = 0; b < s.batch(); ++b) {
        std::vector<double> acc(c_n, 0.0);
        const T* base = x.data().data() + b * area * c_n;
        for (std::size_t p = 0; p < area; ++p) {
            for (std::size_t c = 0; c < c_n; ++c) {
                acc[c] += base[p * c_n + c];
            }
        }
        for (std::size_t c = 0; c < c_n; ++c) {
            out[b * c_n + c] = static_cast<T>(acc[c] / static_cast<double>(area));
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> global_avgpool_backward(const Shape& input_shape, const BasicTensor<T>& upstream) {
    require_same_shape(upstream.shape(), Shape(input_shape.batch(), 1, 1, input_shape.channels()),
                       "global average pool upstream gradient");
    const std::size_t area = input_shape.height() * input_shape.width();
    const std::size_t c_n = input_shape.channels();
    const T inv = T(1) / static_cast<T>(area);
    BasicTensor<T> dx(input_shape);
    for (std::size_t b = 0; b < input_shape.batch(); ++b) {
        T* base = dx.data().data() + b * area * c_n;
        for (std::size_t p = 0; p < area; ++p) {
            for (std::size_t c = 0; c < c_n; ++c) {
                base[p * c_n + c] = upstream[b * c_n + c] * inv;
            }
        }
    }
    return dx;
}

// ---- dropout --------------------------------------------------------------

template <typename T>
DropoutResult<T> dropout(const BasicTensor<T>& x, double rate, Mode mode, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::eval || rate == 0.0) {
        return {x, {}};
    }
    Rng rng(seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    BasicTensor<T> mask(x.shape());
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T m = rng.uniform() < rate ? T(0) : keep_scale;
        mask[i] = m;
        out[i] = x[i] * m;
    }
    return {std::move(out), std::move(mask)};
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& upstream) {
    if (mask.empty()) {
        return upstream;
    }
    return mul(mask, upstream);
}

// ---- batch normalization --------------------------------------------------

template <typename T>
BatchNormResult<T> batchnorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                             RunningStats<T>* running, Mode mode, double momentum, double epsilon,
                             bool update_running) {
    const std::size_t c_n = x.shape().channels();
    const Shape channel_shape(1, 1, 1, c_n);
    require_same_shape(gamma.shape(), channel_shape, "batchnorm gamma");
    require_same_shape(beta.shape(), channel_shape, "batchnorm beta");
    const std::size_t count = c_n == 0 ? 0 : x.size() / c_n;
    if (count == 0) {
        throw ShapeError("batchnorm over an empty batch");
    }

    std::vector<double> mean(c_n, 0.0);
    std::vector<double> var(c_n, 0.0);
    const T* xd = x.data().data();
    const bool batch_stats = mode == Mode::train;
    if (batch_stats) {
        for (std::size_t p = 0; p < count; ++p) {
            for (std::size_t c = 0; c < c_n; ++c) {
                mean[c] += xd[p * c_n + c];
            }
        }
        for (auto& m : mean) {
            m /= static_cast<double>(count);
        }
        for (std::size_t p = 0; p < count; ++p) {
            for (std::size_t c = 0; c < c_n; ++c) {
                const double d = xd[p * c_n + c] - mean[c];
                var[c] += d * d;
            }
        }
        for (auto& v : var) {
            v /= static_cast<double>(count);
        }
        if (running != nullptr && update_running) {
            if (running->mean.empty() || running->var.empty()) {
                running->mean = BasicTensor<T>::create(channel_shape, fill::Constant{0.0});
                running->var = BasicTensor<T>::create(channel_shape, fill::Constant{1.0});
            }
            for (std::size_t c = 0; c < c_n; ++c) {
                running->mean[c] = static_cast<T>(momentum * running->mean[c] + (1.0 - momentum) * mean[c]);
                running->var[c] = static_cast<T>(momentum * running->var[c] + (1.0 - momentum) * var[c]);
            }
        }
    } else {
        if (running == nullptr || running->mean.empty() || running->var.empty()) {
            throw StateError("batchnorm eval mode needs running statistics");
        }
        require_same_shape(running->mean.shape(), channel_shape, "batchnorm running mean");
        require_same_shape(running->var.shape(), channel_shape, "batchnorm running variance");
        for (std::size_t c = 0; c < c_n; ++c) {
            mean[c] = running->mean[c];
            var[c] = running->var[c];
        }
    }

    BatchNormResult<T> r;
    r.cache.inv_std.resize(c_n);
    for (std::size_t c = 0; c < c_n; ++c) {
        r.cache.inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
    }
    r.cache.normalized = BasicTensor<T>(x.shape());
    r.cache.gamma = gamma;
    r.cache.batch_statistics = batch_stats;
    r.output = BasicTensor<T>(x.shape());
    T* nd = r.cache.normalized.data().data();
    T* od = r.output.data().data();
    for (std::size_t p = 0; p < count; ++p) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const std::size_t i = p * c_n + c;
            const T n = static_cast<T>((xd[i] - mean[c]) * r.cache.inv_std[c]);
            nd[i] = n;
            od[i] = gamma[c] * n + beta[c];
        }
    }
    return r;
}

template <typename T>
LayerGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& upstream, bool want_input,
                                 bool want_params) {
    require_same_shape(upstream.shape(), cache.normalized.shape(), "batchnorm upstream gradient");
    const std::size_t c_n = cache.gamma.size();
    const std::size_t count = upstream.size() / c_n;
    const T* dy = upstream.data().data();
    const T* xh = cache.normalized.data().data();

    std::vector<double> sum_dy(c_n, 0.0);
    std::vector<double> sum_dy_xh(c_n, 0.0);
    for (std::size_t p = 0; p < count; ++p) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const std::size_t i = p * c_n + c;
            sum_dy[c] += dy[i];
            sum_dy_xh[c] += static_cast<double>(dy[i]) * xh[i];
        }
    }

    LayerGrads<T> grads;
    grads.inputs.resize(1);
    if (want_params) {
        BasicTensor<T> dgamma(Shape(1, 1, 1, c_n));
        BasicTensor<T> dbeta(Shape(1, 1, 1, c_n));
        for (std::size_t c = 0; c < c_n; ++c) {
            dgamma[c] = static_cast<T>(sum_dy_xh[c]);
            dbeta[c] = static_cast<T>(sum_dy[c]);
        }
        grads.params.emplace("gamma", std::move(dgamma));
        grads.params.emplace("beta", std::move(dbeta));
    }
    if (want_input) {
        BasicTensor<T> dx(upstream.shape());
        T* gx = dx.data().data();
        const double n = static_cast<double>(count);
        for (std::size_t p = 0; p < count; ++p) {
            for (std::size_t c = 0; c < c_n; ++c) {
                const std::size_t i = p * c_n + c;
                const double scale = static_cast<double>(cache.gamma[c]) * cache.inv_std[c];
                if (cache.batch_statistics) {
                    // dx = g * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
                    gx[i] = static_cast<T>(scale / n * (n * dy[i] - sum_dy[c] - xh[i] * sum_dy_xh[c]));
                } else {
                    gx[i] = static_cast<T>(scale * dy[i]);
                }
            }
        }
        grads.inputs[0] = std::move(dx);
    }
    return grads;
}

// ---- softmax, residual ----------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    const std::size_t classes = logits.shape().channels();
    BasicTensor<T> out(logits.shape());
    if (classes == 0) {
        return out;
    }
    const std::size_t rows = logits.size() / classes;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.data().data() + r * classes;
        T* y = out.data().data() + r * classes;
        T zmax = z[0];
        for (std::size_t c = 1; c < classes; ++c) {
            zmax = std::max(zmax, z[c]);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(static_cast<double>(z[c]) - static_cast<double>(zmax));
            y[c] = static_cast<T>(e);
            total += e;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            y[c] = static_cast<T>(static_cast<double>(y[c]) / total);
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& upstream) {
    require_same_shape(probs.shape(), upstream.shape(), "softmax upstream gradient");
    const std::size_t classes = probs.shape().channels();
    BasicTensor<T> dx(probs.shape());
    if (classes == 0) {
        return dx;
    }
    const std::size_t rows = probs.size() / classes;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* y = probs.data().data() + r * classes;
        const T* g = upstream.data().data() + r * classes;
        double dot = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            dot += static_cast<double>(g[c]) * y[c];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            dx[r * classes + c] = static_cast<T>(y[c] * (g[c] - dot));
        }
    }
    return dx;
}

template <typename T>
BasicTensor<T> residual_add(const BasicTensor<T>& main, const BasicTensor<T>& skip) {
    if (main.shape() != skip.shape()) {
        throw ShapeError("residual branches differ: main " + main.shape().str() + ", skip " + skip.shape().str());
    }
    return add(main, skip);
}

// ---- depthwise-separable block ---------------------------------------------

template <typename T>
BasicTensor<T> depthwise_separable_block(const BasicTensor<T>& x, const SeparableBlockParams<T>& params,
                                         std::size_t stride, Padding padding) {
    const std::size_t c_in = x.shape().channels();
    if (params.dw_weights.shape().extents[2] != c_in || params.pw_weights.shape().extents[2] != c_in) {
        throw ShapeError("separable block kernels do not match " + std::to_string(c_in) + " input channels");
    }
    const std::size_t c_out = params.pw_weights.shape().channels();
    auto ones_or = [](const BasicTensor<T>& t, std::size_t c) {
        return t.empty() ? BasicTensor<T>::create(Shape(1, 1, 1, c), fill::Constant{1.0}) : t;
    };
    auto zeros_or = [](const BasicTensor<T>& t, std::size_t c) {
        return t.empty() ? BasicTensor<T>(Shape(1, 1, 1, c)) : t;
    };
    auto h = depthwise_conv2d(x, params.dw_weights, params.dw_bias, stride, padding);
    h = batchnorm<T>(h, ones_or(params.bn1_gamma, c_in), zeros_or(params.bn1_beta, c_in), nullptr, Mode::train)
            .output;
    h = relu(h);
    h = conv2d(h, params.pw_weights, params.pw_bias, 1, Padding::valid);
    h = batchnorm<T>(h, ones_or(params.bn2_gamma, c_out), zeros_or(params.bn2_beta, c_out), nullptr, Mode::train)
            .output;
    return relu(h);
}

#define GRADESHI_INSTANTIATE(T)                                                                                   \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                   std::size_t, Padding);                                                     \
    template LayerGrads<T> conv2d_backward(const std::optional<ConvCache<T>>&, const BasicTensor<T>&, bool,    \
                                           bool);                                                             \
    template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                             const BasicTensor<T>&, std::size_t, Padding);                    \
    template LayerGrads<T> depthwise_conv2d_backward(const std::optional<ConvCache<T>>&, const BasicTensor<T>&, \
                                                     bool, bool);                                             \
    template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
    template LayerGrads<T> dense_backward(const std::optional<DenseCache<T>>&, const BasicTensor<T>&, bool,    \
                                          bool);                                                              \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template PoolResult<T> maxpool2d(const BasicTensor<T>&, std::size_t, std::size_t);                          \
    template BasicTensor<T> maxpool2d_backward(const PoolCache&, const BasicTensor<T>&);                        \
    template BasicTensor<T> global_avgpool(const BasicTensor<T>&);                                              \
    template BasicTensor<T> global_avgpool_backward(const Shape&, const BasicTensor<T>&);                       \
    template DropoutResult<T> dropout(const BasicTensor<T>&, double, Mode, std::uint64_t);                      \
    template BasicTensor<T> dropout_backward(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template BatchNormResult<T> batchnorm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                          RunningStats<T>*, Mode, double, double, bool);                      \
    template LayerGrads<T> batchnorm_backward(const BatchNormCache<T>&, const BasicTensor<T>&, bool, bool);     \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                                     \
    template BasicTensor<T> softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template BasicTensor<T> residual_add(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> depthwise_separable_block(const BasicTensor<T>&, const SeparableBlockParams<T>&,    \
                                                      std::size_t, Padding);

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi::ops
