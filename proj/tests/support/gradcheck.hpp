// Central finite-difference oracle for layer gradients (64-bit).
#ifndef GRADESHI_TESTS_GRADCHECK_HPP
#define GRADESHI_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gradeshi/layers.hpp"
#include "gradeshi/random.hpp"

namespace gradeshi::check {

struct GradCheck {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst_rel = 0.0;
    std::string worst;

    bool ok() const { return failed == 0 && checked > 0; }

    void merge(const GradCheck& o) {
        checked += o.checked;
        failed += o.failed;
        if (o.worst_rel > worst_rel) {
            worst_rel = o.worst_rel;
            worst = o.worst;
        }
    }
};

// rel = |a - n| / max(|a|, |n|); below 1e-4 in magnitude an absolute bound
// of 1e-6 applies instead.
inline bool grad_close(double analytic, double numeric, double rel_tol, double* rel_out) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    *rel_out = std::abs(analytic) < 1e-4 ? std::min(rel, diff) : rel;
    if (std::abs(analytic) < 1e-4) {
        return diff <= 1e-6 || rel <= rel_tol;
    }
    return rel <= rel_tol;
}

inline void record(GradCheck& r, const std::string& where, double analytic, double numeric, double rel_tol) {
    double rel = 0.0;
    ++r.checked;
    if (!grad_close(analytic, numeric, rel_tol, &rel)) {
        ++r.failed;
    }
    if (rel >= r.worst_rel) {
        r.worst_rel = rel;
        std::ostringstream os;
        os << where << " analytic=" << analytic << " numeric=" << numeric;
        r.worst = os.str();
    }
}

inline double weighted_sum(const TensorD& y, const TensorD& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += y[i] * w[i];
    }
    return s;
}

// Fourth-order central difference of f at 0 with step h:
// (8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h.
template <typename F>
double central_difference(F&& f, double h) {
    const double near = f(h) - f(-h);
    const double far = f(2.0 * h) - f(-2.0 * h);
    return (8.0 * near - far) / (12.0 * h);
}

// Checks every input and parameter gradient of `layer` for the scalar
// L = sum(w * forward(inputs)) with a random weighting w. `prepare` runs
// before every forward call (e.g. to replay a dropout mask).
inline GradCheck check_layer(Layer<double>& layer, std::vector<TensorD> inputs, ops::Mode mode, std::uint64_t seed,
                             double h = 1e-3, double rel_tol = 1e-4, const std::function<void()>& prepare = {}) {
    auto run = [&] {
        if (prepare) {
            prepare();
        }
        std::vector<const TensorD*> ptrs;
        for (const auto& t : inputs) {
            ptrs.push_back(&t);
        }
        return layer.forward(std::span<const TensorD* const>(ptrs), mode);
    };
    const TensorD y = run();
    const TensorD w = TensorD::create(y.shape(), fill::Uniform{-1.0, 1.0, seed});
    const LayerGrads<double> g = layer.backward(w, true, true);

    GradCheck r;
    auto probe = [&](TensorD& t, const TensorD& analytic, const std::string& name) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            auto at = [&](double offset) {
                t[i] = saved + offset;
                return weighted_sum(run(), w);
            };
            const double numeric = central_difference(at, h);
            t[i] = saved;
            record(r, name + "[" + std::to_string(i) + "]", analytic[i], numeric, rel_tol);
        }
    };
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        probe(inputs[k], g.inputs.at(k), std::string(to_string(layer.kind())) + " input" + std::to_string(k));
    }
    for (auto& [name, value] : layer.params()) {
        probe(value, g.params.at(name), std::string(to_string(layer.kind())) + " " + name);
    }
    return r;
}

// Values bounded away from zero, so ReLU's kink is never straddled.
inline TensorD away_from_zero(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    TensorD t(s);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(0.05, 1.0);
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

// Pairwise distinct values 0.01 apart in random order, so no max-pool
// window has a near tie.
inline TensorD distinct_values(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    TensorD t(s);
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = 0.01 * static_cast<double>(i) - 0.5;
    }
    shuffle(v.begin(), v.end(), rng);
    for (std::size_t i = 0; i < v.size(); ++i) {
        t[i] = v[i];
    }
    return t;
}

} // namespace gradeshi::check

#endif
