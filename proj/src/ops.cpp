#include "fragmix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fragmix/kernels.hpp"

namespace fragmix::ops {

using autograd::finish;
using autograd::grad_of;

namespace {

enum class Bcast { same, row, scalar };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::same;
    if (b.numel() == 1) return Bcast::scalar;
    if (a.rank() >= 2 && b.rank() + 1 == a.rank() &&
        std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin())) {
        return Bcast::row;
    }
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not broadcast-compatible");
}

inline std::size_t b_index(Bcast kind, std::size_t i, std::size_t bn) {
    switch (kind) {
        case Bcast::same: return i;
        case Bcast::row: return i % bn;
        case Bcast::scalar: return 0;
    }
    return 0;
}

template <class F, class DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
    const auto x = a.data();
    Buffer y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const bool record = autograd::needs_record({&a});
    if (!record) return Tensor(a.shape(), std::move(y));
    auto y_copy = std::make_shared<Buffer>(y);
    return finish(name, a.shape(), std::move(y), {a}, [a, y_copy, df](std::span<const double> g) {
        auto ga = grad_of(a);
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], (*y_copy)[i]);
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// Splits a shape into (outer, last).
std::pair<std::size_t, std::size_t> rows_last(const Tensor& t, const char* op) {
    if (t.rank() == 0) throw DimensionError(std::string(op) + ": needs at least one axis");
    const std::size_t last = t.shape().back();
    return {last == 0 ? 0 : t.numel() / last, last};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents differ between " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    Buffer c(m * n, 0.0);
    const auto& kt = kernels::active();
    kt.gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, c.data(), n);
    return finish("matmul", {m, n}, std::move(c), {a, b}, [a, b, m, n, k](std::span<const double> g) {
        const auto& kt = kernels::active();
        if (a.requires_grad()) kt.gemm_nt(m, k, n, g.data(), n, b.data().data(), n, grad_of(a).data(), k);
        if (b.requires_grad()) kt.gemm_tn(k, n, m, a.data().data(), k, g.data(), n, grad_of(b).data(), n);
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Buffer t(m * n);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = x[i * n + j];
    return finish("transpose", {n, m}, std::move(t), {a}, [a, m, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

namespace {

template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd f, Da da, Db db) {
    const Bcast kind = classify(a, b, name);
    const auto x = a.data();
    const auto y = b.data();
    const std::size_t bn = b.numel();
    Buffer out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[b_index(kind, i, bn)]);
    return finish(name, a.shape(), std::move(out), {a, b}, [a, b, kind, bn, da, db](std::span<const double> g) {
        const auto x = a.data();
        const auto y = b.data();
        if (a.requires_grad()) {
            auto ga = grad_of(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[b_index(kind, i, bn)]);
        }
        if (b.requires_grad()) {
            auto gb = grad_of(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t j = b_index(kind, i, bn);
                gb[j] += g[i] * db(x[i], y[j]);
            }
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary(
        "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(
        "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a, [](double x) { return sigmoid_scalar(x); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary(
        "silu", a, [](double x) { return x * sigmoid_scalar(x); },
        [](double x, double) {
            const double s = sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor softmax_lastdim(const Tensor& a) {
    const auto [rows, n] = rows_last(a, "softmax_lastdim");
    const auto x = a.data();
    Buffer y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = y.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
    }
    auto saved = autograd::needs_record({&a}) ? std::make_shared<Buffer>(y) : nullptr;
    return finish("softmax", a.shape(), std::move(y), {a}, [a, saved, rows, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = saved->data() + r * n;
            const double* gr = g.data() + r * n;
            double dotv = 0.0;
            for (std::size_t j = 0; j < n; ++j) dotv += gr[j] * yr[j];
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yr[j] * (gr[j] - dotv);
        }
    });
}

Tensor log_softmax_lastdim(const Tensor& a) {
    const auto [rows, n] = rows_last(a, "log_softmax_lastdim");
    const auto x = a.data();
    Buffer y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(xr[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xr[j] - lse;
    }
    auto saved = autograd::needs_record({&a}) ? std::make_shared<Buffer>(y) : nullptr;
    return finish("log_softmax", a.shape(), std::move(y), {a}, [a, saved, rows, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * n;
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += gr[j];
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += gr[j] - std::exp((*saved)[r * n + j]) * gs;
        }
    });
}

Tensor logsumexp_lastdim(const Tensor& a) {
    const auto [rows, n] = rows_last(a, "logsumexp_lastdim");
    if (n == 0) throw DimensionError("logsumexp_lastdim: empty last axis");
    const auto x = a.data();
    Buffer y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(xr[j] - mx);
        y[r] = mx + std::log(s);
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    auto saved = autograd::needs_record({&a}) ? std::make_shared<Buffer>(y) : nullptr;
    return finish("logsumexp", std::move(out_shape), std::move(y), {a}, [a, saved, rows, n](std::span<const double> g) {
        auto ga = grad_of(a);
        const auto x = a.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r] * std::exp(x[r * n + j] - (*saved)[r]);
        }
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    const auto [rows, n] = rows_last(x, "layernorm");
    if (gain.numel() != n || shift.numel() != n) {
        throw DimensionError("layernorm: gain/shift of shape " + shape_str(gain.shape()) + "/" +
                             shape_str(shift.shape()) + " do not match feature width " + std::to_string(n));
    }
    const auto xv = x.data();
    const auto gv = gain.data();
    const auto sv = shift.data();
    Buffer y(xv.size());
    auto xhat = std::make_shared<Buffer>(xv.size());
    auto inv_std = std::make_shared<Buffer>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xr[j] - mu) * is;
            (*xhat)[r * n + j] = h;
            y[r * n + j] = gv[j] * h + sv[j];
        }
    }
    return finish("layernorm", x.shape(), std::move(y), {x, gain, shift},
                  [x, gain, shift, xhat, inv_std, rows, n](std::span<const double> g) {
                      const auto gv = gain.data();
                      if (gain.requires_grad() || shift.requires_grad()) {
                          auto gg = gain.requires_grad() ? grad_of(gain) : std::span<double>{};
                          auto gs = shift.requires_grad() ? grad_of(shift) : std::span<double>{};
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < n; ++j) {
                                  if (!gg.empty()) gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                                  if (!gs.empty()) gs[j] += g[r * n + j];
                              }
                          }
                      }
                      if (!x.requires_grad()) return;
                      auto gx = grad_of(x);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < rows; ++r) {
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                              const double dh = g[r * n + j] * gv[j];
                              m1 += dh;
                              m2 += dh * (*xhat)[r * n + j];
                          }
                          m1 *= inv_n;
                          m2 *= inv_n;
                          for (std::size_t j = 0; j < n; ++j) {
                              const double dh = g[r * n + j] * gv[j];
                              gx[r * n + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * n + j] * m2);
                          }
                      }
                  });
}

Tensor dropout(const Tensor& x, const DropoutSpec& spec) {
    if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(spec.rate));
    }
    if (!spec.training || spec.rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - spec.rate);
    const auto xv = x.data();
    Buffer y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = spec.key.uniform(i) >= spec.rate ? xv[i] * keep_scale : 0.0;
    return finish("dropout", x.shape(), std::move(y), {x}, [x, spec, keep_scale](std::span<const double> g) {
        auto gx = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (spec.key.uniform(i) >= spec.rate) gx[i] += g[i] * keep_scale;
        }
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for " + shape_str(ref));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
    std::size_t total_axis = 0;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
        if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(ref));
        widths.push_back(s[axis] * inner);
        total_axis += s[axis];
    }
    Shape out_shape = ref;
    out_shape[axis] = total_axis;
    const std::size_t row = total_axis * inner;
    Buffer out(outer * row);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto v = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * row + offset);
        offset += widths[p];
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return finish("concat", std::move(out_shape), std::move(out), inputs,
                  [inputs, widths, outer, row](std::span<const double> g) {
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < inputs.size(); ++p) {
                          if (inputs[p].requires_grad()) {
                              auto gp = grad_of(inputs[p]);
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t j = 0; j < widths[p]; ++j)
                                      gp[o * widths[p] + j] += g[o * row + offset + j];
                          }
                          offset += widths[p];
                      }
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Buffer out(a.data().begin(), a.data().end());
    return finish("reshape", std::move(shape), std::move(out), {a}, [a](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
    const auto [rows, n] = rows_last(a, "slice_last");
    if (begin > end || end > n) {
        throw DimensionError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + shape_str(a.shape()));
    }
    const std::size_t w = end - begin;
    Buffer out(rows * w);
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * n + begin, w, out.data() + r * w);
    Shape s = a.shape();
    s.back() = w;
    return finish("slice_last", std::move(s), std::move(out), {a}, [a, rows, n, begin, w](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) ga[r * n + begin + j] += g[r * w + j];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return finish("sum", {}, Buffer{s}, {a}, [a](std::span<const double> g) {
        auto ga = grad_of(a);
        for (double& v : ga) v += g[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
    require_matrix(a, "mean_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw DimensionError("mean_rows: no rows");
    Buffer out(n, 0.0);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
    const double inv = 1.0 / static_cast<double>(m);
    for (double& v : out) v *= inv;
    return finish("mean_rows", {n}, std::move(out), {a}, [a, m, n, inv](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
    });
}

Tensor segment_mean(const Tensor& a, std::size_t group) {
    require_matrix(a, "segment_mean");
    const std::size_t rows = a.rows(), n = a.cols();
    if (group == 0 || rows % group != 0) {
        throw DimensionError("segment_mean: " + std::to_string(rows) + " rows do not split into groups of " +
                             std::to_string(group));
    }
    const std::size_t b = rows / group;
    const double inv = 1.0 / static_cast<double>(group);
    Buffer out(b * n, 0.0);
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[(r / group) * n + j] += x[r * n + j] * inv;
    return finish("segment_mean", {b, n}, std::move(out), {a}, [a, rows, n, group, inv](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[(r / group) * n + j] * inv;
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index) {
    require_matrix(a, "gather_rows");
    const std::size_t rows = a.rows(), n = a.cols();
    auto idx = std::make_shared<std::vector<std::int64_t>>(index.begin(), index.end());
    Buffer out(idx->size() * n, 0.0);
    const auto x = a.data();
    for (std::size_t e = 0; e < idx->size(); ++e) {
        const std::int64_t r = (*idx)[e];
        if (r < 0) continue;
        if (static_cast<std::size_t>(r) >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range for " +
                                 std::to_string(rows) + " rows");
        }
        std::copy_n(x.data() + static_cast<std::size_t>(r) * n, n, out.data() + e * n);
    }
    return finish("gather_rows", {idx->size(), n}, std::move(out), {a}, [a, idx, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t e = 0; e < idx->size(); ++e) {
            const std::int64_t r = (*idx)[e];
            if (r < 0) continue;
            kernels::active().axpy(1.0, g.data() + e * n, ga.data() + static_cast<std::size_t>(r) * n, n);
        }
    });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const std::int64_t> index, std::size_t n_out) {
    require_matrix(a, "scatter_add_rows");
    const std::size_t n = a.cols();
    if (index.size() != a.rows()) {
        throw DimensionError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                             std::to_string(a.rows()) + " rows");
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>(index.begin(), index.end());
    Buffer out(n_out * n, 0.0);
    const auto x = a.data();
    for (std::size_t e = 0; e < idx->size(); ++e) {
        const std::int64_t r = (*idx)[e];
        if (r < 0 || static_cast<std::size_t>(r) >= n_out) {
            throw DimensionError("scatter_add_rows: target " + std::to_string(r) + " out of range for " +
                                 std::to_string(n_out) + " rows");
        }
        kernels::active().axpy(1.0, x.data() + e * n, out.data() + static_cast<std::size_t>(r) * n, n);
    }
    return finish("scatter_add_rows", {n_out, n}, std::move(out), {a}, [a, idx, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t e = 0; e < idx->size(); ++e) {
            const std::size_t r = static_cast<std::size_t>((*idx)[e]);
            kernels::active().axpy(1.0, g.data() + r * n, ga.data() + e * n, n);
        }
    });
}

Tensor scale_rows(const Tensor& a, std::span<const double> weights) {
    require_matrix(a, "scale_rows");
    const std::size_t rows = a.rows(), n = a.cols();
    if (weights.size() != rows) {
        throw DimensionError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                             std::to_string(rows) + " rows");
    }
    auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
    Buffer out(a.data().begin(), a.data().end());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= (*w)[r];
    return finish("scale_rows", a.shape(), std::move(out), {a}, [a, w, rows, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * (*w)[r];
    });
}

Tensor pick(const Tensor& a, std::span<const std::int64_t> labels) {
    require_matrix(a, "pick");
    const std::size_t rows = a.rows(), n = a.cols();
    if (labels.size() != rows) {
        throw DimensionError("pick: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
    }
    auto lab = std::make_shared<std::vector<std::int64_t>>(labels.begin(), labels.end());
    Buffer out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::int64_t c = (*lab)[r];
        if (c < 0 || static_cast<std::size_t>(c) >= n) {
            throw DimensionError("pick: label " + std::to_string(c) + " out of range for " + std::to_string(n) +
                                 " columns");
        }
        out[r] = a.data()[r * n + static_cast<std::size_t>(c)];
    }
    return finish("pick", {rows}, std::move(out), {a}, [a, lab, n](std::span<const double> g) {
        auto ga = grad_of(a);
        for (std::size_t r = 0; r < lab->size(); ++r) ga[r * n + static_cast<std::size_t>((*lab)[r])] += g[r];
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add(matmul(x, weight), bias); }

Tensor diag_gaussian_log_density(const Tensor& z, const Tensor& mu, const Tensor& logvar) {
    require_matrix(z, "diag_gaussian_log_density");
    if (mu.shape() != z.shape() || logvar.shape() != z.shape()) {
        throw DimensionError("diag_gaussian_log_density: shapes " + shape_str(z.shape()) + ", " +
                             shape_str(mu.shape()) + ", " + shape_str(logvar.shape()) + " differ");
    }
    const std::size_t b = z.rows(), d = z.cols();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const auto zv = z.data(), mv = mu.data(), lv = logvar.data();
    Buffer out(b, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            const double diff = zv[i] - mv[i];
            s += diff * diff * std::exp(-lv[i]) + lv[i] + log2pi;
        }
        out[r] = -0.5 * s;
    }
    return finish("diag_gaussian_log_density", {b}, std::move(out), {z, mu, logvar},
                  [z, mu, logvar, b, d](std::span<const double> g) {
                      const auto zv = z.data(), mv = mu.data(), lv = logvar.data();
                      auto gz = z.requires_grad() ? grad_of(z) : std::span<double>{};
                      auto gm = mu.requires_grad() ? grad_of(mu) : std::span<double>{};
                      auto gl = logvar.requires_grad() ? grad_of(logvar) : std::span<double>{};
                      for (std::size_t r = 0; r < b; ++r) {
                          for (std::size_t j = 0; j < d; ++j) {
                              const std::size_t i = r * d + j;
                              const double iv = std::exp(-lv[i]);
                              const double diff = zv[i] - mv[i];
                              if (!gz.empty()) gz[i] += g[r] * (-diff * iv);
                              if (!gm.empty()) gm[i] += g[r] * (diff * iv);
                              if (!gl.empty()) gl[i] += g[r] * 0.5 * (diff * diff * iv - 1.0);
                          }
                      }
                  });
}

Tensor mixture_gaussian_log_density(const Tensor& z, const Tensor& mu, const Tensor& logvar) {
    require_matrix(z, "mixture_gaussian_log_density");
    require_matrix(mu, "mixture_gaussian_log_density");
    if (logvar.shape() != mu.shape() || mu.cols() != z.cols() || mu.rows() == 0) {
        throw DimensionError("mixture_gaussian_log_density: z " + shape_str(z.shape()) + ", components " +
                             shape_str(mu.shape()) + "/" + shape_str(logvar.shape()));
    }
    const std::size_t b = z.rows(), d = z.cols(), p = mu.rows();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const double log_p = std::log(static_cast<double>(p));
    const auto zv = z.data(), mv = mu.data(), lv = logvar.data();
    // Component log densities, kept for the backward pass as responsibilities.
    auto resp = std::make_shared<std::vector<double>>(b * p);
    Buffer out(b);
    for (std::size_t r = 0; r < b; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < p; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = zv[r * d + j] - mv[c * d + j];
                s += diff * diff * std::exp(-lv[c * d + j]) + lv[c * d + j] + log2pi;
            }
            (*resp)[r * p + c] = -0.5 * s;
            mx = std::max(mx, -0.5 * s);
        }
        double acc = 0.0;
        for (std::size_t c = 0; c < p; ++c) acc += std::exp((*resp)[r * p + c] - mx);
        const double lse = mx + std::log(acc);
        out[r] = lse - log_p;
        for (std::size_t c = 0; c < p; ++c) (*resp)[r * p + c] = std::exp((*resp)[r * p + c] - lse);
    }
    return finish("mixture_gaussian_log_density", {b}, std::move(out), {z, mu, logvar},
                  [z, mu, logvar, resp, b, d, p](std::span<const double> g) {
                      const auto zv = z.data(), mv = mu.data(), lv = logvar.data();
                      auto gz = z.requires_grad() ? grad_of(z) : std::span<double>{};
                      auto gm = mu.requires_grad() ? grad_of(mu) : std::span<double>{};
                      auto gl = logvar.requires_grad() ? grad_of(logvar) : std::span<double>{};
                      for (std::size_t r = 0; r < b; ++r) {
                          for (std::size_t c = 0; c < p; ++c) {
                              const double w = g[r] * (*resp)[r * p + c];
                              for (std::size_t j = 0; j < d; ++j) {
                                  const double iv = std::exp(-lv[c * d + j]);
                                  const double diff = zv[r * d + j] - mv[c * d + j];
                                  if (!gz.empty()) gz[r * d + j] += w * (-diff * iv);
                                  if (!gm.empty()) gm[c * d + j] += w * (diff * iv);
                                  if (!gl.empty()) gl[c * d + j] += w * 0.5 * (diff * diff * iv - 1.0);
                              }
                          }
                      }
                  });
}

}  // namespace fragmix::ops
