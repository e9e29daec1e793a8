#include "fragmix/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fragmix::linalg {

namespace {

constexpr double kSymmetryTol = 1e-8;
constexpr double kOffDiagonalTol = 1e-12;
constexpr int kMaxSweeps = 100;

struct RawEig {
    std::vector<double> values;
    std::vector<double> vectors;  // row-major n x n, column i is eigenvector i
};

RawEig jacobi(std::span<const double> input, std::size_t n) {
    std::vector<double> a(input.begin(), input.end());
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    double fro = 0.0;
    for (double x : a) fro += x * x;
    fro = std::sqrt(fro);
    const double target = kOffDiagonalTol * std::max(fro, 1e-300);

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a[p * n + q] * a[p * n + q];
        if (std::sqrt(off) <= target) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p];
                    const double vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i * n + i] < a[j * n + j]; });
    RawEig out;
    out.values.resize(n);
    out.vectors.resize(n * n);
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        out.values[c] = a[src * n + src];
        // Sign convention: the largest-magnitude component is positive.
        std::size_t big = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (std::abs(v[k * n + src]) > std::abs(v[big * n + src]) + 1e-14) big = k;
        const double sign = v[big * n + src] < 0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) out.vectors[k * n + c] = sign * v[k * n + src];
    }
    return out;
}

std::size_t square_extent(const Tensor& a, const char* op) {
    if (a.rank() != 2 || a.rows() != a.cols()) {
        throw DimensionError(std::string(op) + ": expected a square matrix, got " + shape_str(a.shape()));
    }
    const std::size_t n = a.rows();
    const auto d = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!(std::abs(d[i * n + j] - d[j * n + i]) <= kSymmetryTol)) {
                throw SymmetryError(std::string(op) + ": matrix is not symmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
            }
        }
    }
    return n;
}

}  // namespace

SymEig sym_eig(const Tensor& a) {
    const std::size_t n = square_extent(a, "sym_eig");
    RawEig e = jacobi(a.data(), n);
    return {Tensor({n}, std::span<const double>(e.values)), Tensor({n, n}, std::span<const double>(e.vectors))};
}

std::size_t sym_rank(const Tensor& a, double eps) {
    const std::size_t n = square_extent(a, "sym_rank");
    const RawEig e = jacobi(a.data(), n);
    return static_cast<std::size_t>(std::count_if(e.values.begin(), e.values.end(), [eps](double l) { return l > eps; }));
}

Tensor sym_matrix_power(const Tensor& a, double power, double eps) {
    const std::size_t n = square_extent(a, "sym_matrix_power");
    auto e = std::make_shared<RawEig>(jacobi(a.data(), n));
    auto f = std::make_shared<std::vector<double>>(n, 0.0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (e->values[i] > eps) {
            (*f)[i] = std::pow(e->values[i], power);
            ++kept;
        }
    }
    if (kept == 0) {
        throw DegenerateError("all " + std::to_string(n) + " eigenvalues fall below the truncation threshold " +
                              std::to_string(eps));
    }
    const auto& v = e->vectors;
    Buffer out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += v[i * n + k] * (*f)[k] * v[j * n + k];
            out[i * n + j] = s;
        }

    return autograd::finish("sym_matrix_power", {n, n}, std::move(out), {a}, [a, e, f, n, power, eps](std::span<const double> g) {
        const auto& v = e->vectors;
        const auto& lam = e->values;
        // M = V^T sym(G) V
        std::vector<double> gs(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) gs[i * n + j] = 0.5 * (g[i * n + j] + g[j * n + i]);
        std::vector<double> tmp(n * n, 0.0), m(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < n; ++j) tmp[i * n + j] += v[k * n + i] * gs[k * n + j];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < n; ++j) m[i * n + j] += tmp[i * n + k] * v[k * n + j];
        // Divided differences of f on the spectrum.
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double li = lam[i], lj = lam[j];
                double dd;
                const double gap = li - lj;
                if (std::abs(gap) > 1e-12 * std::max({1.0, std::abs(li), std::abs(lj)})) {
                    dd = ((*f)[i] - (*f)[j]) / gap;
                } else {
                    dd = li > eps ? power * std::pow(li, power - 1.0) : 0.0;
                }
                m[i * n + j] *= dd;
            }
        }
        // dA = V M V^T
        std::fill(tmp.begin(), tmp.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < n; ++j) tmp[i * n + j] += v[i * n + k] * m[k * n + j];
        auto ga = autograd::grad_of(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k) s += tmp[i * n + k] * v[j * n + k];
                ga[i * n + j] += s;
            }
    });
}

}  // namespace fragmix::linalg
