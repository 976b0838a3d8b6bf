#pragma once

// Small dense linear algebra for d x d systems (d is typically 1..6).
// Everything is plain double, row-major, no external dependencies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mudicho {

using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a; // row-major

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat diag(const Vec& d) {
        Mat m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows_) {
        Mat m(rows_.size(), rows_.begin()->size());
        std::size_t i = 0;
        for (const auto& r : rows_) {
            std::size_t j = 0;
            for (double v : r) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    bool square() const { return rows == cols; }
};

inline Mat operator*(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw std::invalid_argument("Mat product: shape mismatch");
    Mat z(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double xik = x(i, k);
            if (xik == 0.0) continue;
            for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += xik * y(k, j);
        }
    return z;
}

inline Vec operator*(const Mat& x, const Vec& v) {
    if (x.cols != v.size()) throw std::invalid_argument("Mat*Vec: shape mismatch");
    Vec w(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += x(i, j) * v[j];
        w[i] = s;
    }
    return w;
}

inline Mat operator+(const Mat& x, const Mat& y) {
    Mat z = x;
    for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] += y.a[i];
    return z;
}

inline Mat operator-(const Mat& x, const Mat& y) {
    Mat z = x;
    for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] -= y.a[i];
    return z;
}

inline Mat operator*(double s, const Mat& x) {
    Mat z = x;
    for (double& v : z.a) v *= s;
    return z;
}

inline Vec operator+(const Vec& x, const Vec& y) {
    Vec z = x;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += y[i];
    return z;
}

inline Vec operator-(const Vec& x, const Vec& y) {
    Vec z = x;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= y[i];
    return z;
}

inline Vec operator*(double s, const Vec& x) {
    Vec z = x;
    for (double& v : z) v *= s;
    return z;
}

inline Mat transpose(const Mat& x) {
    Mat t(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) t(j, i) = x(i, j);
    return t;
}

inline double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double norm_inf(const Vec& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::fabs(v));
    return m;
}

inline double max_abs(const Mat& x) {
    double m = 0.0;
    for (double v : x.a) m = std::max(m, std::fabs(v));
    return m;
}

inline double frobenius(const Mat& x) {
    double s = 0.0;
    for (double v : x.a) s += v * v;
    return std::sqrt(s);
}

// Gaussian elimination with partial pivoting. Throws on (near-)singular input.
inline Vec solve(Mat a, Vec b) {
    if (!a.square() || a.rows != b.size()) throw std::invalid_argument("solve: shape mismatch");
    const std::size_t n = a.rows;
    std::vector<std::size_t> piv(n);
    for (std::size_t i = 0; i < n; ++i) piv[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::fabs(a(k, k));
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::fabs(a(i, k)) > best) { best = std::fabs(a(i, k)); p = i; }
        if (best == 0.0) throw std::runtime_error("solve: singular matrix");
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
            std::swap(b[k], b[p]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            if (f == 0.0) continue;
            a(i, k) = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            b[i] -= f * b[k];
        }
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x[j];
        x[ii] = s / a(ii, ii);
    }
    return x;
}

inline Mat inverse(const Mat& m) {
    if (!m.square()) throw std::invalid_argument("inverse: not square");
    const std::size_t n = m.rows;
    Mat inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec e(n, 0.0);
        e[j] = 1.0;
        Vec col = solve(m, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

// One-sided Jacobi SVD, adequate and robust for the small matrices used here.
// a = U * diag(sigma) * V^T with sigma sorted descending.
struct Svd {
    Mat u;
    Vec sigma;
    Mat v;
};

inline Svd svd(const Mat& a0) {
    if (!a0.square()) throw std::invalid_argument("svd: square matrices only");
    const std::size_t n = a0.rows;
    Mat a = a0;
    Mat v = Mat::identity(n);
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    alpha += a(i, p) * a(i, p);
                    beta += a(i, q) * a(i, q);
                    gamma += a(i, p) * a(i, q);
                }
                off = std::max(off, std::fabs(gamma) / std::max(std::sqrt(alpha * beta), 1e-300));
                if (std::fabs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (off < eps) break;
    }
    Svd out;
    out.sigma.assign(n, 0.0);
    out.u = Mat(n, n);
    out.v = Mat(n, n);
    std::vector<std::size_t> order(n);
    Vec colnorm(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
        colnorm[j] = std::sqrt(s);
        order[j] = j;
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return colnorm[x] > colnorm[y]; });
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.sigma[k] = colnorm[j];
        for (std::size_t i = 0; i < n; ++i) {
            out.v(i, k) = v(i, j);
            out.u(i, k) = colnorm[j] > 0 ? a(i, j) / colnorm[j] : (i == k ? 1.0 : 0.0);
        }
    }
    return out;
}

inline double spectral_norm(const Mat& m) {
    if (m.rows == 1 && m.cols == 1) return std::fabs(m(0, 0));
    double s = 0.0;
    for (double v : m.a) s += v * v;
    if (s == 0.0) return 0.0;
    return svd(m).sigma.front();
}

inline double cond2(const Mat& m) {
    Svd d = svd(m);
    const double lo = d.sigma.back();
    if (lo == 0.0) return std::numeric_limits<double>::infinity();
    return d.sigma.front() / lo;
}

// Modified Gram-Schmidt on the columns. No pivoting, so span(Q[:,0..k)) equals
// span of the first k input columns for every k; the subspace sweeps in the
// dichotomy estimator rely on this prefix property.
inline Mat orthonormalize_columns(const Mat& m) {
    Mat q = m;
    for (std::size_t j = 0; j < q.cols; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < q.rows; ++i) s += q(i, k) * q(i, j);
            for (std::size_t i = 0; i < q.rows; ++i) q(i, j) -= s * q(i, k);
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < q.rows; ++i) nrm += q(i, j) * q(i, j);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-300) throw std::runtime_error("orthonormalize: rank-deficient frame");
        for (std::size_t i = 0; i < q.rows; ++i) q(i, j) /= nrm;
    }
    return q;
}

// Oblique projection with image = span(img columns), kernel = span(ker columns).
inline Mat oblique_projection(const Mat& img, const Mat& ker) {
    const std::size_t d = img.rows;
    if (img.cols + ker.cols != d) throw std::invalid_argument("oblique_projection: dims");
    Mat basis(d, d);
    for (std::size_t j = 0; j < img.cols; ++j)
        for (std::size_t i = 0; i < d; ++i) basis(i, j) = img(i, j);
    for (std::size_t j = 0; j < ker.cols; ++j)
        for (std::size_t i = 0; i < d; ++i) basis(i, img.cols + j) = ker(i, j);
    Mat sel(d, d);
    for (std::size_t j = 0; j < img.cols; ++j) sel(j, j) = 1.0;
    return basis * sel * inverse(basis);
}

// A matrix kept as m * exp(logscale) with max|m| held near 1. Long cocycle
// products overflow/underflow doubles otherwise (rates up to e^{+-5} over
// windows of several hundred steps).
struct ScaledMat {
    Mat m;
    double logscale = 0.0;

    static ScaledMat from(const Mat& x) {
        ScaledMat s{x, 0.0};
        s.renormalize();
        return s;
    }
    // rescale only once entries drift far from 1; short benign products stay
    // bit-exact (materialize is then the identity on them)
    void renormalize() {
        const double mx = max_abs(m);
        if (mx > 0.0 && std::isfinite(mx) && (mx > 1e12 || mx < 1e-12)) {
            for (double& v : m.a) v /= mx;
            logscale += std::log(mx);
        }
    }
    Mat materialize() const {
        if (logscale == 0.0) return m;
        Mat out = m;
        const double f = std::exp(logscale);
        for (double& v : out.a) v *= f;
        return out;
    }
    double log_spectral_norm() const { return std::log(spectral_norm(m)) + logscale; }
};

inline ScaledMat operator*(const ScaledMat& x, const ScaledMat& y) {
    ScaledMat z{x.m * y.m, x.logscale + y.logscale};
    z.renormalize();
    return z;
}

inline ScaledMat operator*(const ScaledMat& x, const Mat& y) {
    ScaledMat z{x.m * y, x.logscale};
    z.renormalize();
    return z;
}

// log ||s * b|| (spectral norm), safe when the materialized product overflows.
inline double log_norm_of_product(const ScaledMat& s, const Mat& b) {
    const Mat p = s.m * b;
    const double nrm = spectral_norm(p);
    if (nrm == 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(nrm) + s.logscale;
}

} // namespace mudicho
