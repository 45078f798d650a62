#pragma once
// Scalar reference implementations. Everything here is written with explicit
// index loops in double precision and shares no code with the library.

#include "hfcr/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

template <typename T>
Mat from_tensor(const hfcr::Tensor<T>& t) {
    const std::size_t r = t.dim(0), c = t.dim(1);
    Mat m = zeros(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = static_cast<double>(t.at(i, j));
    return m;
}

inline Mat transpose(const Mat& a) {
    Mat t = zeros(a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c = zeros(a.size(), b[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
            c[i][j] = s;
        }
    return c;
}

/// Row-wise softmax(q·kᵀ·scale)·v, one scalar at a time.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, double scale) {
    const std::size_t rows = q.size(), keys = k.size(), width = v[0].size();
    Mat out = zeros(rows, width);
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> s(keys);
        double mx = -1e300;
        for (std::size_t j = 0; j < keys; ++j) {
            double dot = 0;
            for (std::size_t t = 0; t < q[0].size(); ++t) dot += q[i][t] * k[j][t];
            s[j] = dot * scale;
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < keys; ++j) z += (s[j] = std::exp(s[j] - mx));
        for (std::size_t j = 0; j < keys; ++j)
            for (std::size_t t = 0; t < width; ++t) out[i][t] += s[j] / z * v[j][t];
    }
    return out;
}

/// Sine on even channels, cosine on odd ones; d rows by r flattened positions.
inline Mat position_encoding(std::size_t d, std::size_t r) {
    Mat pe = zeros(d, r);
    for (std::size_t c = 0; c < d; ++c) {
        const double pair = static_cast<double>(c - c % 2);
        for (std::size_t p = 0; p < r; ++p) {
            const double a = static_cast<double>(p) / std::pow(10000.0, pair / static_cast<double>(d));
            pe[c][p] = c % 2 == 0 ? std::sin(a) : std::cos(a);
        }
    }
    return pe;
}

inline Mat add(Mat a, const Mat& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) a[i][j] += b[i][j];
    return a;
}

/// Channel attention over a d×r map with r×r projections.
inline Mat cfo(const Mat& f, const Mat& wq, const Mat& wk, const Mat& wv) {
    return attention(matmul(f, wq), matmul(f, wk), matmul(f, wv), 1.0 / std::sqrt(static_cast<double>(f[0].size())));
}

/// Spatial attention over the r×d view with d×d projections.
inline Mat sfo(const Mat& f, const Mat& wq, const Mat& wk, const Mat& wv) {
    const Mat x = transpose(f);
    return attention(matmul(x, wq), matmul(x, wk), matmul(x, wv), 1.0 / std::sqrt(static_cast<double>(f.size())));
}

/// Average over shots of the query attending to each shot (d×r inputs).
inline Mat cfr_query(const Mat& q, const std::vector<Mat>& shots, const Mat& aq, const Mat& ak, const Mat& av) {
    const double sc = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
    Mat acc = zeros(q.size(), q[0].size());
    for (const auto& s : shots) acc = add(acc, attention(matmul(q, aq), matmul(s, ak), matmul(s, av), sc));
    for (auto& row : acc)
        for (auto& v : row) v /= static_cast<double>(shots.size());
    return acc;
}

/// Each shot attending to the query, blocks laid side by side (d×K·r).
inline Mat cfr_support(const std::vector<Mat>& shots, const Mat& q, const Mat& aq, const Mat& ak, const Mat& av) {
    const std::size_t d = q.size(), r = q[0].size();
    const double sc = 1.0 / std::sqrt(static_cast<double>(r));
    Mat out = zeros(d, r * shots.size());
    for (std::size_t k = 0; k < shots.size(); ++k) {
        const Mat blk = attention(matmul(shots[k], aq), matmul(q, ak), matmul(q, av), sc);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < r; ++j) out[i][k * r + j] = blk[i][j];
    }
    return out;
}

/// Spatial query (r×d) attending over the stacked support (K·r×d).
inline Mat sfr_query(const Mat& q, const Mat& stack, const Mat& aq, const Mat& ak, const Mat& av) {
    return attention(matmul(q, aq), matmul(stack, ak), matmul(stack, av), 1.0 / std::sqrt(static_cast<double>(q[0].size())));
}

inline Mat sfr_support(const Mat& stack, const Mat& q, const Mat& aq, const Mat& ak, const Mat& av) {
    return attention(matmul(stack, aq), matmul(q, ak), matmul(q, av), 1.0 / std::sqrt(static_cast<double>(q[0].size())));
}

template <typename T>
double max_abs_diff(const hfcr::Tensor<T>& got, const Mat& want) {
    if (got.rank() != 2 || got.dim(0) != want.size() || got.dim(1) != want[0].size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t j = 0; j < want[0].size(); ++j)
            m = std::max(m, std::abs(static_cast<double>(got.at(i, j)) - want[i][j]));
    return m;
}

template <typename T>
hfcr::Tensor<T> random_tensor(hfcr::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    hfcr::Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

/// Zero-padded "same" convolution, stride 1.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t b, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t o, std::size_t ks) {
    std::vector<double> out(b * o * h * w, 0.0);
    const long pad = static_cast<long>(ks / 2);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    double s = 0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t ky = 0; ky < ks; ++ky)
                            for (std::size_t kx = 0; kx < ks; ++kx) {
                                const long iy = static_cast<long>(y + ky) - pad, ix = static_cast<long>(xx + kx) - pad;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                s += x[((n * c + ic) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                                     k[((oc * c + ic) * ks + ky) * ks + kx];
                            }
                    out[((n * o + oc) * h + y) * w + xx] = s;
                }
    return out;
}

}  // namespace oracle
