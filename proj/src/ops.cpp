#include "hfcr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>

namespace hfcr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
CMatMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return CMatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return MatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
        throw GraphError(std::string(op) + ": operands belong to different graphs");
    }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

template <typename T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
    if (a.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
    }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Shared by softmax_lastdim and softmax_values so both paths round identically.
// The denominator is summed in ascending order, so permuting the inputs permutes
// the outputs exactly.
template <typename T>
void softmax_row(const T* in, T* out, std::size_t n) {
    T m = in[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, in[j]);
    thread_local std::vector<T> sorted;
    sorted.resize(n);
    for (std::size_t j = 0; j < n; ++j) sorted[j] = out[j] = std::exp(in[j] - m);
    std::sort(sorted.begin(), sorted.end());
    T sum{0};
    for (T e : sorted) sum += e;
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

}  // namespace

template <typename T>
std::vector<T> softmax_values(std::span<const T> x) {
    if (x.empty()) throw ShapeError("softmax_values: empty input");
    for (T v : x) {
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
    }
    std::vector<T> out(x.size());
    softmax_row(x.data(), out.data(), x.size());
    return out;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require_same_graph(a, b, "matmul");
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph<T>& g, std::size_t self) {
        auto dc = as_matrix(g.upstream(self), m, n);
        if (g.requires_grad(ia)) {
            as_matrix(g.grad_slot(ia), m, k).noalias() += dc * as_matrix(g.value(ib), k, n).transpose();
        }
        if (g.requires_grad(ib)) {
            as_matrix(g.grad_slot(ib), k, n).noalias() += as_matrix(g.value(ia), m, k).transpose() * dc;
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor<T> out(Shape{c, r});
    const auto& in = a.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    const std::size_t ia = a.id();
    return a.graph().record("transpose", std::move(out), {ia}, [ia, r, c](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    const std::size_t ia = a.id();
    return a.graph().record("reshape", std::move(out), {ia}, [ia](Graph<T>& g, std::size_t self) {
        accumulate(g.grad_slot(ia), g.upstream(self));
    });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        require_same_graph(parts[0], p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) throw ShapeError("concat: incompatible shapes " + to_string(first) + " and " + to_string(s));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    std::vector<std::size_t> chunk;  // contiguous elements per outer index, per part
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        chunk.push_back(p.value().size() / outer);
        ids.push_back(p.id());
    }
    std::size_t row = numel(out_shape) / outer;
    Tensor<T> out(out_shape);
    for (std::size_t o = 0, off = 0; o < outer; ++o) {
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const T* src = parts[p].value().data().data() + o * chunk[p];
            std::copy(src, src + chunk[p], out.data().data() + off);
            off += chunk[p];
        }
    }
    return parts[0].graph().record("concat", std::move(out), ids, [ids, chunk, outer, row](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        std::size_t col = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (g.requires_grad(ids[p])) {
                auto& dx = g.grad_slot(ids[p]);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < chunk[p]; ++j) dx[o * chunk[p] + j] += dy[o * row + col + j];
            }
            col += chunk[p];
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (s.empty() || begin >= end || end > s[0]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         to_string(s));
    }
    Shape out_shape = s;
    out_shape[0] = end - begin;
    const std::size_t row = a.value().size() / s[0];
    const T* src = a.value().data().data() + begin * row;
    Tensor<T> out(out_shape, std::vector<T>(src, src + (end - begin) * row));
    const std::size_t ia = a.id();
    return a.graph().record("slice", std::move(out), {ia}, [ia, begin, row](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * row + i] += dy[i];
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_graph(a, b, "add");
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const auto &x = a.value(), &y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        if (g.requires_grad(ia)) accumulate(g.grad_slot(ia), g.upstream(self));
        if (g.requires_grad(ib)) accumulate(g.grad_slot(ib), g.upstream(self));
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_graph(a, b, "sub");
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    const auto &x = a.value(), &y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record("sub", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        if (g.requires_grad(ia)) accumulate(g.grad_slot(ia), dy);
        if (g.requires_grad(ib)) {
            auto& dx = g.grad_slot(ib);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= dy[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_graph(a, b, "mul");
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const auto &x = a.value(), &y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        if (g.requires_grad(ia)) {
            auto& dx = g.grad_slot(ia);
            const auto& vb = g.value(ib);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * vb[i];
        }
        if (g.requires_grad(ib)) {
            auto& dx = g.grad_slot(ib);
            const auto& va = g.value(ia);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * va[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    const std::size_t ia = a.id();
    return a.graph().record("scale", std::move(out), {ia}, [ia, factor](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
    });
}

template <typename T>
Var<T> add_rowvec(const Var<T>& m, const Var<T>& v) {
    require_same_graph(m, v, "add_rowvec");
    require_rank(m, 2, "add_rowvec");
    require_rank(v, 1, "add_rowvec");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    if (v.shape()[0] != cols) {
        throw ShapeError("add_rowvec: vector " + to_string(v.shape()) + " does not match rows of " + to_string(m.shape()));
    }
    Tensor<T> out(m.shape());
    const auto &mv = m.value(), &vv = v.value();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = mv[i * cols + j] + vv[j];
    const std::size_t im = m.id(), iv = v.id();
    return m.graph().record("add_rowvec", std::move(out), {im, iv}, [im, iv, rows, cols](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        if (g.requires_grad(im)) accumulate(g.grad_slot(im), dy);
        if (g.requires_grad(iv)) {
            auto& dv = g.grad_slot(iv);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) dv[j] += dy[i * cols + j];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
    const std::size_t ia = a.id();
    return a.graph().record("relu", std::move(out), {ia}, [ia](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        const auto& x = g.value(ia);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (x[i] > T{0}) dx[i] += dy[i];
    });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    Tensor<T> out(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
    const std::size_t ia = a.id();
    return a.graph().record("exp", std::move(out), {ia}, [ia](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        const auto& y = g.value(self);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i];
    });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("softmax_lastdim: needs rank >= 1");
    const std::size_t n = s.back();
    const std::size_t rows = a.value().size() / n;
    for (T v : a.value().data()) {
        if (std::isnan(v)) throw NumericError("softmax_lastdim: NaN input");
    }
    Tensor<T> out(s);
    for (std::size_t r = 0; r < rows; ++r) softmax_row(a.value().data().data() + r * n, out.data().data() + r * n, n);
    const std::size_t ia = a.id();
    return a.graph().record("softmax", std::move(out), {ia}, [ia, rows, n](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        const auto& y = g.value(self);
        auto& dx = g.grad_slot(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    T s{0};
    for (T v : a.value().data()) s += v;
    const T n = static_cast<T>(a.value().size());
    const std::size_t ia = a.id();
    return a.graph().record("mean", Tensor<T>::scalar(s / n), {ia}, [ia, n](Graph<T>& g, std::size_t self) {
        const T dy = g.upstream(self)[0] / n;
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
    });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
    T s{0};
    for (T v : a.value().data()) s += v * v;
    const std::size_t ia = a.id();
    return a.graph().record("sum_squares", Tensor<T>::scalar(s), {ia}, [ia](Graph<T>& g, std::size_t self) {
        const T dy = g.upstream(self)[0];
        const auto& x = g.value(ia);
        auto& dx = g.grad_slot(ia);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T{2} * x[i] * dy;
    });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t m = logits.shape()[0], n = logits.shape()[1];
    if (labels.size() != m) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) + " rows");
    }
    const auto& z = logits.value();
    Tensor<T> probs(Shape{m, n});
    T total{0};
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= n) throw ShapeError("cross_entropy: label out of range");
        const T* row = z.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isnan(row[j])) throw NumericError("cross_entropy: NaN logit");
        }
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[labels[i]];
        softmax_row(row, probs.data().data() + i * n, n);
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    const std::size_t il = logits.id();
    return logits.graph().record(
        "cross_entropy", Tensor<T>::scalar(total / static_cast<T>(m)), {il},
        [il, lab = std::move(lab), probs = std::move(probs), m, n](Graph<T>& g, std::size_t self) {
            const T dy = g.upstream(self)[0] / static_cast<T>(m);
            auto& dz = g.grad_slot(il);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    dz[i * n + j] += dy * (probs[i * n + j] - (j == lab[i] ? T{1} : T{0}));
        });
}

namespace {

// Rows are (channel, ki, kj); one image occupies hw consecutive columns of a row with stride ld.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* cols, std::size_t ld) {
    const long pad = static_cast<long>(k / 2);
    const long lh = static_cast<long>(h), lw = static_cast<long>(w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                T* dst = cols + ((ch * k + ki) * k + kj) * ld;
                const long ox = static_cast<long>(kj) - pad;
                const long x0 = std::max(0L, -ox), x1 = std::min(lw, lw - ox);
                for (long y = 0; y < lh; ++y) {
                    T* row = dst + y * lw;
                    const long sy = y + static_cast<long>(ki) - pad;
                    if (sy < 0 || sy >= lh || x0 >= x1) {
                        std::fill(row, row + lw, T{0});
                        continue;
                    }
                    const T* src = x + (static_cast<long>(ch) * lh + sy) * lw + ox;
                    std::fill(row, row + x0, T{0});
                    std::copy(src + x0, src + x1, row + x0);
                    std::fill(row + x1, row + lw, T{0});
                }
            }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* dx, std::size_t ld) {
    const long pad = static_cast<long>(k / 2);
    const long lh = static_cast<long>(h), lw = static_cast<long>(w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const T* src = cols + ((ch * k + ki) * k + kj) * ld;
                const long ox = static_cast<long>(kj) - pad;
                const long x0 = std::max(0L, -ox), x1 = std::min(lw, lw - ox);
                for (long y = 0; y < lh; ++y) {
                    const long sy = y + static_cast<long>(ki) - pad;
                    if (sy < 0 || sy >= lh) continue;
                    T* d = dx + (static_cast<long>(ch) * lh + sy) * lw + ox;
                    const T* r = src + y * lw;
                    for (long xx = x0; xx < x1; ++xx) d[xx] += r[xx];
                }
            }
}

// Images per GEMM so that each product has at least ~1024 columns.
std::size_t conv_chunk(std::size_t hw, std::size_t b) { return std::min(b, std::max<std::size_t>(1, 1024 / hw)); }

}  // namespace

template <typename T>
Var<T> conv2d_same(const Var<T>& x, const Var<T>& w) {
    require_same_graph(x, w, "conv2d_same");
    require_rank(x, 4, "conv2d_same");
    require_rank(w, 4, "conv2d_same");
    const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const std::size_t o = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != c || w.shape()[3] != k || k % 2 == 0) {
        throw ShapeError("conv2d_same: kernel " + to_string(w.shape()) + " incompatible with input " + to_string(x.shape()));
    }
    const std::size_t hw = h * wd, ck = c * k * k, chunk = conv_chunk(hw, b);
    Tensor<T> out(Shape{b, o, h, wd});
    std::vector<T> cols(ck * chunk * hw);
    RowMat<T> prod;
    auto wm = as_matrix(w.value(), o, ck);
    const T* xv = x.value().data().data();
    for (std::size_t i0 = 0; i0 < b; i0 += chunk) {
        const std::size_t nb = std::min(chunk, b - i0), ld = nb * hw;
        for (std::size_t j = 0; j < nb; ++j) im2col(xv + (i0 + j) * c * hw, c, h, wd, k, cols.data() + j * hw, ld);
        prod.noalias() = wm * CMatMap<T>(cols.data(), ck, ld);
        for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t oc = 0; oc < o; ++oc) {
                const T* src = prod.data() + oc * ld + j * hw;
                std::copy(src, src + hw, out.data().data() + ((i0 + j) * o + oc) * hw);
            }
    }
    const std::size_t ix = x.id(), iw = w.id();
    return x.graph().record("conv2d", std::move(out), {ix, iw}, [=](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        const T* xv = g.value(ix).data().data();
        const bool need_dx = g.requires_grad(ix), need_dw = g.requires_grad(iw);
        T* dx = need_dx ? g.grad_slot(ix).data().data() : nullptr;
        std::vector<T> buf(ck * chunk * hw);
        RowMat<T> dyc, dcols;
        for (std::size_t i0 = 0; i0 < b; i0 += chunk) {
            const std::size_t nb = std::min(chunk, b - i0), ld = nb * hw;
            dyc.resize(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ld));
            for (std::size_t j = 0; j < nb; ++j)
                for (std::size_t oc = 0; oc < o; ++oc) {
                    const T* src = dy.data().data() + ((i0 + j) * o + oc) * hw;
                    std::copy(src, src + hw, dyc.data() + oc * ld + j * hw);
                }
            if (need_dw) {
                for (std::size_t j = 0; j < nb; ++j) im2col(xv + (i0 + j) * c * hw, c, h, wd, k, buf.data() + j * hw, ld);
                as_matrix(g.grad_slot(iw), o, ck).noalias() += dyc * CMatMap<T>(buf.data(), ck, ld).transpose();
            }
            if (need_dx) {
                dcols.noalias() = as_matrix(g.value(iw), o, ck).transpose() * dyc;
                for (std::size_t j = 0; j < nb; ++j) col2im_add(dcols.data() + j * hw, c, h, wd, k, dx + (i0 + j) * c * hw, ld);
            }
        }
    });
}

template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
    require_rank(x, 4, "maxpool2x2");
    const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw ShapeError("maxpool2x2: input too small " + to_string(x.shape()));
    Tensor<T> out(Shape{b, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const auto& in = x.value();
    std::size_t idx = 0;
    for (std::size_t p = 0; p < b * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx, ++idx) {
                std::size_t best = base + (2 * y) * w + 2 * xx;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t cand = base + (2 * y + dy) * w + 2 * xx + dx;
                        if (in[cand] > in[best]) best = cand;
                    }
                out[idx] = in[best];
                (*argmax)[idx] = static_cast<std::uint32_t>(best);
            }
    }
    const std::size_t ix = x.id();
    return x.graph().record("maxpool2x2", std::move(out), {ix}, [ix, argmax](Graph<T>& g, std::size_t self) {
        const auto& dy = g.upstream(self);
        auto& dx = g.grad_slot(ix);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[(*argmax)[i]] += dy[i];
    });
}

namespace {

// Eight independent partial sums: fixed order, so still deterministic, but not latency-bound.
template <typename T, typename F>
double lane_sum(const T* p, std::size_t n, F f) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += f(static_cast<double>(p[i + l]), i + l);
    for (; i < n; ++i) acc[i % 8] += f(static_cast<double>(p[i]), i);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state, Mode mode) {
    require_same_graph(x, gamma, "batch_norm");
    require_same_graph(x, beta, "batch_norm");
    require_rank(x, 4, "batch_norm");
    const std::size_t b = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} || state.running_mean.shape() != Shape{c}) {
        throw ShapeError("batch_norm: per-channel tensors must have shape [" + std::to_string(c) + "]");
    }
    const std::size_t count = b * hw;
    const T* in = x.value().data().data();
    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    auto invstd = std::make_shared<std::vector<T>>(c);
    Tensor<T> out(x.shape());
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (std::size_t ch = 0; ch < c; ++ch) {
        T mu, var;
        if (mode == Mode::train) {
            double s = 0, ss = 0;
            for (std::size_t i = 0; i < b; ++i) s += lane_sum(in + (i * c + ch) * hw, hw, [](double v, std::size_t) { return v; });
            const double m = s / static_cast<double>(count);
            for (std::size_t i = 0; i < b; ++i) {
                ss += lane_sum(in + (i * c + ch) * hw, hw, [m](double v, std::size_t) { return (v - m) * (v - m); });
            }
            mu = static_cast<T>(m);
            var = static_cast<T>(ss / static_cast<double>(count));
            const T unbiased = count > 1 ? static_cast<T>(ss / static_cast<double>(count - 1)) : var;
            state.running_mean[ch] = (T{1} - state.momentum) * state.running_mean[ch] + state.momentum * mu;
            state.running_var[ch] = (T{1} - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        } else {
            mu = state.running_mean[ch];
            var = state.running_var[ch];
        }
        const T is = T{1} / std::sqrt(var + state.eps);
        (*invstd)[ch] = is;
        const T gm = gv[ch], bt = bv[ch];
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t base = (i * c + ch) * hw;
            T* xh = xhat->data().data() + base;
            T* o = out.data().data() + base;
            for (std::size_t j = 0; j < hw; ++j) {
                xh[j] = (in[base + j] - mu) * is;
                o[j] = gm * xh[j] + bt;
            }
        }
    }
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.graph().record("batch_norm", std::move(out), {ix, ig, ib}, [=](Graph<T>& g, std::size_t self) {
        const T* dy = g.upstream(self).data().data();
        const T* xh = xhat->data().data();
        const auto& gm = g.value(ig);
        const bool need_x = g.requires_grad(ix);
        T* dx = need_x ? g.grad_slot(ix).data().data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
            double sdy = 0, sdyx = 0;
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t base = (i * c + ch) * hw;
                sdy += lane_sum(dy + base, hw, [](double v, std::size_t) { return v; });
                sdyx += lane_sum(dy + base, hw, [p = xh + base](double v, std::size_t j) { return v * p[j]; });
            }
            const T sum_dy = static_cast<T>(sdy), sum_dy_xhat = static_cast<T>(sdyx);
            if (g.requires_grad(ig)) g.grad_slot(ig)[ch] += sum_dy_xhat;
            if (g.requires_grad(ib)) g.grad_slot(ib)[ch] += sum_dy;
            if (!need_x) continue;
            const T scale_ch = gm[ch] * (*invstd)[ch];
            const T n = static_cast<T>(count);
            const T mdy = sum_dy / n, mdyx = sum_dy_xhat / n;
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t base = (i * c + ch) * hw;
                if (mode == Mode::train) {
                    for (std::size_t j = 0; j < hw; ++j) dx[base + j] += scale_ch * (dy[base + j] - mdy - xh[base + j] * mdyx);
                } else {
                    for (std::size_t j = 0; j < hw; ++j) dx[base + j] += scale_ch * dy[base + j];
                }
            }
        }
    });
}

#define HFCR_INSTANTIATE_OPS(T)                                                                        \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                              \
    template Var<T> transpose(const Var<T>&);                                                          \
    template Var<T> reshape(const Var<T>&, Shape);                                                     \
    template Var<T> concat(std::span<const Var<T>>, std::size_t);                                      \
    template Var<T> slice(const Var<T>&, std::size_t, std::size_t);                                    \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> scale(const Var<T>&, T);                                                           \
    template Var<T> add_rowvec(const Var<T>&, const Var<T>&);                                          \
    template Var<T> relu(const Var<T>&);                                                               \
    template Var<T> exp(const Var<T>&);                                                                \
    template Var<T> softmax_lastdim(const Var<T>&);                                                    \
    template Var<T> mean(const Var<T>&);                                                               \
    template Var<T> sum_squares(const Var<T>&);                                                        \
    template Var<T> cross_entropy(const Var<T>&, std::span<const std::size_t>);                        \
    template Var<T> conv2d_same(const Var<T>&, const Var<T>&);                                         \
    template Var<T> maxpool2x2(const Var<T>&);                                                         \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, Mode); \
    template std::vector<T> softmax_values(std::span<const T>);

HFCR_INSTANTIATE_OPS(float)
HFCR_INSTANTIATE_OPS(double)

}  // namespace hfcr
