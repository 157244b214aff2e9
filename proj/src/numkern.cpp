#include "fastvar/numkern.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fastvar {

namespace {

void require_finite(const std::vector<Real>& data, const char* what) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw ArgumentError(std::string(what) + ": non-finite value at element " + std::to_string(i));
        }
    }
}

// Linear blend that returns `a` exactly when a == b or f == 0.
inline Real lerp(Real a, Real b, Real f) noexcept {
    return f == Real(0) ? a : a + f * (b - a);
}

struct Tap {
    std::size_t lo;
    std::size_t hi;
    Real frac;
};

std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst) {
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i) {
        double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, src - 1);
        taps[i] = {lo, hi, static_cast<Real>(pos - static_cast<double>(lo))};
    }
    return taps;
}

std::vector<std::size_t> nearest_taps(std::size_t src, std::size_t dst) {
    std::vector<std::size_t> taps(dst);
    for (std::size_t i = 0; i < dst; ++i) {
        // floor((i + 0.5) * src / dst) in exact integer arithmetic
        taps[i] = std::min((2 * i + 1) * src / (2 * dst), src - 1);
    }
    return taps;
}

}  // namespace

const char* to_string(ResizeMode mode) noexcept {
    return mode == ResizeMode::Nearest ? "nearest" : "bilinear";
}

ResizeMode parse_resize_mode(const std::string& name) {
    if (name == "nearest") return ResizeMode::Nearest;
    if (name == "bilinear") return ResizeMode::Bilinear;
    throw ArgumentError("unknown resize mode '" + name + "' (expected nearest|bilinear)");
}

// ---------------------------------------------------------------- TokenMap

TokenMap::TokenMap(std::size_t h, std::size_t w, std::size_t d) : TokenMap(h, w, d, std::vector<Real>(h * w * d)) {}

TokenMap::TokenMap(std::size_t h, std::size_t w, std::size_t d, std::vector<Real> data)
    : h_(h), w_(w), d_(d), data_(std::move(data)) {
    if (h == 0 || w == 0 || d == 0) {
        throw ArgumentError("TokenMap dimensions must be >= 1, got (" + std::to_string(h) + ", " +
                            std::to_string(w) + ", " + std::to_string(d) + ")");
    }
    if (data_.size() != h * w * d) {
        throw ArgumentError("TokenMap data length " + std::to_string(data_.size()) + " != h*w*d = " +
                            std::to_string(h * w * d));
    }
    require_finite(data_, "TokenMap");
}

TokenMap TokenMap::filled(std::size_t h, std::size_t w, std::size_t d, Real value) {
    return TokenMap(h, w, d, std::vector<Real>(h * w * d, value));
}

TokenMap TokenMap::reshaped(std::size_t h, std::size_t w) const {
    if (h * w != tokens()) {
        throw ShapeError("reshape to " + std::to_string(h) + "x" + std::to_string(w) + " changes token count " +
                         std::to_string(tokens()));
    }
    TokenMap out = *this;
    out.h_ = h;
    out.w_ = w;
    return out;
}

TokenMap& TokenMap::operator+=(const TokenMap& other) {
    if (other.h_ != h_ || other.w_ != w_ || other.d_ != d_) throw ShapeError("TokenMap add: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

TokenMap operator+(TokenMap a, const TokenMap& b) {
    a += b;
    return a;
}

TokenMap operator-(const TokenMap& a, const TokenMap& b) {
    if (a.h() != b.h() || a.w() != b.w() || a.d() != b.d()) throw ShapeError("TokenMap subtract: shape mismatch");
    TokenMap out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

// -------------------------------------------------------------- FlatMatrix

FlatMatrix::FlatMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

FlatMatrix::FlatMatrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ArgumentError("FlatMatrix data length " + std::to_string(data_.size()) + " != rows*cols = " +
                            std::to_string(rows * cols));
    }
    require_finite(data_, "FlatMatrix");
}

FlatMatrix FlatMatrix::transposed() const {
    FlatMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
}

FlatMatrix as_matrix(const TokenMap& x) { return FlatMatrix(x.tokens(), x.d(), x.data()); }

TokenMap as_token_map(FlatMatrix m, std::size_t h, std::size_t w) {
    if (m.rows() != h * w) throw ShapeError("matrix rows do not match token count");
    const std::size_t d = m.cols();
    return TokenMap(h, w, d, std::move(m.data()));
}

// --------------------------------------------------------------- IndexList

IndexList::IndexList(std::vector<std::size_t> indices, std::size_t capacity)
    : indices_(std::move(indices)), capacity_(capacity) {
    for (std::size_t j = 0; j < indices_.size(); ++j) {
        if (indices_[j] >= capacity_) {
            throw ArgumentError("index " + std::to_string(indices_[j]) + " out of range for capacity " +
                                std::to_string(capacity_));
        }
        if (j > 0 && indices_[j] <= indices_[j - 1]) {
            throw ArgumentError("IndexList must be strictly increasing");
        }
    }
}

IndexList IndexList::all(std::size_t capacity) {
    std::vector<std::size_t> idx(capacity);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return IndexList(std::move(idx), capacity);
}

// ------------------------------------------------------------- operations

FlatMatrix matmul(const FlatMatrix& a, const FlatMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    const std::size_t n = b.cols();
    FlatMatrix c(a.rows(), n);
    // i-k-j order, four rows of c per pass over b. Every c(i, j) still
    // accumulates over k in increasing order.
    std::size_t i = 0;
    for (; i + 4 <= a.rows(); i += 4) {
        Real* c0 = c.row(i).data();
        Real* c1 = c.row(i + 1).data();
        Real* c2 = c.row(i + 2).data();
        Real* c3 = c.row(i + 3).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const Real a0 = a(i, k);
            const Real a1 = a(i + 1, k);
            const Real a2 = a(i + 2, k);
            const Real a3 = a(i + 3, k);
            const Real* brow = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) {
                const Real bkj = brow[j];
                c0[j] += a0 * bkj;
                c1[j] += a1 * bkj;
                c2[j] += a2 * bkj;
                c3[j] += a3 * bkj;
            }
        }
    }
    for (; i < a.rows(); ++i) {
        Real* crow = c.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const Real aik = a(i, k);
            const Real* brow = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

FlatMatrix softmax_rows(FlatMatrix m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        if (row.empty()) continue;
        const Real peak = *std::max_element(row.begin(), row.end());
        Real total = 0;
        for (Real& v : row) {
            v = std::exp(v - peak);
            total += v;
        }
        for (Real& v : row) v /= total;
    }
    return m;
}

TokenMap resize(const TokenMap& x, Extent target, ResizeMode mode) {
    if (target.h == 0 || target.w == 0) throw ArgumentError("resize: target dimensions must be >= 1");
    if (target == x.extent()) return x;

    const std::size_t d = x.d();
    TokenMap out(target.h, target.w, d);

    if (mode == ResizeMode::Nearest) {
        const auto rows = nearest_taps(x.h(), target.h);
        const auto cols = nearest_taps(x.w(), target.w);
        for (std::size_t i = 0; i < target.h; ++i) {
            for (std::size_t j = 0; j < target.w; ++j) {
                const auto src = x.token(rows[i] * x.w() + cols[j]);
                std::copy(src.begin(), src.end(), out.token(i * target.w + j).begin());
            }
        }
        return out;
    }

    const auto rows = bilinear_taps(x.h(), target.h);
    const auto cols = bilinear_taps(x.w(), target.w);
    for (std::size_t i = 0; i < target.h; ++i) {
        const Tap& ty = rows[i];
        for (std::size_t j = 0; j < target.w; ++j) {
            const Tap& tx = cols[j];
            const auto p00 = x.token(ty.lo * x.w() + tx.lo);
            const auto p01 = x.token(ty.lo * x.w() + tx.hi);
            const auto p10 = x.token(ty.hi * x.w() + tx.lo);
            const auto p11 = x.token(ty.hi * x.w() + tx.hi);
            auto dst = out.token(i * target.w + j);
            for (std::size_t c = 0; c < d; ++c) {
                const Real top = lerp(p00[c], p01[c], tx.frac);
                const Real bottom = lerp(p10[c], p11[c], tx.frac);
                dst[c] = lerp(top, bottom, ty.frac);
            }
        }
    }
    return out;
}

std::vector<Real> global_avg_pool(const TokenMap& x) {
    std::vector<Real> mean(x.d(), Real(0));
    for (std::size_t t = 0; t < x.tokens(); ++t) {
        const auto tok = x.token(t);
        for (std::size_t c = 0; c < x.d(); ++c) mean[c] += tok[c];
    }
    const auto count = static_cast<Real>(x.tokens());
    for (Real& m : mean) m /= count;
    return mean;
}

IndexList topk_indices(std::span<const Real> scores, std::size_t k) {
    const std::size_t total = scores.size();
    if (k > total) {
        throw ArgumentError("topk: k = " + std::to_string(k) + " exceeds score count " + std::to_string(total));
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    if (k < total) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    }
    order.resize(k);
    std::sort(order.begin(), order.end());
    return IndexList(std::move(order), total);
}

TokenMap gather_rows(const TokenMap& x, const IndexList& indices) {
    if (indices.capacity() != x.tokens()) {
        throw ArgumentError("gather_rows: index capacity " + std::to_string(indices.capacity()) +
                            " != token count " + std::to_string(x.tokens()));
    }
    if (indices.empty()) throw ArgumentError("gather_rows: empty index list");
    const std::size_t d = x.d();
    std::vector<Real> data(indices.size() * d);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const auto src = x.token(indices[j]);
        std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
    return TokenMap(1, indices.size(), d, std::move(data));
}

TokenMap scatter_rows(const TokenMap& base, const IndexList& indices, const TokenMap& src) {
    if (indices.capacity() != base.tokens()) {
        throw ArgumentError("scatter_rows: index capacity " + std::to_string(indices.capacity()) +
                            " != base token count " + std::to_string(base.tokens()));
    }
    if (indices.empty()) return base;
    if (src.tokens() != indices.size()) {
        throw ArgumentError("scatter_rows: source has " + std::to_string(src.tokens()) + " tokens for " +
                            std::to_string(indices.size()) + " indices");
    }
    if (src.d() != base.d()) throw ArgumentError("scatter_rows: channel dimension mismatch");
    TokenMap out = base;
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const auto from = src.token(j);
        std::copy(from.begin(), from.end(), out.token(indices[j]).begin());
    }
    return out;
}

}  // namespace fastvar
