#pragma once

// Dense float32 kernels shared by every other module. All reductions run in
// a fixed left-to-right order so results are reproducible bit for bit.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fastvar/errors.hpp"

namespace fastvar {

using Real = float;

struct Extent {
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t area() const noexcept { return h * w; }
    friend bool operator==(const Extent&, const Extent&) = default;
};

enum class ResizeMode { Nearest, Bilinear };

const char* to_string(ResizeMode mode) noexcept;
ResizeMode parse_resize_mode(const std::string& name);

/// An (h, w, d) grid of tokens. Token t = row * w + col; channels of one
/// token are contiguous.
class TokenMap {
public:
    TokenMap() = default;
    /// Zero-filled map.
    TokenMap(std::size_t h, std::size_t w, std::size_t d);
    /// Takes ownership of `data`; rejects wrong length or non-finite values.
    TokenMap(std::size_t h, std::size_t w, std::size_t d, std::vector<Real> data);

    static TokenMap filled(std::size_t h, std::size_t w, std::size_t d, Real value);

    std::size_t h() const noexcept { return h_; }
    std::size_t w() const noexcept { return w_; }
    std::size_t d() const noexcept { return d_; }
    Extent extent() const noexcept { return {h_, w_}; }
    std::size_t tokens() const noexcept { return h_ * w_; }

    std::span<Real> token(std::size_t t) noexcept { return {data_.data() + t * d_, d_}; }
    std::span<const Real> token(std::size_t t) const noexcept { return {data_.data() + t * d_, d_}; }

    Real& at(std::size_t row, std::size_t col, std::size_t c) noexcept { return data_[(row * w_ + col) * d_ + c]; }
    Real at(std::size_t row, std::size_t col, std::size_t c) const noexcept {
        return data_[(row * w_ + col) * d_ + c];
    }

    std::vector<Real>& data() noexcept { return data_; }
    const std::vector<Real>& data() const noexcept { return data_; }

    /// Same data viewed with a new spatial shape of equal token count.
    TokenMap reshaped(std::size_t h, std::size_t w) const;

    TokenMap& operator+=(const TokenMap& other);
    friend bool operator==(const TokenMap&, const TokenMap&) = default;

private:
    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::size_t d_ = 0;
    std::vector<Real> data_;
};

TokenMap operator+(TokenMap a, const TokenMap& b);
TokenMap operator-(const TokenMap& a, const TokenMap& b);

class FlatMatrix {
public:
    FlatMatrix() = default;
    FlatMatrix(std::size_t rows, std::size_t cols);
    FlatMatrix(std::size_t rows, std::size_t cols, std::vector<Real> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const Real> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<Real>& data() noexcept { return data_; }
    const std::vector<Real>& data() const noexcept { return data_; }

    FlatMatrix transposed() const;

    friend bool operator==(const FlatMatrix&, const FlatMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

/// Token rows of a map as a (tokens x d) matrix, and back.
FlatMatrix as_matrix(const TokenMap& x);
TokenMap as_token_map(FlatMatrix m, std::size_t h, std::size_t w);

/// Strictly increasing token indices into a map of `capacity` tokens.
class IndexList {
public:
    IndexList() = default;
    IndexList(std::vector<std::size_t> indices, std::size_t capacity);

    static IndexList all(std::size_t capacity);

    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t operator[](std::size_t j) const noexcept { return indices_[j]; }
    const std::vector<std::size_t>& indices() const noexcept { return indices_; }

    auto begin() const noexcept { return indices_.begin(); }
    auto end() const noexcept { return indices_.end(); }

    friend bool operator==(const IndexList&, const IndexList&) = default;

private:
    std::vector<std::size_t> indices_;
    std::size_t capacity_ = 0;
};

FlatMatrix matmul(const FlatMatrix& a, const FlatMatrix& b);

/// Row-wise softmax with max subtraction.
FlatMatrix softmax_rows(FlatMatrix m);

/// Nearest: src = floor((i + 0.5) * src_len / dst_len).
/// Bilinear: half-pixel centres, edges clamped.
TokenMap resize(const TokenMap& x, Extent target, ResizeMode mode);

std::vector<Real> global_avg_pool(const TokenMap& x);

/// Indices of the k largest scores, ties to the smaller index, returned in
/// increasing index order.
IndexList topk_indices(std::span<const Real> scores, std::size_t k);

/// Output shape is (1, |indices|, d).
TokenMap gather_rows(const TokenMap& x, const IndexList& indices);

/// An empty index list returns `base` and ignores `src`.
TokenMap scatter_rows(const TokenMap& base, const IndexList& indices, const TokenMap& src);

}  // namespace fastvar
