// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace vtw {

/// Dense row-major matrix of 32-bit floats.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    /// Appends one row; `values.size()` must equal cols() (or define it when empty).
    void append_row(std::span<const float> values);

    /// Keeps only the rows whose index is listed, in the listed order.
    Matrix select_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// Which matmul family a multiply-accumulate belongs to.
enum class MacTerm : std::uint8_t {
    Projection,      // Q, K, V and output projections
    AttentionScore,  // Q K^T
    AttentionValue,  // A V
    FeedForward,     // gated FFN matmuls
    LmHead,
    VisionProjector,
    TokenEmbedding,
    Other,
};

inline constexpr std::size_t kMacTermCount = 8;

std::string_view mac_term_name(MacTerm term);

/// Multiply-accumulate counter. Totals only grow until reset().
class OpCounter {
public:
    void add(MacTerm term, std::uint64_t macs) {
        by_term_[static_cast<std::size_t>(term)] += macs;
        mac_count_ += macs;
    }
    std::uint64_t mac_count() const { return mac_count_; }
    std::uint64_t macs(MacTerm term) const { return by_term_[static_cast<std::size_t>(term)]; }
    void reset() {
        mac_count_ = 0;
        by_term_.fill(0);
    }

private:
    std::uint64_t mac_count_ = 0;
    std::array<std::uint64_t, kMacTermCount> by_term_{};
};

/// a * b. Adds a.rows * a.cols * b.cols MACs to `counter` under `term`.
/// Accumulates in double with k ascending. Throws ShapeError on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr,
              MacTerm term = MacTerm::Other);

/// Max-subtracted softmax. -inf entries map to exactly 0.
/// Throws DegenerateRowError when every entry is -inf, ValidationError when empty or NaN/+inf.
std::vector<float> softmax_row(std::span<const float> logits);

/// v / sqrt(mean(v^2) + epsilon) * gain. A zero denominator yields zeros.
std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, float epsilon);

/// Probability floor applied to q before the log.
inline constexpr double kKlProbabilityFloor = 1e-12;

/// sum p ln(p / max(q, floor)), with 0 ln 0 = 0. Both inputs must sum to 1 within 1e-5.
double kl_divergence(std::span<const float> p, std::span<const float> q);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const float> values);

}  // namespace vtw
