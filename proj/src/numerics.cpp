// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vtw/errors.hpp"

namespace vtw {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

void Matrix::append_row(std::span<const float> values) {
    if (rows_ == 0 && cols_ == 0) {
        cols_ = values.size();
    }
    if (values.size() != cols_) {
        throw ShapeError("append_row: row width " + std::to_string(values.size()) + " != " +
                         std::to_string(cols_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(0, cols_);
    out.data_.reserve(indices.size() * cols_);
    for (std::size_t idx : indices) {
        if (idx >= rows_) {
            throw RangeError("select_rows: row " + std::to_string(idx) + " out of range");
        }
        out.append_row(row(idx));
    }
    return out;
}

std::string_view mac_term_name(MacTerm term) {
    switch (term) {
        case MacTerm::Projection: return "qkvo_projection";
        case MacTerm::AttentionScore: return "attention_score";
        case MacTerm::AttentionValue: return "attention_value";
        case MacTerm::FeedForward: return "feed_forward";
        case MacTerm::LmHead: return "lm_head";
        case MacTerm::VisionProjector: return "vision_projector";
        case MacTerm::TokenEmbedding: return "token_embedding";
        case MacTerm::Other: return "other";
    }
    return "unknown";
}

Matrix matmul(const Matrix& a, const Matrix& b, OpCounter* counter, MacTerm term) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    const std::size_t n = a.rows();
    const std::size_t inner = a.cols();
    const std::size_t m = b.cols();
    Matrix out(n, m);
    std::vector<double> acc(m);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const auto a_row = a.row(i);
        for (std::size_t k = 0; k < inner; ++k) {
            const double a_ik = a_row[k];
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < m; ++j) {
                acc[j] += a_ik * static_cast<double>(b_row[j]);
            }
        }
        auto out_row = out.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            out_row[j] = static_cast<float>(acc[j]);
        }
    }
    if (counter != nullptr) {
        counter->add(term, static_cast<std::uint64_t>(n) * inner * m);
    }
    return out;
}

std::vector<float> softmax_row(std::span<const float> logits) {
    if (logits.empty()) {
        throw ValidationError("softmax_row: empty input");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (float x : logits) {
        if (std::isnan(x) || x == std::numeric_limits<float>::infinity()) {
            throw ValidationError("softmax_row: NaN or +inf logit");
        }
        max_logit = std::max(max_logit, static_cast<double>(x));
    }
    if (std::isinf(max_logit)) {
        throw DegenerateRowError("softmax_row: every entry is -inf");
    }
    std::vector<double> exps(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        exps[i] = std::isinf(logits[i]) ? 0.0 : std::exp(static_cast<double>(logits[i]) - max_logit);
        sum += exps[i];
    }
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<float>(exps[i] / sum);
    }
    return out;
}

std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, float epsilon) {
    if (v.size() != gain.size()) {
        throw ShapeError("rms_norm: vector length " + std::to_string(v.size()) + " != gain length " +
                         std::to_string(gain.size()));
    }
    std::vector<float> out(v.size(), 0.0f);
    if (v.empty()) {
        return out;
    }
    double sum_sq = 0.0;
    for (float x : v) {
        sum_sq += static_cast<double>(x) * x;
    }
    const double denom = std::sqrt(sum_sq / static_cast<double>(v.size()) + epsilon);
    if (denom == 0.0) {
        return out;
    }
    const double inv = 1.0 / denom;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(v[i]) * inv * gain[i]);
    }
    return out;
}

namespace {

void check_distribution(std::span<const float> p, const char* name) {
    double sum = 0.0;
    for (float x : p) {
        if (!std::isfinite(x) || x < 0.0f) {
            throw ValidationError(std::string("kl_divergence: ") + name +
                                  " has a negative or non-finite entry");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-5) {
        throw ValidationError(std::string("kl_divergence: ") + name + " sums to " +
                              std::to_string(sum));
    }
}

}  // namespace

double kl_divergence(std::span<const float> p, std::span<const float> q) {
    if (p.size() != q.size()) {
        throw ValidationError("kl_divergence: length " + std::to_string(p.size()) +
                              " != " + std::to_string(q.size()));
    }
    check_distribution(p, "p");
    check_distribution(q, "q");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0f) {
            continue;
        }
        const double pi = p[i];
        const double qi = std::max(static_cast<double>(q[i]), kKlProbabilityFloor);
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

std::size_t argmax(std::span<const float> values) {
    if (values.empty()) {
        throw ValidationError("argmax: empty input");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace vtw
