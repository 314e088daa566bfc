// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtw/model.hpp"
#include "vtw/numerics.hpp"
#include "vtw/segment.hpp"

namespace vtw {

// ---------------------------------------------------------------------------
// Attention-share profiling

/// Attention mass per segment type, indexed by segment_index().
using SegmentShares = std::array<double, kSegmentCount>;

/// Mean over heads of the captured last row, summed per segment tag.
/// Throws ValidationError when a head row and the tag list differ in length.
SegmentShares beta_shares(const AttentionCapture& capture);

struct ProfileEntry {
    std::size_t layer = 0;  // 1-based
    std::size_t step = 0;   // 0 = prediction of the first output token
    SegmentShares beta{};
};

/// Shares per (layer, output step).
class AttentionProfile {
public:
    /// Adds one entry per captured layer for output step `step`.
    void add_step(std::size_t step, std::span<const AttentionCapture> captures);

    const std::vector<ProfileEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

    /// Appends another profile's entries (e.g. another prompt); steps and layers are kept.
    void merge(const AttentionProfile& other);

private:
    std::vector<ProfileEntry> entries_;
};

/// One profile entry per (step, layer) in `steps[step]`.
AttentionProfile aggregate_attention(std::span<const std::vector<AttentionCapture>> steps);

/// Per-layer shares averaged uniformly over every entry of that layer.
std::vector<std::pair<std::size_t, SegmentShares>> layer_shares(const AttentionProfile& profile);
/// Per-step shares averaged uniformly over every entry of that step.
std::vector<std::pair<std::size_t, SegmentShares>> output_shares(const AttentionProfile& profile);

/// CSV "layer,system,vision,instruction,output". Throws ValidationError on an empty profile.
std::string layer_attention_table(const AttentionProfile& profile);
/// CSV "step,system,vision,instruction,output". Throws ValidationError on an empty profile.
std::string output_attention_table(const AttentionProfile& profile);

// ---------------------------------------------------------------------------
// Cost model
//
// The per-layer formula 2*s^2*h + 12*s*h^2 counts one unit per multiply-accumulate of
// the modeled matmuls: Q K^T (s^2 h), A V (s^2 h), the four h x h projections (4 s h^2)
// and a two-matmul FFN of width 4h (8 s h^2). Hardware FLOPs are twice that.

/// 2 s^2 h + (4 + 2 ffn_factor) s h^2; equals 2 s^2 h + 12 s h^2 at ffn_factor 4.
std::uint64_t flops_per_layer(std::uint64_t s, std::uint64_t h, std::uint64_t ffn_factor = 4);

/// MACs per modeled matmul family.
struct MacTerms {
    std::uint64_t projection = 0;
    std::uint64_t attention_score = 0;
    std::uint64_t attention_value = 0;
    std::uint64_t feed_forward = 0;

    std::uint64_t total() const {
        return projection + attention_score + attention_value + feed_forward;
    }
    MacTerms& operator+=(const MacTerms& o);
    friend bool operator==(const MacTerms&, const MacTerms&) = default;
};

inline constexpr std::uint64_t kPlainFfnMatmuls = 2;
inline constexpr std::uint64_t kGatedFfnMatmuls = 3;

/// One layer's prefill MACs over `s` tokens, FFN with `ffn_matmuls` matmuls of width ffn_factor*h.
MacTerms layer_macs(std::uint64_t s, std::uint64_t h, std::uint64_t ffn_factor,
                    std::uint64_t ffn_matmuls);

/// Prefill MACs over a stack withdrawing `n_vis` tokens at layer k (k = N+1: never).
MacTerms stack_macs(const ModelConfig& config, std::uint64_t s_full, std::uint64_t n_vis,
                    std::size_t k, std::uint64_t ffn_matmuls);

/// Reads the modeled families out of an instrumented counter.
MacTerms measured_terms(const OpCounter& counter);

struct CostReport {
    std::uint64_t analytical_flops_baseline = 0;
    std::uint64_t analytical_flops_vtw = 0;
    std::optional<std::uint64_t> measured_macs_baseline;
    std::optional<std::uint64_t> measured_macs_vtw;
    double ratio_vtw_over_baseline = 1.0;
    std::uint64_t cache_rows_baseline = 0;
    std::uint64_t cache_rows_vtw = 0;
    std::uint64_t s_full = 0;
    std::uint64_t n_vis = 0;
    std::size_t k = 0;
    std::size_t num_layers = 0;
    std::uint64_t hidden_size = 0;
    std::uint64_t ffn_factor = 0;
};

/// Analytical split cost: (k-1) layers at s_full, N-k+1 layers at s_full - n_vis.
/// `measured` counters, when given, contribute their modeled-matmul MAC totals.
CostReport vtw_cost_report(const ModelConfig& config, std::uint64_t s_full, std::uint64_t n_vis,
                           std::size_t k, const OpCounter* measured_baseline = nullptr,
                           const OpCounter* measured_vtw = nullptr);

struct TermComparison {
    std::string run;   // "baseline" or "vtw"
    std::string term;  // MacTerm name, or "plain_ffn_total"
    std::uint64_t measured = 0;
    std::uint64_t analytical = 0;
    bool modeled = true;  // false for informational rows that do not gate PASS
};

struct DiscrepancySummary {
    std::vector<TermComparison> rows;
    bool pass = false;
};

/// Compares instrumented prefill counters against the per-term model for the gated FFN
/// runtime. PASS when every modeled term matches exactly. Also reports the plain two-matmul
/// FFN formula next to the measured totals, labeled as informational.
DiscrepancySummary measured_vs_analytical(const OpCounter& baseline, const OpCounter& vtw,
                                          const CostReport& report);

nlohmann::ordered_json cost_report_json(const CostReport& report,
                                        const DiscrepancySummary* summary = nullptr);
std::string discrepancy_csv(const DiscrepancySummary& summary);

}  // namespace vtw
