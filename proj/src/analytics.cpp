// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/analytics.hpp"

#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vtw/errors.hpp"

namespace vtw {

SegmentShares beta_shares(const AttentionCapture& capture) {
    SegmentShares shares{};
    if (capture.last_row_per_head.empty()) {
        throw ValidationError("beta_shares: no heads captured");
    }
    for (const auto& row : capture.last_row_per_head) {
        if (row.size() != capture.segments.size()) {
            throw ValidationError("beta_shares: attention row length " + std::to_string(row.size()) +
                                  " != tag count " + std::to_string(capture.segments.size()));
        }
    }
    const double heads = static_cast<double>(capture.last_row_per_head.size());
    for (std::size_t j = 0; j < capture.segments.size(); ++j) {
        double mean = 0.0;
        for (const auto& row : capture.last_row_per_head) {
            mean += row[j];
        }
        shares[segment_index(capture.segments[j])] += mean / heads;
    }
    return shares;
}

void AttentionProfile::add_step(std::size_t step, std::span<const AttentionCapture> captures) {
    for (const auto& cap : captures) {
        entries_.push_back({cap.layer, step, beta_shares(cap)});
    }
}

void AttentionProfile::merge(const AttentionProfile& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

AttentionProfile aggregate_attention(std::span<const std::vector<AttentionCapture>> steps) {
    AttentionProfile profile;
    for (std::size_t t = 0; t < steps.size(); ++t) {
        profile.add_step(t, steps[t]);
    }
    return profile;
}

namespace {

template <typename KeyFn>
std::vector<std::pair<std::size_t, SegmentShares>> average_by(const AttentionProfile& profile,
                                                              KeyFn key) {
    std::map<std::size_t, std::pair<SegmentShares, std::size_t>> sums;
    for (const auto& e : profile.entries()) {
        auto& [acc, n] = sums[key(e)];
        for (std::size_t s = 0; s < kSegmentCount; ++s) {
            acc[s] += e.beta[s];
        }
        ++n;
    }
    std::vector<std::pair<std::size_t, SegmentShares>> out;
    for (auto& [k, v] : sums) {
        auto& [acc, n] = v;
        for (double& x : acc) {
            x /= static_cast<double>(n);
        }
        out.emplace_back(k, acc);
    }
    return out;
}

std::string shares_csv(const char* key_name,
                       const std::vector<std::pair<std::size_t, SegmentShares>>& rows) {
    std::string out = fmt::format("{},system,vision,instruction,output\n", key_name);
    for (const auto& [k, s] : rows) {
        out += fmt::format("{},{:.9f},{:.9f},{:.9f},{:.9f}\n", k, s[0], s[1], s[2], s[3]);
    }
    return out;
}

}  // namespace

std::vector<std::pair<std::size_t, SegmentShares>> layer_shares(const AttentionProfile& profile) {
    return average_by(profile, [](const ProfileEntry& e) { return e.layer; });
}

std::vector<std::pair<std::size_t, SegmentShares>> output_shares(const AttentionProfile& profile) {
    return average_by(profile, [](const ProfileEntry& e) { return e.step; });
}

std::string layer_attention_table(const AttentionProfile& profile) {
    if (profile.empty()) {
        throw ValidationError("layer_attention_table: empty profile");
    }
    return shares_csv("layer", layer_shares(profile));
}

std::string output_attention_table(const AttentionProfile& profile) {
    if (profile.empty()) {
        throw ValidationError("output_attention_table: empty profile");
    }
    return shares_csv("step", output_shares(profile));
}

std::uint64_t flops_per_layer(std::uint64_t s, std::uint64_t h, std::uint64_t ffn_factor) {
    return 2 * s * s * h + (4 + 2 * ffn_factor) * s * h * h;
}

MacTerms& MacTerms::operator+=(const MacTerms& o) {
    projection += o.projection;
    attention_score += o.attention_score;
    attention_value += o.attention_value;
    feed_forward += o.feed_forward;
    return *this;
}

MacTerms layer_macs(std::uint64_t s, std::uint64_t h, std::uint64_t ffn_factor,
                    std::uint64_t ffn_matmuls) {
    MacTerms t;
    t.projection = 4 * s * h * h;
    t.attention_score = s * s * h;
    t.attention_value = s * s * h;
    t.feed_forward = ffn_matmuls * ffn_factor * s * h * h;
    return t;
}

namespace {

void check_split(const ModelConfig& config, std::uint64_t s_full, std::uint64_t n_vis,
                 std::size_t k) {
    if (n_vis > s_full) {
        throw ValidationError("n_vis (" + std::to_string(n_vis) + ") > s_full (" +
                              std::to_string(s_full) + ")");
    }
    if (k < 1 || k > static_cast<std::size_t>(config.num_layers) + 1) {
        throw ValidationError("withdrawal layer " + std::to_string(k) + " outside [1, " +
                              std::to_string(config.num_layers + 1) + "]");
    }
}

}  // namespace

MacTerms stack_macs(const ModelConfig& config, std::uint64_t s_full, std::uint64_t n_vis,
                    std::size_t k, std::uint64_t ffn_matmuls) {
    check_split(config, s_full, n_vis, k);
    const std::uint64_t h = config.hidden_size;
    MacTerms total;
    for (std::size_t layer = 1; layer <= config.num_layers; ++layer) {
        const std::uint64_t s = layer < k ? s_full : s_full - n_vis;
        total += layer_macs(s, h, config.ffn_factor, ffn_matmuls);
    }
    return total;
}

MacTerms measured_terms(const OpCounter& counter) {
    MacTerms t;
    t.projection = counter.macs(MacTerm::Projection);
    t.attention_score = counter.macs(MacTerm::AttentionScore);
    t.attention_value = counter.macs(MacTerm::AttentionValue);
    t.feed_forward = counter.macs(MacTerm::FeedForward);
    return t;
}

CostReport vtw_cost_report(const ModelConfig& config, std::uint64_t s_full, std::uint64_t n_vis,
                           std::size_t k, const OpCounter* measured_baseline,
                           const OpCounter* measured_vtw) {
    check_split(config, s_full, n_vis, k);
    CostReport r;
    r.s_full = s_full;
    r.n_vis = n_vis;
    r.k = k;
    r.num_layers = config.num_layers;
    r.hidden_size = config.hidden_size;
    r.ffn_factor = config.ffn_factor;

    const std::uint64_t n = config.num_layers;
    const std::uint64_t full_layers = k - 1;
    const std::uint64_t text_layers = n - full_layers;
    const std::uint64_t s_text = s_full - n_vis;
    const std::uint64_t h = config.hidden_size;
    r.analytical_flops_baseline = n * flops_per_layer(s_full, h, config.ffn_factor);
    r.analytical_flops_vtw = full_layers * flops_per_layer(s_full, h, config.ffn_factor) +
                             text_layers * flops_per_layer(s_text, h, config.ffn_factor);
    r.ratio_vtw_over_baseline =
        r.analytical_flops_baseline == 0
            ? 1.0
            : static_cast<double>(r.analytical_flops_vtw) /
                  static_cast<double>(r.analytical_flops_baseline);
    r.cache_rows_baseline = n * s_full;
    r.cache_rows_vtw = full_layers * s_full + text_layers * s_text;
    if (measured_baseline != nullptr) {
        r.measured_macs_baseline = measured_terms(*measured_baseline).total();
    }
    if (measured_vtw != nullptr) {
        r.measured_macs_vtw = measured_terms(*measured_vtw).total();
    }
    return r;
}

DiscrepancySummary measured_vs_analytical(const OpCounter& baseline, const OpCounter& vtw,
                                          const CostReport& report) {
    ModelConfig config;
    config.num_layers = static_cast<std::uint32_t>(report.num_layers);
    config.hidden_size = static_cast<std::uint32_t>(report.hidden_size);
    config.ffn_factor = static_cast<std::uint32_t>(report.ffn_factor);

    DiscrepancySummary summary;
    summary.pass = true;
    auto compare = [&](const char* run, const OpCounter& counter, std::size_t k) {
        const MacTerms measured = measured_terms(counter);
        const MacTerms model = stack_macs(config, report.s_full, report.n_vis, k, kGatedFfnMatmuls);
        const std::pair<MacTerm, std::pair<std::uint64_t, std::uint64_t>> terms[] = {
            {MacTerm::Projection, {measured.projection, model.projection}},
            {MacTerm::AttentionScore, {measured.attention_score, model.attention_score}},
            {MacTerm::AttentionValue, {measured.attention_value, model.attention_value}},
            {MacTerm::FeedForward, {measured.feed_forward, model.feed_forward}},
        };
        for (const auto& [term, values] : terms) {
            summary.rows.push_back({run, std::string(mac_term_name(term)), values.first,
                                    values.second, true});
            summary.pass = summary.pass && values.first == values.second;
        }
        const MacTerms plain = stack_macs(config, report.s_full, report.n_vis, k, kPlainFfnMatmuls);
        summary.rows.push_back({run, "plain_ffn_total", measured.total(), plain.total(), false});
    };
    compare("baseline", baseline, report.num_layers + 1);
    compare("vtw", vtw, report.k);
    return summary;
}

nlohmann::ordered_json cost_report_json(const CostReport& report,
                                        const DiscrepancySummary* summary) {
    nlohmann::ordered_json j;
    j["token_counts"] = {{"s_full", report.s_full},         {"n_vis", report.n_vis},
                         {"k", report.k},                   {"num_layers", report.num_layers},
                         {"hidden_size", report.hidden_size}, {"ffn_factor", report.ffn_factor}};
    j["analytical_flops_baseline"] = report.analytical_flops_baseline;
    j["analytical_flops_vtw"] = report.analytical_flops_vtw;
    j["ratio_vtw_over_baseline"] = report.ratio_vtw_over_baseline;
    j["measured_macs_baseline"] = report.measured_macs_baseline
                                      ? nlohmann::ordered_json(*report.measured_macs_baseline)
                                      : nlohmann::ordered_json(nullptr);
    j["measured_macs_vtw"] = report.measured_macs_vtw
                                 ? nlohmann::ordered_json(*report.measured_macs_vtw)
                                 : nlohmann::ordered_json(nullptr);
    j["cache_rows_baseline"] = report.cache_rows_baseline;
    j["cache_rows_vtw"] = report.cache_rows_vtw;
    if (summary != nullptr) {
        auto rows = nlohmann::ordered_json::array();
        for (const auto& r : summary->rows) {
            rows.push_back({{"run", r.run},
                            {"term", r.term},
                            {"measured", r.measured},
                            {"analytical", r.analytical},
                            {"modeled", r.modeled}});
        }
        j["per_term"] = rows;
        j["per_term_pass"] = summary->pass;
    }
    return j;
}

std::string discrepancy_csv(const DiscrepancySummary& summary) {
    std::string out = "run,term,measured_macs,analytical_macs,modeled,match\n";
    for (const auto& r : summary.rows) {
        out += fmt::format("{},{},{},{},{},{}\n", r.run, r.term, r.measured, r.analytical,
                           r.modeled ? 1 : 0, r.measured == r.analytical ? 1 : 0);
    }
    return out;
}

}  // namespace vtw
