// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtw/model.hpp"
#include "vtw/sequence.hpp"
#include "vtw/withdrawal.hpp"

namespace vtw {

struct CalibrationConfig {
    std::size_t subset_size = 20;
    double eta = 0.003;
    std::size_t k_min = 5;
    std::uint64_t sampling_seed = 0;
    PositionPolicy positions = PositionPolicy::Keep;

    void validate(const ModelConfig& model) const;
};

/// Seeded Fisher-Yates over [0, dataset_size); the first min(subset_size, dataset_size) indices.
std::vector<std::size_t> sample_subset_indices(std::size_t dataset_size,
                                               const CalibrationConfig& config);

std::vector<DatasetRecord> sample_subset(std::span<const DatasetRecord> dataset,
                                         const CalibrationConfig& config);

/// Softmax of the final prefill logits of the unwithdrawn model.
std::vector<float> baseline_distribution(const ModelWeights& weights, const DatasetRecord& record);

/// KL(baseline || withdrawn at k) over final-position next-token distributions. k in [1, N+1].
double divergence_at(const ModelWeights& weights, const DatasetRecord& record, std::size_t k,
                     PositionPolicy positions = PositionPolicy::Keep);

struct LayerDivergence {
    std::size_t k = 0;
    double mean_kl = 0.0;
};

struct CalibrationReport {
    std::vector<LayerDivergence> per_k;  // ascending k, stops at the first hit
    std::optional<std::size_t> chosen_k;
    std::vector<std::size_t> subset_ids;
    double eta = 0.0;
    std::size_t subset_size = 0;
    std::uint64_t seed = 0;
};

/// For k = k_min..N, the subset-mean divergence; chosen_k is the first k with mean < eta.
/// When no k qualifies, chosen_k is empty and every k was evaluated.
CalibrationReport search_withdrawal_layer(const ModelWeights& weights,
                                          std::span<const DatasetRecord> dataset,
                                          const CalibrationConfig& config);

std::string calibration_report_json(const CalibrationReport& report);
/// Two columns "k,mean_kl".
std::string calibration_report_csv(const CalibrationReport& report);

}  // namespace vtw
