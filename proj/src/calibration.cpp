// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/calibration.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vtw/errors.hpp"
#include "vtw/rng.hpp"

namespace vtw {

void CalibrationConfig::validate(const ModelConfig& model) const {
    if (subset_size < 1) {
        throw ValidationError("calibration: subset_size must be >= 1");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw ValidationError("calibration: eta must be a finite non-negative number");
    }
    if (k_min < 5 || k_min > model.num_layers) {
        throw ValidationError("calibration: k_min " + std::to_string(k_min) + " outside [5, " +
                              std::to_string(model.num_layers) + "]");
    }
}

std::vector<std::size_t> sample_subset_indices(std::size_t dataset_size,
                                               const CalibrationConfig& config) {
    if (dataset_size == 0) {
        throw ValidationError("calibration: empty dataset");
    }
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    DeterministicRng rng(config.sampling_seed);
    for (std::size_t i = dataset_size - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(order[i], order[j]);
    }
    order.resize(std::min(config.subset_size, dataset_size));
    return order;
}

std::vector<DatasetRecord> sample_subset(std::span<const DatasetRecord> dataset,
                                         const CalibrationConfig& config) {
    std::vector<DatasetRecord> out;
    for (std::size_t idx : sample_subset_indices(dataset.size(), config)) {
        out.push_back(dataset[idx]);
    }
    return out;
}

namespace {

std::vector<float> prefill_distribution(const ModelWeights& weights,
                                        const MultimodalSequence& seq,
                                        const WithdrawalPolicy& policy) {
    return softmax_row(vtw_prefill(weights, seq, policy).logits);
}

}  // namespace

std::vector<float> baseline_distribution(const ModelWeights& weights, const DatasetRecord& record) {
    return prefill_distribution(weights, build_record_sequence(record, weights),
                                WithdrawalPolicy::baseline(weights.config));
}

double divergence_at(const ModelWeights& weights, const DatasetRecord& record, std::size_t k,
                     PositionPolicy positions) {
    const auto seq = build_record_sequence(record, weights);
    const auto p = prefill_distribution(weights, seq, WithdrawalPolicy::baseline(weights.config));
    const auto q = prefill_distribution(weights, seq, WithdrawalPolicy::at(k, positions));
    return kl_divergence(p, q);
}

CalibrationReport search_withdrawal_layer(const ModelWeights& weights,
                                          std::span<const DatasetRecord> dataset,
                                          const CalibrationConfig& config) {
    config.validate(weights.config);
    CalibrationReport report;
    report.eta = config.eta;
    report.subset_size = config.subset_size;
    report.seed = config.sampling_seed;
    report.subset_ids = sample_subset_indices(dataset.size(), config);

    std::vector<MultimodalSequence> sequences;
    std::vector<std::vector<float>> baselines;
    for (std::size_t idx : report.subset_ids) {
        sequences.push_back(build_record_sequence(dataset[idx], weights));
        baselines.push_back(prefill_distribution(weights, sequences.back(),
                                                 WithdrawalPolicy::baseline(weights.config)));
    }

    for (std::size_t k = config.k_min; k <= weights.config.num_layers; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < sequences.size(); ++i) {
            const auto q =
                prefill_distribution(weights, sequences[i], WithdrawalPolicy::at(k, config.positions));
            sum += kl_divergence(baselines[i], q);
        }
        const double mean = sum / static_cast<double>(sequences.size());
        report.per_k.push_back({k, mean});
        if (mean < config.eta) {
            report.chosen_k = k;
            break;
        }
    }
    return report;
}

std::string calibration_report_json(const CalibrationReport& report) {
    nlohmann::ordered_json j;
    auto per_k = nlohmann::ordered_json::array();
    for (const auto& e : report.per_k) {
        per_k.push_back({{"k", e.k}, {"mean_kl", e.mean_kl}});
    }
    j["per_k"] = per_k;
    j["chosen_k"] =
        report.chosen_k ? nlohmann::ordered_json(*report.chosen_k) : nlohmann::ordered_json(nullptr);
    j["eta"] = report.eta;
    j["subset_size"] = report.subset_size;
    j["seed"] = report.seed;
    j["subset_ids"] = report.subset_ids;
    return j.dump(2) + "\n";
}

std::string calibration_report_csv(const CalibrationReport& report) {
    std::string out = "k,mean_kl\n";
    for (const auto& e : report.per_k) {
        out += fmt::format("{},{:.17g}\n", e.k, e.mean_kl);
    }
    return out;
}

}  // namespace vtw
