// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "vtw/analytics.hpp"
#include "vtw/model.hpp"
#include "vtw/sequence.hpp"

namespace vtw {

/// Position ids of surviving tokens in the layers after withdrawal.
enum class PositionPolicy {
    Keep,       // original ids
    Rearrange,  // renumbered 0..m-1 in order
};

std::string_view position_policy_name(PositionPolicy p);
PositionPolicy parse_position_policy(std::string_view name);

struct WithdrawalPolicy {
    /// First layer (1-based) that never sees vision rows. num_layers + 1 disables withdrawal.
    std::size_t withdraw_layer = 0;
    PositionPolicy positions = PositionPolicy::Keep;
    /// Vision K/V rows of layers before withdraw_layer stay visible to generated tokens.
    bool retain_shallow_vision_kv = true;

    static WithdrawalPolicy baseline(const ModelConfig& config) {
        return {static_cast<std::size_t>(config.num_layers) + 1, PositionPolicy::Keep, true};
    }
    static WithdrawalPolicy at(std::size_t k, PositionPolicy positions = PositionPolicy::Keep) {
        return {k, positions, true};
    }

    bool withdraws(const ModelConfig& config) const { return withdraw_layer <= config.num_layers; }
    void validate(const ModelConfig& config) const;
};

/// Per-request decoding state after prefill.
struct DecodeState {
    WithdrawalPolicy policy;
    /// Tokens that have been run through the model.
    MultimodalSequence sequence;
    KVCache cache;
    bool withdrawn = false;
    std::vector<TokenId> generated;
    /// Logits predicting the next token.
    std::vector<float> logits;
    /// Position id the next token takes in the layers from withdraw_layer on.
    PositionId next_deep_position = 0;
    /// Raw last-row attention per output step (when capturing).
    bool capture = false;
    std::vector<std::vector<AttentionCapture>> attention_steps;
    AttentionProfile profile;
};

/// Layers 1..K-1 over the whole prompt, vision rows dropped, layers K..N over the rest.
/// Returns the state holding the final-position logits.
DecodeState vtw_prefill(const ModelWeights& weights, const MultimodalSequence& seq,
                        const WithdrawalPolicy& policy, bool capture = false,
                        OpCounter* counter = nullptr);

/// Greedy generation of up to max_new_tokens new ids; stops after emitting stop_id.
/// Returns the ids produced by this call.
std::vector<TokenId> vtw_decode(const ModelWeights& weights, DecodeState& state,
                                std::size_t max_new_tokens, TokenId stop_id,
                                OpCounter* counter = nullptr);

enum class AblationMode {
    NoImage,     // vision segment dropped entirely
    NonContent,  // constant vision rows, withdrawn at K
    Original,    // record's own vision rows, withdrawn at K
};

std::string_view ablation_mode_name(AblationMode m);
AblationMode parse_ablation_mode(std::string_view name);

/// Final prefill logits for one ablation setting.
std::vector<float> run_ablation(const ModelWeights& weights, const DatasetRecord& record,
                                AblationMode mode, std::size_t k);

}  // namespace vtw
