// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/withdrawal.hpp"

#include <numeric>
#include <string>

#include "vtw/errors.hpp"

namespace vtw {

std::string_view position_policy_name(PositionPolicy p) {
    return p == PositionPolicy::Keep ? "keep" : "rearrange";
}

PositionPolicy parse_position_policy(std::string_view name) {
    if (name == "keep") {
        return PositionPolicy::Keep;
    }
    if (name == "rearrange") {
        return PositionPolicy::Rearrange;
    }
    throw ValidationError("unknown position policy \"" + std::string(name) +
                          "\" (expected keep|rearrange)");
}

void WithdrawalPolicy::validate(const ModelConfig& config) const {
    if (withdraw_layer < 1 || withdraw_layer > static_cast<std::size_t>(config.num_layers) + 1) {
        throw ValidationError("withdrawal layer K=" + std::to_string(withdraw_layer) +
                              " outside [1, " + std::to_string(config.num_layers + 1) + "]");
    }
}

namespace {

void record_step(DecodeState& state, std::vector<AttentionCapture> captures) {
    if (!state.capture) {
        return;
    }
    state.profile.add_step(state.attention_steps.size(), captures);
    state.attention_steps.push_back(std::move(captures));
}

void append_captures(std::vector<AttentionCapture>& into, std::vector<AttentionCapture>& from) {
    for (auto& c : from) {
        into.push_back(std::move(c));
    }
}

}  // namespace

DecodeState vtw_prefill(const ModelWeights& weights, const MultimodalSequence& seq,
                        const WithdrawalPolicy& policy, bool capture, OpCounter* counter) {
    const auto& config = weights.config;
    policy.validate(config);
    if (seq.size() == 0) {
        throw ValidationError("vtw_prefill: empty sequence");
    }
    const std::size_t n_layers = config.num_layers;
    const std::size_t k = policy.withdraw_layer;

    DecodeState state;
    state.policy = policy;
    state.sequence = seq;
    state.cache = KVCache(n_layers, config.hidden_size);
    state.capture = capture;

    const auto positions = seq.positions();
    const auto segments = seq.segments();
    std::vector<AttentionCapture> captures;

    Matrix hidden = seq.embeddings();
    if (k > 1) {
        auto act = decoder_forward(weights, hidden, positions, segments, state.cache, 1,
                                   std::min(k - 1, n_layers), capture, counter);
        hidden = std::move(act.hidden);
        append_captures(captures, act.captures);
    }

    state.next_deep_position = seq.next_position();
    if (k <= n_layers) {
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (segments[i] != SegmentType::Vision) {
                keep.push_back(i);
            }
        }
        if (keep.empty()) {
            throw ValidationError("vtw_prefill: no text tokens survive withdrawal");
        }
        hidden = hidden.select_rows(keep);
        std::vector<PositionId> deep_positions(keep.size());
        std::vector<SegmentType> deep_segments(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) {
            deep_positions[i] = policy.positions == PositionPolicy::Keep
                                    ? positions[keep[i]]
                                    : static_cast<PositionId>(i);
            deep_segments[i] = segments[keep[i]];
        }
        if (policy.positions == PositionPolicy::Rearrange) {
            state.next_deep_position = static_cast<PositionId>(keep.size());
        }
        if (!policy.retain_shallow_vision_kv) {
            for (std::size_t l = 1; l < k; ++l) {
                state.cache.layer(l).remove_segment(SegmentType::Vision);
            }
        }
        auto act = decoder_forward(weights, hidden, deep_positions, deep_segments, state.cache, k,
                                   n_layers, capture, counter);
        hidden = std::move(act.hidden);
        append_captures(captures, act.captures);
        state.withdrawn = true;
    }

    auto prediction = predict_next(weights, hidden.row(hidden.rows() - 1), counter);
    state.logits = std::move(prediction.logits);
    record_step(state, std::move(captures));
    return state;
}

std::vector<TokenId> vtw_decode(const ModelWeights& weights, DecodeState& state,
                                std::size_t max_new_tokens, TokenId stop_id, OpCounter* counter) {
    const auto& config = weights.config;
    const std::size_t n_layers = config.num_layers;
    const std::size_t k = state.policy.withdraw_layer;
    if (state.logits.size() != config.vocab_size) {
        throw ValidationError("vtw_decode: state has not been prefilled");
    }

    std::vector<TokenId> produced;
    while (produced.size() < max_new_tokens) {
        const auto token = static_cast<TokenId>(argmax(state.logits));
        produced.push_back(token);
        state.generated.push_back(token);
        if (token == stop_id || produced.size() == max_new_tokens) {
            break;
        }

        state.sequence = append_output_token(std::move(state.sequence), token, weights);
        const auto& embeddings = state.sequence.embeddings();
        Matrix hidden(1, config.hidden_size);
        const auto last = embeddings.row(embeddings.rows() - 1);
        std::copy(last.begin(), last.end(), hidden.row(0).begin());
        const SegmentType segs[] = {SegmentType::Output};
        const PositionId shallow_pos[] = {state.sequence.tokens().back().position};
        const PositionId deep_pos[] = {state.next_deep_position};

        std::vector<AttentionCapture> captures;
        if (k > 1) {
            auto act = decoder_forward(weights, hidden, shallow_pos, segs, state.cache, 1,
                                       std::min(k - 1, n_layers), state.capture, counter);
            hidden = std::move(act.hidden);
            append_captures(captures, act.captures);
        }
        if (k <= n_layers) {
            auto act = decoder_forward(weights, hidden, deep_pos, segs, state.cache, k, n_layers,
                                       state.capture, counter);
            hidden = std::move(act.hidden);
            append_captures(captures, act.captures);
        }
        ++state.next_deep_position;
        state.logits = predict_next(weights, hidden.row(0), counter).logits;
        record_step(state, std::move(captures));
    }
    return produced;
}

std::string_view ablation_mode_name(AblationMode m) {
    switch (m) {
        case AblationMode::NoImage: return "no_image";
        case AblationMode::NonContent: return "noncontent";
        case AblationMode::Original: return "original";
    }
    return "unknown";
}

AblationMode parse_ablation_mode(std::string_view name) {
    if (name == "no_image") {
        return AblationMode::NoImage;
    }
    if (name == "noncontent") {
        return AblationMode::NonContent;
    }
    if (name == "original") {
        return AblationMode::Original;
    }
    throw ValidationError("unknown ablation mode \"" + std::string(name) +
                          "\" (expected no_image|noncontent|original)");
}

std::vector<float> run_ablation(const ModelWeights& weights, const DatasetRecord& record,
                                AblationMode mode, std::size_t k) {
    const std::size_t dim = weights.config.vision_embed_dim;
    const VisionInput original = resolve_vision(record.vision, dim);
    VisionInput vision;
    WithdrawalPolicy policy = WithdrawalPolicy::at(k);
    policy.validate(weights.config);
    switch (mode) {
        case AblationMode::NoImage:
            vision = VisionInput::none(dim);
            policy = WithdrawalPolicy::baseline(weights.config);
            break;
        case AblationMode::NonContent:
            vision = make_noncontent_vision(original.count(), dim);
            break;
        case AblationMode::Original:
            vision = original;
            break;
    }
    const auto seq = build_sequence(record.system_ids, vision, record.instruction_ids, weights);
    return vtw_prefill(weights, seq, policy).logits;
}

}  // namespace vtw
