// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtw/numerics.hpp"
#include "vtw/rng.hpp"
#include "vtw/segment.hpp"

namespace vtw {

using TokenId = std::uint32_t;
using PositionId = std::uint32_t;

inline constexpr float kNormEpsilon = 1e-6f;
inline constexpr double kRopeBase = 10000.0;

/// Architecture hyperparameters of the toy decoder.
struct ModelConfig {
    std::uint32_t num_layers = 8;
    std::uint32_t hidden_size = 64;
    std::uint32_t num_heads = 4;
    std::uint32_t head_dim = 16;
    std::uint32_t ffn_factor = 4;
    std::uint32_t vocab_size = 256;
    std::uint32_t vision_embed_dim = 32;
    std::uint32_t max_position = 2048;
    std::uint64_t seed = 42;

    std::size_t ffn_dim() const { return static_cast<std::size_t>(ffn_factor) * hidden_size; }

    /// Throws ValidationError describing the first violated invariant.
    void validate() const;

    /// Sorted-key compact JSON; the form embedded in weight containers.
    std::string to_canonical_text() const;

    /// Strict parse: every field required, unknown fields rejected, then validate().
    static ModelConfig parse(std::string_view text);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    std::vector<float> attn_norm;
    Matrix wq, wk, wv, wo;  // h x h
    std::vector<float> ffn_norm;
    Matrix w_in, w_gate;    // h x (ffn_factor * h)
    Matrix w_out;           // (ffn_factor * h) x h

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
    ModelConfig config;
    Matrix token_embedding;   // vocab x h
    Matrix vision_projector;  // vision_embed_dim x h
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;
    Matrix lm_head;           // h x vocab

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// One named tensor in container order.
struct TensorView {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    std::span<const float> data;
};

/// All tensors in the fixed order used by the weight container.
std::vector<TensorView> tensor_manifest(const ModelWeights& weights);

/// Seeded scaled-uniform init in [-1/sqrt(h), 1/sqrt(h)); norm gains are ones.
ModelWeights init_model(const ModelConfig& config);

/// Keys and values appended at one layer, one row per token, all heads side by side.
struct LayerCache {
    Matrix keys;    // rows x h, rotary already applied
    Matrix values;  // rows x h
    std::vector<PositionId> positions;
    std::vector<SegmentType> segments;

    std::size_t rows() const { return positions.size(); }
    std::size_t count(SegmentType segment) const;
    /// Drops every row tagged `segment`, keeping the order of the rest.
    void remove_segment(SegmentType segment);
};

class KVCache {
public:
    KVCache() = default;
    KVCache(std::size_t num_layers, std::size_t hidden_size);

    std::size_t num_layers() const { return layers_.size(); }
    /// 1-based layer index.
    LayerCache& layer(std::size_t index);
    const LayerCache& layer(std::size_t index) const;

    /// Sum of rows over all layers.
    std::size_t total_rows() const;

private:
    std::vector<LayerCache> layers_;
};

/// Last attention row of one layer, per head, with the segment tag of each attended position.
struct AttentionCapture {
    std::size_t layer = 0;
    std::vector<std::vector<float>> last_row_per_head;
    std::vector<SegmentType> segments;
};

struct LayerActivations {
    Matrix hidden;
    std::vector<AttentionCapture> captures;
};

/// Rotates consecutive pairs of a head vector by position-dependent angles.
void apply_rotary(std::span<float> head_vector, PositionId position);

/// Multi-head causal self-attention for `inputs.rows()` new tokens, including the
/// output projection. New keys/values are appended to `cache` first; each new token
/// sees every cached row plus itself and earlier new rows.
Matrix causal_attention(const ModelConfig& config, const LayerWeights& layer, const Matrix& inputs,
                        LayerCache& cache, std::span<const PositionId> positions,
                        std::span<const SegmentType> segments, AttentionCapture* capture,
                        OpCounter* counter);

/// Runs layers [first_layer, last_layer] (1-based, inclusive) over already embedded rows.
LayerActivations decoder_forward(const ModelWeights& weights, const Matrix& embedded,
                                 std::span<const PositionId> positions,
                                 std::span<const SegmentType> segments, KVCache& cache,
                                 std::size_t first_layer, std::size_t last_layer, bool capture,
                                 OpCounter* counter);

struct Prediction {
    TokenId token = 0;
    std::vector<float> logits;
};

/// Final norm, lm_head, greedy argmax (lowest index on ties).
Prediction predict_next(const ModelWeights& weights, std::span<const float> final_hidden,
                        OpCounter* counter = nullptr);

/// Temperature sampling. Not part of the verified greedy path.
TokenId sample_token(std::span<const float> logits, float temperature, DeterministicRng& rng);

/// Weight container ("VTWM" magic, u16 version, u32-length config text, LE float tensors).
inline constexpr std::uint16_t kWeightFormatVersion = 1;

std::string serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::string_view bytes);
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace vtw
