// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vtw/model.hpp"
#include "vtw/segment.hpp"

namespace vtw {

struct SequenceToken {
    std::optional<TokenId> id;  // empty for vision rows
    SegmentType segment = SegmentType::System;
    PositionId position = 0;

    friend bool operator==(const SequenceToken&, const SequenceToken&) = default;
};

/// A [system, vision, instruction, output] prompt already mapped into hidden space.
class MultimodalSequence {
public:
    std::size_t size() const { return tokens_.size(); }
    std::size_t count(SegmentType segment) const { return counts_[segment_index(segment)]; }

    const std::vector<SequenceToken>& tokens() const { return tokens_; }
    const Matrix& embeddings() const { return embeddings_; }

    std::vector<PositionId> positions() const;
    std::vector<SegmentType> segments() const;

    /// Appends one token. Segment order and strictly increasing positions are enforced.
    void push(std::span<const float> embedding, SegmentType segment, std::optional<TokenId> id);

    /// Next position id (0 when empty).
    PositionId next_position() const { return tokens_.empty() ? 0 : tokens_.back().position + 1; }

private:
    Matrix embeddings_;
    std::vector<SequenceToken> tokens_;
    std::array<std::size_t, kSegmentCount> counts_{};
};

enum class VisionProvenance { Inline, SeededRandom, NonContent };

struct VisionInput {
    Matrix embeddings;  // n_vis x vision_embed_dim
    VisionProvenance provenance = VisionProvenance::Inline;

    std::size_t count() const { return embeddings.rows(); }

    static VisionInput none(std::size_t dim) { return {Matrix(0, dim), VisionProvenance::Inline}; }
};

inline constexpr float kNonContentValue = 1.0f;

/// Constant rows standing in for a blank, content-free image.
VisionInput make_noncontent_vision(std::size_t n_vis, std::size_t dim, float value = kNonContentValue);

/// Seeded uniform [-1, 1) rows.
VisionInput make_random_vision(std::size_t n_vis, std::size_t dim, std::uint64_t seed);

/// Embeds text ids, projects vision rows through the projector, tags and numbers them 0..len-1.
MultimodalSequence build_sequence(std::span<const TokenId> system_ids, const VisionInput& vision,
                                  std::span<const TokenId> instruction_ids,
                                  const ModelWeights& weights, OpCounter* counter = nullptr);

/// Appends one Output token at the next position id.
MultimodalSequence append_output_token(MultimodalSequence seq, TokenId token,
                                       const ModelWeights& weights);

// Dataset records (JSON lines).

struct InlineVision {
    Matrix embeddings;
    friend bool operator==(const InlineVision&, const InlineVision&) = default;
};
struct SeededVision {
    std::uint64_t seed = 0;
    std::size_t n_vis = 0;
    friend bool operator==(const SeededVision&, const SeededVision&) = default;
};
struct NonContentVision {
    std::size_t n_vis = 0;
    friend bool operator==(const NonContentVision&, const NonContentVision&) = default;
};
using VisionSpec = std::variant<InlineVision, SeededVision, NonContentVision>;

struct DatasetRecord {
    std::vector<TokenId> system_ids;
    std::vector<TokenId> instruction_ids;
    VisionSpec vision;
    std::size_t max_new_tokens = 0;

    friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// Materializes the record's vision rows for a model with `dim`-wide vision embeddings.
VisionInput resolve_vision(const VisionSpec& spec, std::size_t dim);

/// build_sequence() for a record.
MultimodalSequence build_record_sequence(const DatasetRecord& record, const ModelWeights& weights,
                                         OpCounter* counter = nullptr);

/// Strict JSON-lines parse. Blank lines are skipped; errors name the 1-based line.
std::vector<DatasetRecord> parse_dataset(std::string_view text);
DatasetRecord parse_record(std::string_view line);
std::string record_to_json(const DatasetRecord& record);

struct SyntheticLayout {
    std::size_t n_system = 8;
    std::size_t n_vision = 64;
    std::size_t n_instruction = 12;
    std::size_t max_new_tokens = 8;
};

/// Deterministic prompts sharing one system prefix, each with its own seeded image and question.
std::vector<DatasetRecord> make_synthetic_dataset(std::size_t count, std::size_t vocab_size,
                                                  std::uint64_t seed,
                                                  const SyntheticLayout& layout = {});

}  // namespace vtw
