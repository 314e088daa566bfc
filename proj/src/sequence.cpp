// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/sequence.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "vtw/errors.hpp"
#include "vtw/rng.hpp"

namespace vtw {

using json = nlohmann::json;

std::vector<PositionId> MultimodalSequence::positions() const {
    std::vector<PositionId> out;
    out.reserve(tokens_.size());
    for (const auto& t : tokens_) {
        out.push_back(t.position);
    }
    return out;
}

std::vector<SegmentType> MultimodalSequence::segments() const {
    std::vector<SegmentType> out;
    out.reserve(tokens_.size());
    for (const auto& t : tokens_) {
        out.push_back(t.segment);
    }
    return out;
}

void MultimodalSequence::push(std::span<const float> embedding, SegmentType segment,
                              std::optional<TokenId> id) {
    if (!tokens_.empty() && segment_index(segment) < segment_index(tokens_.back().segment)) {
        throw ValidationError(std::string("segment ") + std::string(segment_name(segment)) +
                              " cannot follow " + std::string(segment_name(tokens_.back().segment)));
    }
    const PositionId position = next_position();
    embeddings_.append_row(embedding);
    tokens_.push_back({id, segment, position});
    ++counts_[segment_index(segment)];
}

VisionInput make_noncontent_vision(std::size_t n_vis, std::size_t dim, float value) {
    return {Matrix(n_vis, dim, value), VisionProvenance::NonContent};
}

VisionInput make_random_vision(std::size_t n_vis, std::size_t dim, std::uint64_t seed) {
    DeterministicRng rng(seed);
    Matrix m(n_vis, dim);
    for (float& x : m.data()) {
        x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return {std::move(m), VisionProvenance::SeededRandom};
}

namespace {

void check_ids(std::span<const TokenId> ids, const ModelWeights& weights, const char* what) {
    for (TokenId id : ids) {
        if (id >= weights.config.vocab_size) {
            throw ValidationError(std::string(what) + " id " + std::to_string(id) +
                                  " >= vocab_size " + std::to_string(weights.config.vocab_size));
        }
    }
}

}  // namespace

MultimodalSequence build_sequence(std::span<const TokenId> system_ids, const VisionInput& vision,
                                  std::span<const TokenId> instruction_ids,
                                  const ModelWeights& weights, OpCounter* counter) {
    check_ids(system_ids, weights, "system");
    check_ids(instruction_ids, weights, "instruction");
    MultimodalSequence seq;
    for (TokenId id : system_ids) {
        seq.push(weights.token_embedding.row(id), SegmentType::System, id);
    }
    if (vision.count() > 0) {
        if (vision.embeddings.cols() != weights.config.vision_embed_dim) {
            throw ShapeError("vision embedding width " + std::to_string(vision.embeddings.cols()) +
                             " != vision_embed_dim " +
                             std::to_string(weights.config.vision_embed_dim));
        }
        for (float x : vision.embeddings.data()) {
            if (!std::isfinite(x)) {
                throw ValidationError("vision embeddings contain a non-finite value");
            }
        }
        const Matrix projected =
            matmul(vision.embeddings, weights.vision_projector, counter, MacTerm::VisionProjector);
        for (std::size_t i = 0; i < projected.rows(); ++i) {
            seq.push(projected.row(i), SegmentType::Vision, std::nullopt);
        }
    }
    for (TokenId id : instruction_ids) {
        seq.push(weights.token_embedding.row(id), SegmentType::Instruction, id);
    }
    return seq;
}

MultimodalSequence append_output_token(MultimodalSequence seq, TokenId token,
                                       const ModelWeights& weights) {
    const TokenId ids[] = {token};
    check_ids(ids, weights, "output");
    seq.push(weights.token_embedding.row(token), SegmentType::Output, token);
    return seq;
}

VisionInput resolve_vision(const VisionSpec& spec, std::size_t dim) {
    return std::visit(
        [dim](const auto& v) -> VisionInput {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, InlineVision>) {
                if (v.embeddings.rows() > 0 && v.embeddings.cols() != dim) {
                    throw ShapeError("inline vision width " + std::to_string(v.embeddings.cols()) +
                                     " != vision_embed_dim " + std::to_string(dim));
                }
                return {v.embeddings.rows() == 0 ? Matrix(0, dim) : v.embeddings,
                        VisionProvenance::Inline};
            } else if constexpr (std::is_same_v<T, SeededVision>) {
                return make_random_vision(v.n_vis, dim, v.seed);
            } else {
                return make_noncontent_vision(v.n_vis, dim);
            }
        },
        spec);
}

MultimodalSequence build_record_sequence(const DatasetRecord& record, const ModelWeights& weights,
                                         OpCounter* counter) {
    return build_sequence(record.system_ids,
                          resolve_vision(record.vision, weights.config.vision_embed_dim),
                          record.instruction_ids, weights, counter);
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ValidationError(where + ": unknown field \"" + key + "\"");
        }
    }
}

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) {
        throw ValidationError(where + ": missing field \"" + key + "\"");
    }
    return obj.at(key);
}

std::uint64_t as_count(const json& v, const std::string& what) {
    if (!v.is_number_unsigned()) {
        throw ValidationError(what + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

std::vector<TokenId> as_ids(const json& v, const std::string& what) {
    if (!v.is_array()) {
        throw ValidationError(what + " must be an array of token ids");
    }
    std::vector<TokenId> ids;
    for (const auto& x : v) {
        const auto id = as_count(x, what + " entry");
        if (id > std::numeric_limits<TokenId>::max()) {
            throw ValidationError(what + " entry too large");
        }
        ids.push_back(static_cast<TokenId>(id));
    }
    return ids;
}

VisionSpec parse_vision(const json& v) {
    if (!v.is_object() || v.size() == 0) {
        throw ValidationError("vision must be a non-empty object");
    }
    if (v.contains("inline")) {
        reject_unknown(v, {"inline"}, "vision");
        const auto& rows = v.at("inline");
        if (!rows.is_array()) {
            throw ValidationError("vision.inline must be an array of rows");
        }
        InlineVision out;
        for (const auto& row : rows) {
            if (!row.is_array() || row.empty()) {
                throw ValidationError("vision.inline rows must be non-empty arrays of numbers");
            }
            std::vector<float> values;
            for (const auto& x : row) {
                if (!x.is_number()) {
                    throw ValidationError("vision.inline entries must be numbers");
                }
                const float f = x.get<float>();
                if (!std::isfinite(f)) {
                    throw ValidationError("vision.inline entries must be finite");
                }
                values.push_back(f);
            }
            out.embeddings.append_row(values);
        }
        return out;
    }
    if (v.contains("noncontent")) {
        reject_unknown(v, {"noncontent"}, "vision");
        const auto& nc = v.at("noncontent");
        if (!nc.is_object()) {
            throw ValidationError("vision.noncontent must be an object");
        }
        reject_unknown(nc, {"n_vis"}, "vision.noncontent");
        return NonContentVision{as_count(require(nc, "n_vis", "vision.noncontent"), "n_vis")};
    }
    reject_unknown(v, {"seed", "n_vis"}, "vision");
    return SeededVision{as_count(require(v, "seed", "vision"), "vision.seed"),
                        as_count(require(v, "n_vis", "vision"), "vision.n_vis")};
}

}  // namespace

DatasetRecord parse_record(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("record must be a JSON object");
    }
    reject_unknown(j, {"system_ids", "instruction_ids", "vision", "max_new_tokens"}, "record");
    DatasetRecord r;
    r.system_ids = as_ids(require(j, "system_ids", "record"), "system_ids");
    r.instruction_ids = as_ids(require(j, "instruction_ids", "record"), "instruction_ids");
    r.vision = parse_vision(require(j, "vision", "record"));
    r.max_new_tokens = as_count(require(j, "max_new_tokens", "record"), "max_new_tokens");
    return r;
}

std::vector<DatasetRecord> parse_dataset(std::string_view text) {
    std::vector<DatasetRecord> records;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        try {
            records.push_back(parse_record(line));
        } catch (const ValidationError& e) {
            throw ValidationError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

std::string record_to_json(const DatasetRecord& record) {
    json j;
    j["system_ids"] = record.system_ids;
    j["instruction_ids"] = record.instruction_ids;
    j["max_new_tokens"] = record.max_new_tokens;
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, InlineVision>) {
                json rows = json::array();
                for (std::size_t i = 0; i < v.embeddings.rows(); ++i) {
                    const auto r = v.embeddings.row(i);
                    rows.push_back(std::vector<float>(r.begin(), r.end()));
                }
                j["vision"] = {{"inline", rows}};
            } else if constexpr (std::is_same_v<T, SeededVision>) {
                j["vision"] = {{"seed", v.seed}, {"n_vis", v.n_vis}};
            } else {
                j["vision"] = {{"noncontent", {{"n_vis", v.n_vis}}}};
            }
        },
        record.vision);
    return j.dump();
}

std::vector<DatasetRecord> make_synthetic_dataset(std::size_t count, std::size_t vocab_size,
                                                  std::uint64_t seed, const SyntheticLayout& layout) {
    if (vocab_size < 2) {
        throw ValidationError("synthetic dataset needs vocab_size >= 2");
    }
    DeterministicRng rng(seed);
    // Keep the stop sentinel (vocab_size - 1) out of prompts.
    const std::uint64_t id_bound = vocab_size - 1;
    std::vector<TokenId> system_ids;
    for (std::size_t i = 0; i < layout.n_system; ++i) {
        system_ids.push_back(static_cast<TokenId>(rng.below(id_bound)));
    }
    std::vector<DatasetRecord> records;
    for (std::size_t r = 0; r < count; ++r) {
        DatasetRecord rec;
        rec.system_ids = system_ids;
        for (std::size_t i = 0; i < layout.n_instruction; ++i) {
            rec.instruction_ids.push_back(static_cast<TokenId>(rng.below(id_bound)));
        }
        rec.vision = SeededVision{rng.next_u64() >> 11, layout.n_vision};
        rec.max_new_tokens = layout.max_new_tokens;
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace vtw
