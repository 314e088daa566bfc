// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "reference_model.hpp"
#include "test_util.hpp"
#include "vtw/errors.hpp"
#include "vtw/model.hpp"

namespace vtw {
namespace {

using testing::reference_model;
using testing::small_config;

Matrix random_rows(std::size_t n, std::size_t h, DeterministicRng& rng) {
    Matrix m(n, h);
    for (float& x : m.data()) {
        x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return m;
}

std::vector<PositionId> iota_positions(std::size_t n, PositionId start = 0) {
    std::vector<PositionId> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = start + static_cast<PositionId>(i);
    }
    return p;
}

std::vector<SegmentType> text_segments(std::size_t n) {
    return std::vector<SegmentType>(n, SegmentType::Instruction);
}

/// Embeds ids through the token table.
Matrix embed(const ModelWeights& w, const std::vector<TokenId>& ids) {
    Matrix m;
    for (TokenId id : ids) {
        m.append_row(w.token_embedding.row(id));
    }
    return m;
}

TEST(ModelConfig, ValidateRejectsBadShapes) {
    ModelConfig c;
    c.head_dim = 15;
    EXPECT_THROW(init_model(c), ValidationError);
    c = ModelConfig{};
    c.num_layers = 5;
    EXPECT_THROW(c.validate(), ValidationError);
    c = ModelConfig{};
    c.vocab_size = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = ModelConfig{};
    c.num_heads = 8;
    c.head_dim = 7;
    c.hidden_size = 56;
    EXPECT_THROW(c.validate(), ValidationError);
    EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(ModelConfig, CanonicalTextRoundTrips) {
    const ModelConfig c = small_config(77);
    EXPECT_EQ(ModelConfig::parse(c.to_canonical_text()), c);
}

TEST(ModelConfig, StrictParsing) {
    const std::string good = ModelConfig{}.to_canonical_text();
    EXPECT_NO_THROW(ModelConfig::parse(good));
    std::string extra = good;
    extra.insert(1, "\"dropout\":0,");
    EXPECT_THROW(ModelConfig::parse(extra), ValidationError);
    EXPECT_THROW(ModelConfig::parse("{\"num_layers\":8}"), ValidationError);
    EXPECT_THROW(ModelConfig::parse("not json"), ValidationError);
    EXPECT_THROW(ModelConfig::parse("[]"), ValidationError);
}

TEST(InitModel, SameConfigGivesIdenticalBytes) {
    const ModelConfig c = small_config();
    EXPECT_EQ(serialize_weights(init_model(c)), serialize_weights(init_model(c)));
    ModelConfig other = c;
    other.seed += 1;
    EXPECT_NE(serialize_weights(init_model(c)), serialize_weights(init_model(other)));
}

TEST(InitModel, ShapesFollowConfigAndScaleBound) {
    const ModelConfig c = small_config();
    const ModelWeights w = init_model(c);
    const float bound = 1.0f / std::sqrt(static_cast<float>(c.hidden_size));
    std::size_t tensors = 0;
    for (const auto& t : tensor_manifest(w)) {
        ++tensors;
        EXPECT_EQ(t.data.size(), t.rows * t.cols) << t.name;
        const bool gain = t.name.find("norm") != std::string::npos;
        for (float x : t.data) {
            if (gain) {
                EXPECT_EQ(x, 1.0f) << t.name;
            } else {
                EXPECT_LE(std::abs(x), bound) << t.name;
            }
        }
    }
    EXPECT_EQ(tensors, 2 + 9 * c.num_layers + 2);
    EXPECT_EQ(w.layers[0].w_in.cols(), c.ffn_dim());
    EXPECT_EQ(w.layers[0].w_out.rows(), c.ffn_dim());
    EXPECT_EQ(w.lm_head.cols(), c.vocab_size);
}

TEST(InitModel, ReferenceDigestGolden) {
    const std::string bytes = serialize_weights(reference_model());
    EXPECT_TRUE(testing::matches_golden("reference_model.sha256", sha256_hex(bytes) + "\n"))
        << sha256_hex(bytes);
}

TEST(WeightContainer, RoundTripIsBitExact) {
    const ModelWeights w = init_model(small_config());
    const std::string bytes = serialize_weights(w);
    EXPECT_EQ(bytes.substr(0, 4), "VTWM");
    const ModelWeights back = deserialize_weights(bytes);
    EXPECT_EQ(back, w);
    EXPECT_EQ(serialize_weights(back), bytes);
}

TEST(WeightContainer, RejectsCorruption) {
    const std::string bytes = serialize_weights(init_model(small_config()));
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize_weights(bad_magic), ValidationError);
    std::string bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(deserialize_weights(bad_version), ValidationError);
    EXPECT_THROW(deserialize_weights(bytes.substr(0, bytes.size() - 3)), ValidationError);
    EXPECT_THROW(deserialize_weights(bytes + "x"), ValidationError);
    std::string nan_value = bytes;
    const float nan = std::nanf("");
    std::memcpy(nan_value.data() + nan_value.size() - 4, &nan, 4);
    EXPECT_THROW(deserialize_weights(nan_value), ValidationError);
}

TEST(WeightContainer, MissingFileIsIoError) {
    EXPECT_THROW(load_weights("/nonexistent/dir/model.bin"), IoError);
}

TEST(Rotary, PositionZeroIsIdentityAndNormIsPreserved) {
    DeterministicRng rng(8);
    std::vector<float> v(16);
    for (float& x : v) {
        x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    auto same = v;
    apply_rotary(same, 0);
    EXPECT_EQ(same, v);
    auto moved = v;
    apply_rotary(moved, 1234);
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        n0 += static_cast<double>(v[i]) * v[i];
        n1 += static_cast<double>(moved[i]) * moved[i];
    }
    EXPECT_NEAR(n0, n1, 1e-5);
    EXPECT_NE(moved, v);
}

TEST(Rotary, CachedKeysReencodeBitwise) {
    const ModelWeights w = init_model(small_config());
    DeterministicRng rng(12);
    const Matrix x = random_rows(5, w.config.hidden_size, rng);
    const std::vector<PositionId> pos = {3, 9, 10, 40, 41};
    LayerCache cache;
    causal_attention(w.config, w.layers[0], x, cache, pos, text_segments(5), nullptr, nullptr);
    const Matrix raw_k = matmul(x, w.layers[0].wk);
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<float> row(raw_k.row(i).begin(), raw_k.row(i).end());
        for (std::size_t head = 0; head < w.config.num_heads; ++head) {
            apply_rotary(std::span(row).subspan(head * w.config.head_dim, w.config.head_dim),
                         cache.positions[i]);
        }
        const auto cached = cache.keys.row(i);
        EXPECT_TRUE(std::equal(row.begin(), row.end(), cached.begin()));
    }
}

TEST(CausalAttention, SingleTokenAttendsToItself) {
    const ModelWeights w = init_model(small_config());
    DeterministicRng rng(4);
    LayerCache cache;
    AttentionCapture cap;
    causal_attention(w.config, w.layers[2], random_rows(1, w.config.hidden_size, rng), cache,
                     iota_positions(1), text_segments(1), &cap, nullptr);
    ASSERT_EQ(cap.last_row_per_head.size(), w.config.num_heads);
    for (const auto& row : cap.last_row_per_head) {
        ASSERT_EQ(row.size(), 1u);
        EXPECT_EQ(row[0], 1.0f);
    }
}

TEST(CausalAttention, RejectsPositionBeyondMax) {
    const ModelWeights w = init_model(small_config());
    LayerCache cache;
    const std::vector<PositionId> pos = {w.config.max_position};
    EXPECT_THROW(causal_attention(w.config, w.layers[0], Matrix(1, w.config.hidden_size), cache,
                                  pos, text_segments(1), nullptr, nullptr),
                 RangeError);
}

TEST(CausalAttention, LastRowMatchesDenseMaskedReference) {
    const ModelWeights& w = reference_model();
    DeterministicRng rng(6);
    const Matrix x = random_rows(6, w.config.hidden_size, rng);
    KVCache cache(w.config.num_layers, w.config.hidden_size);
    const auto pos = iota_positions(6);
    const auto act = decoder_forward(w, x, pos, text_segments(6), cache, 1, w.config.num_layers,
                                     true, nullptr);
    reference::Rows rows;
    for (std::size_t i = 0; i < 6; ++i) {
        rows.emplace_back(x.row(i).begin(), x.row(i).end());
    }
    reference::AttentionMaps maps;
    reference::run_layers(w, rows, pos, 1, w.config.num_layers, &maps);
    ASSERT_EQ(act.captures.size(), w.config.num_layers);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        for (std::size_t head = 0; head < w.config.num_heads; ++head) {
            const auto& got = act.captures[l].last_row_per_head[head];
            const auto& want = maps[l][head].back();
            ASSERT_EQ(got.size(), want.size());
            double sum = 0.0;
            for (std::size_t j = 0; j < got.size(); ++j) {
                EXPECT_NEAR(got[j], want[j], 1e-5);
                sum += got[j];
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
        // Earlier rows of the dense map are zero above the diagonal.
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = i + 1; j < 6; ++j) {
                EXPECT_EQ(maps[l][0][i][j], 0.0f);
            }
        }
    }
}

TEST(DecoderForward, PerturbingLaterTokenLeavesEarlierOutputs) {
    const ModelWeights& w = reference_model();
    DeterministicRng rng(21);
    const std::size_t n = 9;
    Matrix x = random_rows(n, w.config.hidden_size, rng);
    const auto pos = iota_positions(n);
    KVCache c1(w.config.num_layers, w.config.hidden_size);
    const auto a = decoder_forward(w, x, pos, text_segments(n), c1, 1, w.config.num_layers, false,
                                   nullptr);
    for (float& v : x.row(5)) {
        v += 0.5f;
    }
    KVCache c2(w.config.num_layers, w.config.hidden_size);
    const auto b = decoder_forward(w, x, pos, text_segments(n), c2, 1, w.config.num_layers, false,
                                   nullptr);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_TRUE(std::ranges::equal(a.hidden.row(i), b.hidden.row(i))) << "row " << i;
    }
    EXPECT_FALSE(std::ranges::equal(a.hidden.row(5), b.hidden.row(5)));
}

TEST(DecoderForward, RejectsInvalidLayerRange) {
    const ModelWeights w = init_model(small_config());
    KVCache cache(w.config.num_layers, w.config.hidden_size);
    const Matrix x(1, w.config.hidden_size);
    const auto pos = iota_positions(1);
    const auto seg = text_segments(1);
    EXPECT_THROW(decoder_forward(w, x, pos, seg, cache, 0, 3, false, nullptr), ValidationError);
    EXPECT_THROW(decoder_forward(w, x, pos, seg, cache, 4, 3, false, nullptr), ValidationError);
    EXPECT_THROW(decoder_forward(w, x, pos, seg, cache, 1, w.config.num_layers + 1, false, nullptr),
                 ValidationError);
}

TEST(DecoderForward, SplitCompositionIsBitwise) {
    const ModelWeights& w = reference_model();
    DeterministicRng rng(30);
    const std::size_t n = 11;
    const Matrix x = random_rows(n, w.config.hidden_size, rng);
    const auto pos = iota_positions(n);
    const auto seg = text_segments(n);
    const std::size_t layers = w.config.num_layers;
    KVCache full_cache(layers, w.config.hidden_size);
    const auto full = decoder_forward(w, x, pos, seg, full_cache, 1, layers, false, nullptr);
    for (std::size_t m = 1; m < layers; ++m) {
        KVCache cache(layers, w.config.hidden_size);
        const auto head = decoder_forward(w, x, pos, seg, cache, 1, m, false, nullptr);
        const auto tail = decoder_forward(w, head.hidden, pos, seg, cache, m + 1, layers, false,
                                          nullptr);
        EXPECT_EQ(tail.hidden, full.hidden) << "split at " << m;
        EXPECT_EQ(cache.total_rows(), full_cache.total_rows());
    }
}

TEST(DecoderForward, LogitsMatchCacheFreeReference) {
    const ModelWeights& w = reference_model();
    const std::vector<TokenId> ids = {5, 17, 200, 3, 3, 64, 128, 9, 250, 31};
    const Matrix x = embed(w, ids);
    const auto pos = iota_positions(ids.size());
    KVCache cache(w.config.num_layers, w.config.hidden_size);
    const auto act = decoder_forward(w, x, pos, text_segments(ids.size()), cache, 1,
                                     w.config.num_layers, false, nullptr);
    const auto pred = predict_next(w, act.hidden.row(ids.size() - 1));

    reference::Rows rows;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        rows.emplace_back(x.row(i).begin(), x.row(i).end());
    }
    const auto hidden = reference::run_layers(w, rows, pos, 1, w.config.num_layers);
    const auto want = reference::logits(w, hidden.back());
    ASSERT_EQ(pred.logits.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_NEAR(pred.logits[i], want[i], 1e-5);
    }
    EXPECT_EQ(pred.token, reference::first_max(want));
}

TEST(DecoderForward, IncrementalDecodingMatchesRecomputation) {
    const ModelWeights& w = reference_model();
    DeterministicRng rng(44);
    const std::size_t n = 12;
    const Matrix x = random_rows(n, w.config.hidden_size, rng);
    const auto pos = iota_positions(n);
    KVCache cache(w.config.num_layers, w.config.hidden_size);
    reference::Rows rows;
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix one(1, x.cols(), std::vector<float>(x.row(i).begin(), x.row(i).end()));
        const auto act = decoder_forward(w, one, std::span(pos).subspan(i, 1),
                                         text_segments(1), cache, 1, w.config.num_layers, false,
                                         nullptr);
        const auto got = predict_next(w, act.hidden.row(0));
        rows.emplace_back(x.row(i).begin(), x.row(i).end());
        const auto want =
            reference::logits(w, reference::run_layers(w, rows, pos, 1, w.config.num_layers).back());
        for (std::size_t v = 0; v < want.size(); ++v) {
            ASSERT_NEAR(got.logits[v], want[v], 1e-5);
        }
        EXPECT_EQ(got.token, reference::first_max(want));
    }
    EXPECT_EQ(cache.total_rows(), n * w.config.num_layers);
}

TEST(PredictNext, GreedyTieBreak) {
    ModelWeights w = init_model(small_config());
    // An identity-like head makes the logits a scaled copy of the normed hidden state.
    w.lm_head = Matrix(w.config.hidden_size, w.config.vocab_size);
    for (std::size_t i = 0; i < w.config.hidden_size; ++i) {
        w.lm_head(i, i) = 1.0f;
    }
    std::vector<float> hidden(w.config.hidden_size, 0.0f);
    hidden[7] = 2.0f;
    EXPECT_EQ(predict_next(w, hidden).token, 7u);
    hidden[2] = 3.0f;
    hidden[9] = 3.0f;
    EXPECT_EQ(predict_next(w, hidden).token, 2u);
    EXPECT_THROW(predict_next(w, std::vector<float>(3)), ShapeError);
}

TEST(SampleToken, ZeroTemperatureIsGreedyAndSamplingIsSeeded) {
    const std::vector<float> logits = {0.1f, 2.0f, -1.0f, 1.9f};
    DeterministicRng rng(1);
    EXPECT_EQ(sample_token(logits, 0.0f, rng), 1u);
    DeterministicRng a(9), b(9);
    for (int i = 0; i < 20; ++i) {
        const TokenId t = sample_token(logits, 1.0f, a);
        EXPECT_EQ(t, sample_token(logits, 1.0f, b));
        EXPECT_LT(t, logits.size());
    }
}

TEST(KVCache, RemoveSegmentKeepsOrder) {
    LayerCache c;
    const std::vector<SegmentType> segs = {SegmentType::System, SegmentType::Vision,
                                           SegmentType::Vision, SegmentType::Instruction};
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const std::vector<float> row(2, static_cast<float>(i));
        c.keys.append_row(row);
        c.values.append_row(row);
        c.positions.push_back(static_cast<PositionId>(i));
        c.segments.push_back(segs[i]);
    }
    EXPECT_EQ(c.count(SegmentType::Vision), 2u);
    c.remove_segment(SegmentType::Vision);
    EXPECT_EQ(c.rows(), 2u);
    EXPECT_EQ(c.keys.rows(), 2u);
    EXPECT_EQ(c.values.rows(), 2u);
    EXPECT_EQ(c.positions, (std::vector<PositionId>{0, 3}));
    EXPECT_EQ(c.keys(1, 0), 3.0f);
    EXPECT_EQ(c.count(SegmentType::Vision), 0u);
}

}  // namespace
}  // namespace vtw
