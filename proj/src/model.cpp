// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtw/model.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "vtw/digest.hpp"
#include "vtw/errors.hpp"

namespace vtw {

using json = nlohmann::json;

namespace {

constexpr std::string_view kMagic = "VTWM";

const char* const kConfigFields[] = {"num_layers", "hidden_size", "num_heads",    "head_dim",
                                     "ffn_factor", "vocab_size",  "vision_embed_dim",
                                     "max_position", "seed"};

template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, Fn&& fn) {
    const std::size_t h = w.config.hidden_size;
    const std::size_t f = w.config.ffn_dim();
    fn("token_embedding", w.token_embedding, std::size_t{w.config.vocab_size}, h, false);
    fn("vision_projector", w.vision_projector, std::size_t{w.config.vision_embed_dim}, h, false);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        const std::string prefix = "layers." + std::to_string(l + 1) + ".";
        fn(prefix + "attn_norm", layer.attn_norm, std::size_t{1}, h, true);
        fn(prefix + "wq", layer.wq, h, h, false);
        fn(prefix + "wk", layer.wk, h, h, false);
        fn(prefix + "wv", layer.wv, h, h, false);
        fn(prefix + "wo", layer.wo, h, h, false);
        fn(prefix + "ffn_norm", layer.ffn_norm, std::size_t{1}, h, true);
        fn(prefix + "w_in", layer.w_in, h, f, false);
        fn(prefix + "w_gate", layer.w_gate, h, f, false);
        fn(prefix + "w_out", layer.w_out, f, h, false);
    }
    fn("final_norm", w.final_norm, std::size_t{1}, h, true);
    fn("lm_head", w.lm_head, h, std::size_t{w.config.vocab_size}, false);
}

std::span<const float> as_span(const Matrix& m) { return m.data(); }
std::span<const float> as_span(const std::vector<float>& v) { return v; }
std::span<float> as_mut_span(Matrix& m) { return m.data(); }
std::span<float> as_mut_span(std::vector<float>& v) { return v; }

void resize_tensor(Matrix& m, std::size_t rows, std::size_t cols) { m = Matrix(rows, cols); }
void resize_tensor(std::vector<float>& v, std::size_t, std::size_t cols) { v.assign(cols, 0.0f); }

ModelWeights allocate(const ModelConfig& config) {
    ModelWeights w;
    w.config = config;
    w.layers.resize(config.num_layers);
    for_each_tensor(w, [](const std::string&, auto& tensor, std::size_t rows, std::size_t cols,
                          bool) { resize_tensor(tensor, rows, cols); });
    return w;
}

Matrix rms_norm_rows(const Matrix& x, std::span<const float> gain) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto normed = rms_norm(x.row(i), gain, kNormEpsilon);
        std::copy(normed.begin(), normed.end(), out.row(i).begin());
    }
    return out;
}

void add_in_place(Matrix& x, const Matrix& delta) {
    auto dst = x.data();
    const auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<char>((v >> shift) & 0xFF));
    }
}

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw ValidationError("weight container truncated at byte " + std::to_string(pos_));
        }
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint32_t u32() {
        const auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
        }
        return v;
    }
    std::uint16_t u16() {
        const auto b = take(2);
        return static_cast<std::uint16_t>(static_cast<unsigned char>(b[0]) |
                                          (static_cast<unsigned char>(b[1]) << 8));
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ValidationError("invalid model config: " + what);
        }
    };
    require(num_layers >= 6, "num_layers must be >= 6 (withdrawal search starts at layer 5)");
    require(hidden_size >= 1 && num_heads >= 1 && head_dim >= 1 && ffn_factor >= 1 &&
                vocab_size >= 1 && vision_embed_dim >= 1 && max_position >= 1,
            "all counts must be >= 1");
    require(static_cast<std::uint64_t>(num_heads) * head_dim == hidden_size,
            "hidden_size (" + std::to_string(hidden_size) + ") != num_heads x head_dim (" +
                std::to_string(num_heads) + " x " + std::to_string(head_dim) + ")");
    require(head_dim % 2 == 0, "head_dim must be even for rotary encoding");
}

std::string ModelConfig::to_canonical_text() const {
    json j;
    j["num_layers"] = num_layers;
    j["hidden_size"] = hidden_size;
    j["num_heads"] = num_heads;
    j["head_dim"] = head_dim;
    j["ffn_factor"] = ffn_factor;
    j["vocab_size"] = vocab_size;
    j["vision_embed_dim"] = vision_embed_dim;
    j["max_position"] = max_position;
    j["seed"] = seed;
    return j.dump();
}

ModelConfig ModelConfig::parse(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("model config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("model config must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(kConfigFields), std::end(kConfigFields), key) ==
            std::end(kConfigFields)) {
            throw ValidationError("model config: unknown field \"" + key + "\"");
        }
    }
    auto get_u64 = [&](const char* key) -> std::uint64_t {
        if (!j.contains(key)) {
            throw ValidationError(std::string("model config: missing field \"") + key + "\"");
        }
        const auto& v = j.at(key);
        if (!v.is_number_unsigned()) {
            throw ValidationError(std::string("model config: \"") + key +
                                  "\" must be a non-negative integer");
        }
        return v.get<std::uint64_t>();
    };
    auto get_u32 = [&](const char* key) -> std::uint32_t {
        const auto v = get_u64(key);
        if (v > std::numeric_limits<std::uint32_t>::max()) {
            throw ValidationError(std::string("model config: \"") + key + "\" too large");
        }
        return static_cast<std::uint32_t>(v);
    };
    ModelConfig c;
    c.num_layers = get_u32("num_layers");
    c.hidden_size = get_u32("hidden_size");
    c.num_heads = get_u32("num_heads");
    c.head_dim = get_u32("head_dim");
    c.ffn_factor = get_u32("ffn_factor");
    c.vocab_size = get_u32("vocab_size");
    c.vision_embed_dim = get_u32("vision_embed_dim");
    c.max_position = get_u32("max_position");
    c.seed = get_u64("seed");
    c.validate();
    return c;
}

std::vector<TensorView> tensor_manifest(const ModelWeights& weights) {
    std::vector<TensorView> out;
    for_each_tensor(weights, [&](const std::string& name, const auto& tensor, std::size_t rows,
                                 std::size_t cols, bool) {
        out.push_back({name, rows, cols, as_span(tensor)});
    });
    return out;
}

ModelWeights init_model(const ModelConfig& config) {
    config.validate();
    ModelWeights w = allocate(config);
    DeterministicRng rng(config.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_size));
    for_each_tensor(w, [&](const std::string&, auto& tensor, std::size_t, std::size_t, bool gain) {
        for (float& x : as_mut_span(tensor)) {
            x = gain ? 1.0f : static_cast<float>(rng.uniform(-scale, scale));
        }
    });
    return w;
}

std::size_t LayerCache::count(SegmentType segment) const {
    return static_cast<std::size_t>(std::count(segments.begin(), segments.end(), segment));
}

void LayerCache::remove_segment(SegmentType segment) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i] != segment) {
            keep.push_back(i);
        }
    }
    if (keep.size() == segments.size()) {
        return;
    }
    keys = keys.select_rows(keep);
    values = values.select_rows(keep);
    std::vector<PositionId> kept_positions;
    std::vector<SegmentType> kept_segments;
    for (std::size_t i : keep) {
        kept_positions.push_back(positions[i]);
        kept_segments.push_back(segments[i]);
    }
    positions = std::move(kept_positions);
    segments = std::move(kept_segments);
}

KVCache::KVCache(std::size_t num_layers, std::size_t hidden_size) : layers_(num_layers) {
    for (auto& layer : layers_) {
        layer.keys = Matrix(0, hidden_size);
        layer.values = Matrix(0, hidden_size);
    }
}

LayerCache& KVCache::layer(std::size_t index) {
    if (index < 1 || index > layers_.size()) {
        throw RangeError("cache layer " + std::to_string(index) + " out of range");
    }
    return layers_[index - 1];
}

const LayerCache& KVCache::layer(std::size_t index) const {
    if (index < 1 || index > layers_.size()) {
        throw RangeError("cache layer " + std::to_string(index) + " out of range");
    }
    return layers_[index - 1];
}

std::size_t KVCache::total_rows() const {
    std::size_t total = 0;
    for (const auto& layer : layers_) {
        total += layer.rows();
    }
    return total;
}

void apply_rotary(std::span<float> head_vector, PositionId position) {
    const std::size_t d = head_vector.size();
    for (std::size_t i = 0; i + 1 < d; i += 2) {
        const double inv_freq = std::pow(kRopeBase, -static_cast<double>(i) / static_cast<double>(d));
        const double angle = static_cast<double>(position) * inv_freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = head_vector[i];
        const double x1 = head_vector[i + 1];
        head_vector[i] = static_cast<float>(x0 * c - x1 * s);
        head_vector[i + 1] = static_cast<float>(x0 * s + x1 * c);
    }
}

Matrix causal_attention(const ModelConfig& config, const LayerWeights& layer, const Matrix& inputs,
                        LayerCache& cache, std::span<const PositionId> positions,
                        std::span<const SegmentType> segments, AttentionCapture* capture,
                        OpCounter* counter) {
    const std::size_t n = inputs.rows();
    const std::size_t h = config.hidden_size;
    const std::size_t d = config.head_dim;
    const std::size_t heads = config.num_heads;
    if (inputs.cols() != h || positions.size() != n || segments.size() != n) {
        throw ShapeError("causal_attention: inputs, positions and segments disagree");
    }
    for (PositionId p : positions) {
        if (p >= config.max_position) {
            throw RangeError("position id " + std::to_string(p) + " >= max_position " +
                             std::to_string(config.max_position));
        }
    }

    Matrix q = matmul(inputs, layer.wq, counter, MacTerm::Projection);
    Matrix k = matmul(inputs, layer.wk, counter, MacTerm::Projection);
    Matrix v = matmul(inputs, layer.wv, counter, MacTerm::Projection);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t head = 0; head < heads; ++head) {
            apply_rotary(q.row(i).subspan(head * d, d), positions[i]);
            apply_rotary(k.row(i).subspan(head * d, d), positions[i]);
        }
    }

    const std::size_t past = cache.rows();
    for (std::size_t i = 0; i < n; ++i) {
        cache.keys.append_row(k.row(i));
        cache.values.append_row(v.row(i));
        cache.positions.push_back(positions[i]);
        cache.segments.push_back(segments[i]);
    }
    const std::size_t total = cache.rows();

    if (capture != nullptr) {
        capture->last_row_per_head.assign(heads, {});
        capture->segments = cache.segments;
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    constexpr float kMasked = -std::numeric_limits<float>::infinity();
    Matrix context(n, h);
    std::vector<float> scores(total);
    std::vector<double> acc(d);
    for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t off = head * d;
        for (std::size_t i = 0; i < n; ++i) {
            const auto qi = q.row(i).subspan(off, d);
            const std::size_t visible = past + i;  // last visible row, inclusive
            for (std::size_t j = 0; j < total; ++j) {
                if (j > visible) {
                    scores[j] = kMasked;
                    continue;
                }
                const auto kj = cache.keys.row(j).subspan(off, d);
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += static_cast<double>(qi[c]) * kj[c];
                }
                scores[j] = static_cast<float>(dot * scale);
            }
            const auto weights = softmax_row(scores);
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < total; ++j) {
                const double a = weights[j];
                const auto vj = cache.values.row(j).subspan(off, d);
                for (std::size_t c = 0; c < d; ++c) {
                    acc[c] += a * vj[c];
                }
            }
            auto out = context.row(i).subspan(off, d);
            for (std::size_t c = 0; c < d; ++c) {
                out[c] = static_cast<float>(acc[c]);
            }
            if (capture != nullptr && i + 1 == n) {
                capture->last_row_per_head[head] = weights;
            }
        }
    }
    if (counter != nullptr) {
        // Every (query, key) pair is scored, masked or not.
        const std::uint64_t pairs = static_cast<std::uint64_t>(n) * total * h;
        counter->add(MacTerm::AttentionScore, pairs);
        counter->add(MacTerm::AttentionValue, pairs);
    }
    return matmul(context, layer.wo, counter, MacTerm::Projection);
}

LayerActivations decoder_forward(const ModelWeights& weights, const Matrix& embedded,
                                 std::span<const PositionId> positions,
                                 std::span<const SegmentType> segments, KVCache& cache,
                                 std::size_t first_layer, std::size_t last_layer, bool capture,
                                 OpCounter* counter) {
    const auto& config = weights.config;
    if (first_layer < 1 || first_layer > last_layer || last_layer > config.num_layers) {
        throw ValidationError("decoder_forward: invalid layer range [" +
                              std::to_string(first_layer) + ", " + std::to_string(last_layer) +
                              "] for " + std::to_string(config.num_layers) + " layers");
    }
    if (embedded.cols() != config.hidden_size) {
        throw ShapeError("decoder_forward: embedded width " + std::to_string(embedded.cols()) +
                         " != hidden size " + std::to_string(config.hidden_size));
    }
    if (cache.num_layers() != config.num_layers) {
        throw ShapeError("decoder_forward: cache has " + std::to_string(cache.num_layers()) +
                         " layers, model has " + std::to_string(config.num_layers));
    }

    LayerActivations act;
    act.hidden = embedded;
    for (std::size_t l = first_layer; l <= last_layer; ++l) {
        const LayerWeights& lw = weights.layers[l - 1];
        AttentionCapture cap;
        cap.layer = l;
        const Matrix attn_in = rms_norm_rows(act.hidden, lw.attn_norm);
        const Matrix attn = causal_attention(config, lw, attn_in, cache.layer(l), positions,
                                             segments, capture ? &cap : nullptr, counter);
        add_in_place(act.hidden, attn);

        const Matrix ffn_in = rms_norm_rows(act.hidden, lw.ffn_norm);
        Matrix up = matmul(ffn_in, lw.w_in, counter, MacTerm::FeedForward);
        const Matrix gate = matmul(ffn_in, lw.w_gate, counter, MacTerm::FeedForward);
        auto up_data = up.data();
        const auto gate_data = gate.data();
        for (std::size_t i = 0; i < up_data.size(); ++i) {
            const double g = gate_data[i];
            up_data[i] = static_cast<float>(g / (1.0 + std::exp(-g)) * up_data[i]);
        }
        add_in_place(act.hidden, matmul(up, lw.w_out, counter, MacTerm::FeedForward));
        if (capture) {
            act.captures.push_back(std::move(cap));
        }
    }
    return act;
}

Prediction predict_next(const ModelWeights& weights, std::span<const float> final_hidden,
                        OpCounter* counter) {
    if (final_hidden.size() != weights.config.hidden_size) {
        throw ShapeError("predict_next: hidden length " + std::to_string(final_hidden.size()) +
                         " != " + std::to_string(weights.config.hidden_size));
    }
    const auto normed = rms_norm(final_hidden, weights.final_norm, kNormEpsilon);
    const Matrix row(1, normed.size(), normed);
    Matrix logits = matmul(row, weights.lm_head, counter, MacTerm::LmHead);
    Prediction p;
    p.logits.assign(logits.data().begin(), logits.data().end());
    p.token = static_cast<TokenId>(argmax(p.logits));
    return p;
}

TokenId sample_token(std::span<const float> logits, float temperature, DeterministicRng& rng) {
    if (temperature <= 0.0f) {
        return static_cast<TokenId>(argmax(logits));
    }
    std::vector<float> scaled(logits.begin(), logits.end());
    for (float& x : scaled) {
        x /= temperature;
    }
    const auto probs = softmax_row(scaled);
    const double u = rng.next_unit();
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cumulative += probs[i];
        if (u < cumulative) {
            return static_cast<TokenId>(i);
        }
    }
    return static_cast<TokenId>(probs.size() - 1);
}

std::string serialize_weights(const ModelWeights& weights) {
    const std::string config_text = weights.config.to_canonical_text();
    std::string out;
    out.append(kMagic);
    put_u16(out, kWeightFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(config_text.size()));
    out.append(config_text);
    for (const auto& t : tensor_manifest(weights)) {
        if (t.data.size() != t.rows * t.cols) {
            throw ShapeError("tensor " + t.name + " does not match its declared shape");
        }
        for (float x : t.data) {
            put_u32(out, std::bit_cast<std::uint32_t>(x));
        }
    }
    return out;
}

ModelWeights deserialize_weights(std::string_view bytes) {
    ByteReader reader(bytes);
    if (reader.take(kMagic.size()) != kMagic) {
        throw ValidationError("weight container: bad magic");
    }
    const auto version = reader.u16();
    if (version != kWeightFormatVersion) {
        throw ValidationError("weight container: unsupported version " + std::to_string(version));
    }
    const auto config_len = reader.u32();
    const ModelConfig config = ModelConfig::parse(reader.take(config_len));
    ModelWeights w = allocate(config);
    for_each_tensor(w, [&](const std::string& name, auto& tensor, std::size_t, std::size_t, bool) {
        for (float& x : as_mut_span(tensor)) {
            x = std::bit_cast<float>(reader.u32());
            if (!std::isfinite(x)) {
                throw ValidationError("weight container: non-finite value in " + name);
            }
        }
    });
    if (!reader.done()) {
        throw ValidationError("weight container: trailing bytes after last tensor");
    }
    return w;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    write_file(path, serialize_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path) {
    return deserialize_weights(read_file(path));
}

}  // namespace vtw
