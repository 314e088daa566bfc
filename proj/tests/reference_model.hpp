// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

// Cache-free reference decoder used as an oracle by the tests.
//
// Every layer is recomputed from scratch over the whole visible sequence with a dense
// score matrix and an explicit -inf mask. Values are rounded to float at the same
// storage points as the runtime (matmul outputs, norms, rotary, scores, softmax, FFN
// activations), so agreement is expected to be far tighter than the tolerances the
// tests assert.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "vtw/model.hpp"
#include "vtw/sequence.hpp"

namespace vtw::reference {

using Row = std::vector<float>;
using Rows = std::vector<Row>;

inline Row vec_mat(const Row& x, const Matrix& w) {
    Row out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            acc += static_cast<double>(x[k]) * static_cast<double>(w(k, j));
        }
        out[j] = static_cast<float>(acc);
    }
    return out;
}

inline Row norm(const Row& x, const std::vector<float>& gain) {
    double sum_sq = 0.0;
    for (float v : x) {
        sum_sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double denom =
        std::sqrt(sum_sq / static_cast<double>(x.size()) + static_cast<double>(kNormEpsilon));
    Row out(x.size(), 0.0f);
    if (denom == 0.0) {
        return out;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(x[i]) * (1.0 / denom) * gain[i]);
    }
    return out;
}

inline void rotate(float* v, std::size_t d, PositionId pos) {
    for (std::size_t pair = 0; pair < d / 2; ++pair) {
        const double theta =
            static_cast<double>(pos) * std::pow(10000.0, -2.0 * static_cast<double>(pair) / d);
        const double a = v[2 * pair];
        const double b = v[2 * pair + 1];
        v[2 * pair] = static_cast<float>(a * std::cos(theta) - b * std::sin(theta));
        v[2 * pair + 1] = static_cast<float>(a * std::sin(theta) + b * std::cos(theta));
    }
}

inline Row softmax(const Row& x) {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : x) {
        m = std::max(m, static_cast<double>(v));
    }
    std::vector<double> e(x.size());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::isinf(x[i]) ? 0.0 : std::exp(static_cast<double>(x[i]) - m);
        z += e[i];
    }
    Row out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>(e[i] / z);
    }
    return out;
}

/// Per layer, per head: the full n x n attention matrix of the last call.
using AttentionMaps = std::vector<std::vector<Rows>>;

/// Layers [first, last] over `hidden` with dense causal attention.
inline Rows run_layers(const ModelWeights& w, Rows hidden, const std::vector<PositionId>& pos,
                       std::size_t first, std::size_t last, AttentionMaps* maps = nullptr) {
    const auto& c = w.config;
    const std::size_t n = hidden.size();
    const std::size_t d = c.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = first; l <= last; ++l) {
        const LayerWeights& lw = w.layers[l - 1];
        Rows q(n), k(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Row x = norm(hidden[i], lw.attn_norm);
            q[i] = vec_mat(x, lw.wq);
            k[i] = vec_mat(x, lw.wk);
            v[i] = vec_mat(x, lw.wv);
            for (std::size_t head = 0; head < c.num_heads; ++head) {
                rotate(q[i].data() + head * d, d, pos[i]);
                rotate(k[i].data() + head * d, d, pos[i]);
            }
        }
        std::vector<Rows> layer_maps;
        Rows ctx(n, Row(c.hidden_size));
        for (std::size_t head = 0; head < c.num_heads; ++head) {
            Rows full(n);
            for (std::size_t i = 0; i < n; ++i) {
                Row scores(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double dot = 0.0;
                    for (std::size_t t = 0; t < d; ++t) {
                        dot += static_cast<double>(q[i][head * d + t]) * k[j][head * d + t];
                    }
                    scores[j] = j > i ? -std::numeric_limits<float>::infinity()
                                      : static_cast<float>(dot * scale);
                }
                full[i] = softmax(scores);
                for (std::size_t t = 0; t < d; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        acc += static_cast<double>(full[i][j]) * v[j][head * d + t];
                    }
                    ctx[i][head * d + t] = static_cast<float>(acc);
                }
            }
            layer_maps.push_back(std::move(full));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const Row attn = vec_mat(ctx[i], lw.wo);
            for (std::size_t t = 0; t < hidden[i].size(); ++t) {
                hidden[i][t] = hidden[i][t] + attn[t];
            }
            const Row y = norm(hidden[i], lw.ffn_norm);
            Row up = vec_mat(y, lw.w_in);
            const Row gate = vec_mat(y, lw.w_gate);
            for (std::size_t t = 0; t < up.size(); ++t) {
                const double g = gate[t];
                up[t] = static_cast<float>(g / (1.0 + std::exp(-g)) * up[t]);
            }
            const Row down = vec_mat(up, lw.w_out);
            for (std::size_t t = 0; t < hidden[i].size(); ++t) {
                hidden[i][t] = hidden[i][t] + down[t];
            }
        }
        if (maps != nullptr) {
            maps->push_back(std::move(layer_maps));
        }
    }
    return hidden;
}

inline Row logits(const ModelWeights& w, const Row& last_hidden) {
    return vec_mat(norm(last_hidden, w.final_norm), w.lm_head);
}

inline std::size_t first_max(const Row& x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (x[i] > x[best]) {
            best = i;
        }
    }
    return best;
}

/// A flat token stream: rows already in hidden space.
struct Stream {
    Rows hidden;
    std::vector<PositionId> positions;
    std::vector<SegmentType> segments;
};

inline Stream stream_of(const MultimodalSequence& seq) {
    Stream s;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto r = seq.embeddings().row(i);
        s.hidden.emplace_back(r.begin(), r.end());
        s.positions.push_back(seq.tokens()[i].position);
        s.segments.push_back(seq.tokens()[i].segment);
    }
    return s;
}

/// Forward [1, K-1], drop vision rows, forward [K, N]; final-position logits.
/// K = N + 1 is the plain model. `rearrange` renumbers survivors 0..m-1.
inline Row splice_logits(const ModelWeights& w, const Stream& s, std::size_t k, bool rearrange) {
    const std::size_t n_layers = w.config.num_layers;
    Rows h = s.hidden;
    if (k > 1) {
        h = run_layers(w, h, s.positions, 1, std::min(k - 1, n_layers));
    }
    if (k <= n_layers) {
        Rows kept;
        std::vector<PositionId> pos;
        for (std::size_t i = 0; i < h.size(); ++i) {
            if (s.segments[i] != SegmentType::Vision) {
                kept.push_back(h[i]);
                pos.push_back(rearrange ? static_cast<PositionId>(pos.size()) : s.positions[i]);
            }
        }
        h = run_layers(w, kept, pos, k, n_layers);
    }
    return logits(w, h.back());
}

struct Generation {
    std::vector<TokenId> tokens;
    Rows step_logits;  // logits that produced each token
};

/// Greedy generation with every step recomputed from the raw prompt plus generated ids.
inline Generation generate(const ModelWeights& w, const MultimodalSequence& prompt, std::size_t k,
                           bool rearrange, std::size_t max_new, TokenId stop_id) {
    Generation g;
    Stream s = stream_of(prompt);
    PositionId next = s.positions.empty() ? 0 : s.positions.back() + 1;
    while (g.tokens.size() < max_new) {
        Row l = splice_logits(w, s, k, rearrange);
        const auto tok = static_cast<TokenId>(first_max(l));
        g.tokens.push_back(tok);
        g.step_logits.push_back(std::move(l));
        if (tok == stop_id) {
            break;
        }
        const auto e = w.token_embedding.row(tok);
        s.hidden.emplace_back(e.begin(), e.end());
        s.positions.push_back(next++);
        s.segments.push_back(SegmentType::Output);
    }
    return g;
}

/// KL(p || q) of two softmaxed logit vectors by direct summation.
inline double kl_of_logits(const Row& p_logits, const Row& q_logits) {
    const Row p = softmax(p_logits);
    const Row q = softmax(q_logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0f) {
            const double qi = std::max(static_cast<double>(q[i]), 1e-12);
            kl += static_cast<double>(p[i]) * std::log(static_cast<double>(p[i]) / qi);
        }
    }
    return std::max(kl, 0.0);
}

}  // namespace vtw::reference
