#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/rng.hpp"
#include "logpeft/tensor.hpp"

namespace logpeft {

inline constexpr double kInitStd = 0.02;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskedScore = -1e30;

/// Attention projection kinds, named as they appear on the command line.
enum class AttnProj { Query, Key, Value };

inline std::string_view to_string(AttnProj p) {
    switch (p) {
        case AttnProj::Query: return "q_proj";
        case AttnProj::Key: return "k_proj";
        case AttnProj::Value: return "v_proj";
    }
    return "?";
}

inline AttnProj attn_proj_from_string(std::string_view s) {
    if (s == "q_proj") return AttnProj::Query;
    if (s == "k_proj") return AttnProj::Key;
    if (s == "v_proj") return AttnProj::Value;
    throw UnknownTarget("unknown target module '" + std::string(s) +
                        "' (expected q_proj, k_proj or v_proj)");
}

struct TransformerConfig {
    int vocab_size = 65;
    int dim = 64;
    int heads = 4;
    int layers = 2;
    int max_len = 128;
    int ffn_dim = 0;  // 0 means 4 * dim
    int pad_id = 64;

    int head_dim() const { return dim / heads; }
    int ffn_width() const { return ffn_dim > 0 ? ffn_dim : 4 * dim; }

    void validate() const {
        if (vocab_size < 1 || dim < 1 || heads < 1 || layers < 0 || max_len < 1)
            throw ArgumentError("transformer config fields must be positive");
        if (dim % heads != 0)
            throw ArgumentError("model dim " + std::to_string(dim) +
                                " is not divisible by head count " + std::to_string(heads));
        if (pad_id < 0 || pad_id >= vocab_size)
            throw ArgumentError("pad_id must lie inside the vocabulary");
    }
};

struct LayerWeights {
    Tensor ln1_gain, ln1_bias;
    std::vector<Tensor> q, k, v;  // per head, [dim x head_dim], no bias
    Tensor out_w, out_b;          // [dim x dim], [dim]
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1;  // [dim x ffn], [ffn]
    Tensor ffn_w2, ffn_b2;  // [ffn x dim], [dim]
};

/// Replaces the plain x*W projection at one attention site; this is the seam
/// the LoRA wrapper plugs into.
using ProjectionHook =
    std::function<Tensor(int layer, AttnProj proj, int head, const Tensor& x, const Tensor& w)>;

inline Tensor base_projection(int, AttnProj, int, const Tensor& x, const Tensor& w) {
    return matmul(x, w);
}

/// Additive attention mask: 0 where position j is visible from position i,
/// a large negative constant where it is not (future positions under causal
/// masking, and pad columns).
inline Tensor build_attention_mask(int t, bool causal, const std::vector<int>& pad_mask) {
    if (!pad_mask.empty() && static_cast<int>(pad_mask.size()) != t)
        throw LengthMismatch("attention mask length must equal sequence length");
    Tensor m = Tensor::zeros({t, t});
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            const bool hidden = (causal && j > i) || (!pad_mask.empty() && pad_mask[static_cast<std::size_t>(j)] == 0);
            if (hidden) m.at(i, j) = kMaskedScore;
        }
    return m;
}

/// Multi-head self-attention per layer: per head Q = H Wq, K = H Wk,
/// V = H Wv, scores = Q K^T / sqrt(d_k) with masked positions forced to -inf
/// before the softmax, heads concatenated and output-projected.
/// `attn_probs_out`, when given, receives each head's post-softmax matrix.
inline Tensor self_attention(const Tensor& h, const LayerWeights& lw,
                             const TransformerConfig& cfg, bool causal,
                             const std::vector<int>& pad_mask,
                             const ProjectionHook& hook = base_projection, int layer_index = 0,
                             std::vector<Tensor>* attn_probs_out = nullptr) {
    const int t = h.rows();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    Tensor mask = build_attention_mask(t, causal, pad_mask);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg.heads));
    for (int head = 0; head < cfg.heads; ++head) {
        Tensor q = hook(layer_index, AttnProj::Query, head, h, lw.q[static_cast<std::size_t>(head)]);
        Tensor k = hook(layer_index, AttnProj::Key, head, h, lw.k[static_cast<std::size_t>(head)]);
        Tensor v = hook(layer_index, AttnProj::Value, head, h, lw.v[static_cast<std::size_t>(head)]);
        Tensor scores = add(scale(matmul_nt(q, k), inv_sqrt_dk), mask);
        Tensor probs = rowwise_softmax(scores);
        if (attn_probs_out) attn_probs_out->push_back(probs);
        heads.push_back(matmul(probs, v));
    }
    Tensor concat = cfg.heads == 1 ? heads.front() : concat_cols(heads);
    return add_row_bias(matmul(concat, lw.out_w), lw.out_b);
}

/// Pre-norm residual block: H + Attn(LN(H)), then + FFN(LN(.)) with a ReLU
/// feed-forward of width ffn_dim.
inline Tensor decoder_block(const Tensor& h, const LayerWeights& lw,
                            const TransformerConfig& cfg, bool causal,
                            const std::vector<int>& pad_mask,
                            const ProjectionHook& hook = base_projection, int layer_index = 0) {
    Tensor attn_in = layer_norm(h, lw.ln1_gain, lw.ln1_bias, kLayerNormEps);
    Tensor h1 = add(h, self_attention(attn_in, lw, cfg, causal, pad_mask, hook, layer_index));
    Tensor ffn_in = layer_norm(h1, lw.ln2_gain, lw.ln2_bias, kLayerNormEps);
    Tensor hidden = relu(add_row_bias(matmul(ffn_in, lw.ffn_w1), lw.ffn_b1));
    Tensor ffn_out = add_row_bias(matmul(hidden, lw.ffn_w2), lw.ffn_b2);
    return add(h1, ffn_out);
}

/// Toy decoder-only transformer over a log-key vocabulary with a two-class
/// pooled classification head.
class TransformerModel {
public:
    TransformerModel() = default;

    TransformerModel(TransformerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        auto rng = named_stream(seed, "model_init");
        token_embedding = Tensor::randn({cfg_.vocab_size, cfg_.dim}, kInitStd, rng, true);
        pos_embedding = Tensor::randn({cfg_.max_len, cfg_.dim}, kInitStd, rng, true);
        blocks.resize(static_cast<std::size_t>(cfg_.layers));
        for (LayerWeights& lw : blocks) {
            lw.ln1_gain = Tensor::filled({cfg_.dim}, 1.0, true);
            lw.ln1_bias = Tensor::zeros({cfg_.dim}, true);
            for (int head = 0; head < cfg_.heads; ++head) {
                lw.q.push_back(Tensor::randn({cfg_.dim, cfg_.head_dim()}, kInitStd, rng, true));
                lw.k.push_back(Tensor::randn({cfg_.dim, cfg_.head_dim()}, kInitStd, rng, true));
                lw.v.push_back(Tensor::randn({cfg_.dim, cfg_.head_dim()}, kInitStd, rng, true));
            }
            lw.out_w = Tensor::randn({cfg_.dim, cfg_.dim}, kInitStd, rng, true);
            lw.out_b = Tensor::zeros({cfg_.dim}, true);
            lw.ln2_gain = Tensor::filled({cfg_.dim}, 1.0, true);
            lw.ln2_bias = Tensor::zeros({cfg_.dim}, true);
            lw.ffn_w1 = Tensor::randn({cfg_.dim, cfg_.ffn_width()}, kInitStd, rng, true);
            lw.ffn_b1 = Tensor::zeros({cfg_.ffn_width()}, true);
            lw.ffn_w2 = Tensor::randn({cfg_.ffn_width(), cfg_.dim}, kInitStd, rng, true);
            lw.ffn_b2 = Tensor::zeros({cfg_.dim}, true);
        }
        cls_w = Tensor::randn({2, cfg_.dim}, kInitStd, rng, true);
        cls_b = Tensor::zeros({2}, true);
    }

    const TransformerConfig& config() const { return cfg_; }
    TransformerConfig& config() { return cfg_; }

    /// Row t = token_embedding[ids[t]] + pos_embedding[t].
    Tensor encode_tokens(const std::vector<int>& ids) const {
        if (ids.empty()) throw EmptyInput("encode_tokens: no ids");
        if (static_cast<int>(ids.size()) > cfg_.max_len)
            throw SequenceTooLong("sequence of " + std::to_string(ids.size()) +
                                  " tokens exceeds max_len " + std::to_string(cfg_.max_len));
        return embed(token_embedding, pos_embedding, ids);
    }

    /// Full decoder stack: token+position encoding followed by the blocks,
    /// with causal and pad masking. Returns the final hidden states [T x d].
    Tensor forward(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                   const ProjectionHook& hook = base_projection) const {
        if (!attention_mask.empty() && attention_mask.size() != ids.size())
            throw LengthMismatch("attention mask length must equal id count");
        Tensor h = encode_tokens(ids);
        for (std::size_t l = 0; l < blocks.size(); ++l)
            h = decoder_block(h, blocks[l], cfg_, /*causal=*/true, attention_mask, hook,
                              static_cast<int>(l));
        return h;
    }

    /// Masked mean pooling over the final hidden states, then the affine
    /// classifier to exactly two logits.
    Tensor classify(const Tensor& hidden, const std::vector<int>& attention_mask) const {
        std::vector<int> mask = attention_mask;
        if (mask.empty()) mask.assign(static_cast<std::size_t>(hidden.rows()), 1);
        Tensor pooled = masked_mean_pool(hidden, mask);
        return linear(cls_w, pooled, cls_b);
    }

    Tensor logits(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                  const ProjectionHook& hook = base_projection) const {
        return classify(forward(ids, attention_mask, hook), attention_mask);
    }

    /// Canonical (name, tensor) listing; backbone parameters plus classifier.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embed.tokens", token_embedding);
        out.emplace_back("embed.positions", pos_embedding);
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            const LayerWeights& lw = blocks[l];
            const std::string base = "layers." + layer_tag(l) + ".";
            out.emplace_back(base + "ln1.gain", lw.ln1_gain);
            out.emplace_back(base + "ln1.bias", lw.ln1_bias);
            for (int head = 0; head < cfg_.heads; ++head) {
                const std::string h = std::to_string(head);
                out.emplace_back(base + "attn.q." + h + ".weight", lw.q[static_cast<std::size_t>(head)]);
                out.emplace_back(base + "attn.k." + h + ".weight", lw.k[static_cast<std::size_t>(head)]);
                out.emplace_back(base + "attn.v." + h + ".weight", lw.v[static_cast<std::size_t>(head)]);
            }
            out.emplace_back(base + "attn.out.weight", lw.out_w);
            out.emplace_back(base + "attn.out.bias", lw.out_b);
            out.emplace_back(base + "ln2.gain", lw.ln2_gain);
            out.emplace_back(base + "ln2.bias", lw.ln2_bias);
            out.emplace_back(base + "ffn.w1", lw.ffn_w1);
            out.emplace_back(base + "ffn.b1", lw.ffn_b1);
            out.emplace_back(base + "ffn.w2", lw.ffn_w2);
            out.emplace_back(base + "ffn.b2", lw.ffn_b2);
        }
        out.emplace_back("cls.weight", cls_w);
        out.emplace_back("cls.bias", cls_b);
        return out;
    }

    Tensor& projection(int layer, AttnProj proj, int head) {
        LayerWeights& lw = blocks[static_cast<std::size_t>(layer)];
        auto& vec = proj == AttnProj::Query ? lw.q : proj == AttnProj::Key ? lw.k : lw.v;
        return vec[static_cast<std::size_t>(head)];
    }
    const Tensor& projection(int layer, AttnProj proj, int head) const {
        const LayerWeights& lw = blocks[static_cast<std::size_t>(layer)];
        const auto& vec = proj == AttnProj::Query ? lw.q : proj == AttnProj::Key ? lw.k : lw.v;
        return vec[static_cast<std::size_t>(head)];
    }

    static std::string layer_tag(std::size_t l) {
        std::string s = std::to_string(l);
        return s.size() < 2 ? "0" + s : s;
    }

    Tensor token_embedding, pos_embedding;
    std::vector<LayerWeights> blocks;
    Tensor cls_w, cls_b;

private:
    TransformerConfig cfg_;
};

/// Standalone forms of the model operations, mirroring the member functions.
inline Tensor encode_tokens(const TransformerModel& m, const std::vector<int>& ids) {
    return m.encode_tokens(ids);
}

inline Tensor model_forward(const TransformerModel& m, const std::vector<int>& ids,
                            const std::vector<int>& attention_mask,
                            const ProjectionHook& hook = base_projection) {
    return m.forward(ids, attention_mask, hook);
}

inline Tensor classify(const TransformerModel& m, const Tensor& hidden,
                       const std::vector<int>& attention_mask) {
    return m.classify(hidden, attention_mask);
}

}  // namespace logpeft
