#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/rng.hpp"
#include "logpeft/tensor.hpp"
#include "logpeft/transformer.hpp"

namespace logpeft {

struct LoraConfig {
    int rank = 2;
    double alpha = 16.0;
    double dropout = 0.05;
    double init_std = 0.02;
    std::vector<AttnProj> targets = {AttnProj::Key};
    std::vector<int> target_layers;  // 1-based; empty means every layer
    bool alpha_over_rank = false;    // use the alpha/r convention instead of plain alpha

    /// Multiplier on the low-rank product B*A.
    double scaling() const { return alpha_over_rank ? alpha / rank : alpha; }

    bool targets_proj(AttnProj p) const {
        return std::find(targets.begin(), targets.end(), p) != targets.end();
    }

    void validate(const TransformerConfig& model_cfg) const {
        if (rank < 1) throw ArgumentError("lora rank must be positive");
        if (rank > std::min(model_cfg.dim, model_cfg.head_dim()))
            throw ArgumentError("lora rank " + std::to_string(rank) +
                                " exceeds min(dim, head_dim)");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ArgumentError("lora dropout must be in [0,1)");
        if (init_std <= 0.0) throw ArgumentError("lora init stddev must be positive");
        if (targets.empty()) throw ArgumentError("lora target set must be non-empty");
        for (int l : target_layers)
            if (l < 1 || l > model_cfg.layers)
                throw ArgumentError("lora target layer " + std::to_string(l) +
                                    " outside 1.." + std::to_string(model_cfg.layers));
    }

    /// 0-based layer indices covered by this config.
    std::vector<int> resolved_layers(int total_layers) const {
        std::vector<int> out;
        if (target_layers.empty()) {
            for (int l = 0; l < total_layers; ++l) out.push_back(l);
        } else {
            out.reserve(target_layers.size());
            for (int l : target_layers) out.push_back(l - 1);
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
        }
        return out;
    }
};

/// Trainable factors for one frozen projection W[d_in x d_out]:
/// A[r x d_in] Gaussian at init, B[d_out x r] zero at init, so the adapted
/// output x*W + scale*((x*A^T)*B^T) starts exactly equal to the base.
struct LoraPair {
    Tensor a;
    Tensor b;
};

inline LoraPair lora_init(int d_in, int d_out, const LoraConfig& cfg, std::mt19937_64& rng) {
    if (d_in < 1 || d_out < 1) throw ArgumentError("lora_init: dims must be positive");
    if (cfg.rank > std::min(d_in, d_out))
        throw ArgumentError("lora_init: rank exceeds min(d_in, d_out)");
    LoraPair p;
    p.a = Tensor::randn({cfg.rank, d_in}, cfg.init_std, rng, true);
    p.b = Tensor::zeros({d_out, cfg.rank}, true);
    return p;
}

/// x*W plus the scaled low-rank path. Dropout applies to the low-rank path
/// input only, and only while training; the frozen base path is undisturbed.
inline Tensor lora_forward(const Tensor& x, const Tensor& w, const LoraPair& pair,
                           const LoraConfig& cfg, bool training = false,
                           std::mt19937_64* dropout_rng = nullptr) {
    if (x.ndim() != 2 || x.cols() != w.rows())
        throw ShapeMismatch("lora_forward: input width must match base weight rows");
    Tensor base = matmul(x, w);
    Tensor path_in = x;
    if (training && cfg.dropout > 0.0) {
        if (!dropout_rng) throw ArgumentError("lora_forward: training dropout needs an rng");
        path_in = dropout(x, cfg.dropout, *dropout_rng);
    }
    Tensor low = matmul_nt(matmul_nt(path_in, pair.a), pair.b);
    return add(base, scale(low, cfg.scaling()));
}

/// All adapters for one (layer, projection) site, one factor pair per head.
struct LoraSite {
    int layer = 0;
    AttnProj proj = AttnProj::Key;
    std::vector<LoraPair> heads;
};

/// A frozen backbone with LoRA factors injected into the targeted attention
/// projections. The classifier head stays trainable.
class LoraModel {
public:
    LoraModel() = default;
    LoraModel(TransformerModel base_model, LoraConfig cfg, std::vector<LoraSite> sites)
        : base(std::move(base_model)), cfg_(std::move(cfg)), sites_(std::move(sites)) {}

    const LoraConfig& lora_config() const { return cfg_; }
    const std::vector<LoraSite>& sites() const { return sites_; }
    std::vector<LoraSite>& sites() { return sites_; }
    std::size_t adapter_count() const { return sites_.size(); }

    const LoraSite* site_for(int layer, AttnProj proj) const {
        for (const LoraSite& s : sites_)
            if (s.layer == layer && s.proj == proj) return &s;
        return nullptr;
    }

    ProjectionHook hook(bool training = false, std::mt19937_64* dropout_rng = nullptr) const {
        return [this, training, dropout_rng](int layer, AttnProj proj, int head, const Tensor& x,
                                             const Tensor& w) {
            const LoraSite* site = site_for(layer, proj);
            if (!site) return matmul(x, w);
            return lora_forward(x, w, site->heads[static_cast<std::size_t>(head)], cfg_,
                                training, dropout_rng);
        };
    }

    Tensor forward(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                   bool training = false, std::mt19937_64* dropout_rng = nullptr) const {
        return base.forward(ids, attention_mask, hook(training, dropout_rng));
    }

    Tensor logits(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                  bool training = false, std::mt19937_64* dropout_rng = nullptr) const {
        return base.classify(forward(ids, attention_mask, training, dropout_rng),
                             attention_mask);
    }

    std::vector<std::pair<std::string, Tensor>> named_lora_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (const LoraSite& s : sites_) {
            const std::string stem = "layers." + TransformerModel::layer_tag(
                                                     static_cast<std::size_t>(s.layer)) +
                                     ".attn." + std::string(to_string(s.proj)).substr(0, 1) + ".";
            for (std::size_t h = 0; h < s.heads.size(); ++h) {
                out.emplace_back(stem + std::to_string(h) + ".lora_a", s.heads[h].a);
                out.emplace_back(stem + std::to_string(h) + ".lora_b", s.heads[h].b);
            }
        }
        return out;
    }

    /// LoRA factors plus the classifier: everything the optimizer may touch.
    std::vector<Tensor> trainable_parameters() const {
        std::vector<Tensor> out;
        for (const LoraSite& s : sites_)
            for (const LoraPair& p : s.heads) {
                out.push_back(p.a);
                out.push_back(p.b);
            }
        out.push_back(base.cls_w);
        out.push_back(base.cls_b);
        return out;
    }

    TransformerModel base;

private:
    LoraConfig cfg_;
    std::vector<LoraSite> sites_;
};

/// Wraps every targeted projection in every targeted layer with fresh
/// zero-initialized adapters and freezes the backbone; only the adapters and
/// the classifier head remain trainable. The injected model's outputs equal
/// the base model's until training moves B away from zero.
inline LoraModel inject_lora(const TransformerModel& model, const LoraConfig& cfg,
                             std::uint64_t seed) {
    cfg.validate(model.config());
    for (auto& [name, t] : model.named_parameters())
        if (name != "cls.weight" && name != "cls.bias") t.set_requires_grad(false);

    auto rng = named_stream(seed, "lora_init");
    std::vector<LoraSite> sites;
    const int d = model.config().dim;
    const int dk = model.config().head_dim();
    for (int layer : cfg.resolved_layers(model.config().layers)) {
        for (AttnProj proj : {AttnProj::Query, AttnProj::Key, AttnProj::Value}) {
            if (!cfg.targets_proj(proj)) continue;
            LoraSite site;
            site.layer = layer;
            site.proj = proj;
            for (int head = 0; head < model.config().heads; ++head)
                site.heads.push_back(lora_init(d, dk, cfg, rng));
            sites.push_back(std::move(site));
        }
    }
    return LoraModel(model, cfg, std::move(sites));
}

namespace detail {

inline Tensor clone_tensor(const Tensor& t, bool requires_grad) {
    return Tensor::from(t.shape(), t.values(), requires_grad);
}

}  // namespace detail

/// Materializes W + scale*(B*A)^T for every adapted projection and returns a
/// plain model with no adapters. Inference outputs match the injected model.
inline TransformerModel merge_lora(const LoraModel& peft) {
    TransformerModel merged = peft.base;  // shallow; re-point every tensor below
    merged.token_embedding = detail::clone_tensor(peft.base.token_embedding, true);
    merged.pos_embedding = detail::clone_tensor(peft.base.pos_embedding, true);
    for (std::size_t l = 0; l < merged.blocks.size(); ++l) {
        LayerWeights& lw = merged.blocks[l];
        const LayerWeights& src = peft.base.blocks[l];
        lw.ln1_gain = detail::clone_tensor(src.ln1_gain, true);
        lw.ln1_bias = detail::clone_tensor(src.ln1_bias, true);
        for (std::size_t h = 0; h < lw.q.size(); ++h) {
            lw.q[h] = detail::clone_tensor(src.q[h], true);
            lw.k[h] = detail::clone_tensor(src.k[h], true);
            lw.v[h] = detail::clone_tensor(src.v[h], true);
        }
        lw.out_w = detail::clone_tensor(src.out_w, true);
        lw.out_b = detail::clone_tensor(src.out_b, true);
        lw.ln2_gain = detail::clone_tensor(src.ln2_gain, true);
        lw.ln2_bias = detail::clone_tensor(src.ln2_bias, true);
        lw.ffn_w1 = detail::clone_tensor(src.ffn_w1, true);
        lw.ffn_b1 = detail::clone_tensor(src.ffn_b1, true);
        lw.ffn_w2 = detail::clone_tensor(src.ffn_w2, true);
        lw.ffn_b2 = detail::clone_tensor(src.ffn_b2, true);
    }
    merged.cls_w = detail::clone_tensor(peft.base.cls_w, true);
    merged.cls_b = detail::clone_tensor(peft.base.cls_b, true);

    const double s = peft.lora_config().scaling();
    for (const LoraSite& site : peft.sites()) {
        for (std::size_t h = 0; h < site.heads.size(); ++h) {
            Tensor& w = merged.projection(site.layer, site.proj, static_cast<int>(h));
            const Tensor& a = site.heads[h].a;  // [r x d_in]
            const Tensor& b = site.heads[h].b;  // [d_out x r]
            const int d_in = w.rows(), d_out = w.cols(), r = a.rows();
            for (int i = 0; i < d_in; ++i)
                for (int j = 0; j < d_out; ++j) {
                    double acc = 0.0;
                    for (int q = 0; q < r; ++q) acc += b.at(j, q) * a.at(q, i);
                    w.at(i, j) += s * acc;
                }
        }
    }
    return merged;
}

/// Two trainable ReLU layers of width d plus a two-class classifier, stacked
/// on the frozen backbone's pooled output.
struct AdapterHead {
    Tensor w1, b1;      // [d x d], [d]
    Tensor w2, b2;      // [d x d], [d]
    Tensor cls_w, cls_b;  // [2 x d], [2]

    AdapterHead() = default;

    AdapterHead(int dim, std::uint64_t seed) {
        auto rng = named_stream(seed, "adapter_init");
        w1 = Tensor::randn({dim, dim}, kInitStd, rng, true);
        b1 = Tensor::zeros({dim}, true);
        w2 = Tensor::randn({dim, dim}, kInitStd, rng, true);
        b2 = Tensor::zeros({dim}, true);
        cls_w = Tensor::randn({2, dim}, kInitStd, rng, true);
        cls_b = Tensor::zeros({2}, true);
    }

    /// z1 = ReLU(W1 s + b1); z2 = ReLU(W2 z1 + b2); logits = Wcls z2 + bcls.
    Tensor forward(const Tensor& s) const {
        Tensor z1 = relu(linear(w1, s, b1));
        Tensor z2 = relu(linear(w2, z1, b2));
        return linear(cls_w, z2, cls_b);
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        return {{"adapter.w1", w1},         {"adapter.b1", b1},
                {"adapter.w2", w2},         {"adapter.b2", b2},
                {"adapter.cls.weight", cls_w}, {"adapter.cls.bias", cls_b}};
    }

    std::vector<Tensor> trainable_parameters() const {
        return {w1, b1, w2, b2, cls_w, cls_b};
    }
};

inline Tensor adapter_head_forward(const Tensor& s, const AdapterHead& head) {
    return head.forward(s);
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamReport {
    struct Entry {
        std::string name;
        long count;
        bool trainable;
    };
    long trainable = 0;
    long frozen = 0;
    std::vector<Entry> breakdown;

    long total() const { return trainable + frozen; }
    double trainable_ratio() const {
        return total() == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total());
    }

    void add(const std::string& name, const Tensor& t) {
        const long n = static_cast<long>(t.size());
        (t.requires_grad() ? trainable : frozen) += n;
        breakdown.push_back({name, n, t.requires_grad()});
    }
};

inline ParamReport trainable_parameter_report(const TransformerModel& m) {
    ParamReport r;
    for (auto& [name, t] : m.named_parameters()) r.add(name, t);
    return r;
}

inline ParamReport trainable_parameter_report(const LoraModel& m) {
    ParamReport r;
    for (auto& [name, t] : m.base.named_parameters()) r.add(name, t);
    for (auto& [name, t] : m.named_lora_parameters()) r.add(name, t);
    return r;
}

inline ParamReport trainable_parameter_report(const TransformerModel& backbone,
                                              const AdapterHead& head) {
    ParamReport r;
    for (auto& [name, t] : backbone.named_parameters()) r.add(name, t);
    for (auto& [name, t] : head.named_parameters()) r.add(name, t);
    return r;
}

// ---------------------------------------------------------------------------
// Model bundle: a backbone plus whichever PEFT mechanism is in play
// ---------------------------------------------------------------------------

enum class PeftMethod { Lora, Adapter };

inline std::string_view to_string(PeftMethod m) {
    return m == PeftMethod::Lora ? "lora" : "adapter";
}

inline PeftMethod peft_method_from_string(std::string_view s) {
    if (s == "lora") return PeftMethod::Lora;
    if (s == "adapter") return PeftMethod::Adapter;
    throw ArgumentError("unknown method '" + std::string(s) + "' (expected lora or adapter)");
}

/// Everything a training or evaluation run needs to produce logits for a
/// window, regardless of which PEFT mechanism is active.
struct ModelBundle {
    PeftMethod method = PeftMethod::Lora;
    TransformerModel backbone;
    std::optional<LoraModel> lora;
    std::optional<AdapterHead> head;

    static ModelBundle make_lora(const TransformerConfig& mc, const LoraConfig& lc,
                                 std::uint64_t seed) {
        ModelBundle b;
        b.method = PeftMethod::Lora;
        b.backbone = TransformerModel(mc, seed);
        b.lora = inject_lora(b.backbone, lc, seed);
        return b;
    }

    static ModelBundle make_adapter(const TransformerConfig& mc, std::uint64_t seed) {
        ModelBundle b;
        b.method = PeftMethod::Adapter;
        b.backbone = TransformerModel(mc, seed);
        for (auto& [name, t] : b.backbone.named_parameters()) t.set_requires_grad(false);
        b.head = AdapterHead(mc.dim, seed);
        return b;
    }

    Tensor logits(const std::vector<int>& ids, const std::vector<int>& mask,
                  bool training = false, std::mt19937_64* dropout_rng = nullptr) const {
        if (method == PeftMethod::Lora)
            return lora->logits(ids, mask, training, dropout_rng);
        Tensor pooled = masked_mean_pool(backbone.forward(ids, mask), mask);
        return head->forward(pooled);
    }

    /// Pooled frozen-backbone features; the adapter path caches these because
    /// the encoder never changes during training.
    std::vector<double> pooled_features(const std::vector<int>& ids,
                                        const std::vector<int>& mask) const {
        Tensor pooled = masked_mean_pool(backbone.forward(ids, mask), mask);
        return pooled.values();
    }

    Tensor logits_from_features(const std::vector<double>& features) const {
        return head->forward(
            Tensor::from({static_cast<int>(features.size())}, features));
    }

    std::vector<Tensor> trainable_parameters() const {
        if (method == PeftMethod::Lora) return lora->trainable_parameters();
        return head->trainable_parameters();
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out = backbone.named_parameters();
        if (method == PeftMethod::Lora) {
            auto extra = lora->named_lora_parameters();
            out.insert(out.end(), extra.begin(), extra.end());
        } else if (head) {
            auto extra = head->named_parameters();
            out.insert(out.end(), extra.begin(), extra.end());
        }
        return out;
    }

    ParamReport parameter_report() const {
        if (method == PeftMethod::Lora) return trainable_parameter_report(*lora);
        return trainable_parameter_report(backbone, *head);
    }
};

}  // namespace logpeft
