#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/metrics.hpp"
#include "logpeft/peft.hpp"
#include "logpeft/rng.hpp"
#include "logpeft/sequencer.hpp"
#include "logpeft/tensor.hpp"

namespace logpeft {

struct TrainConfig {
    PeftMethod method = PeftMethod::Lora;
    int epochs = 3;
    int batch_size = 2;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double class_weight_0 = 0.0;  // 0 means derive from the training set
    double class_weight_1 = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 0) throw ArgumentError("epochs must be non-negative");
        if (batch_size < 1) throw ArgumentError("batch size must be positive");
        if (lr <= 0.0) throw ArgumentError("learning rate must be positive");
        if (class_weight_0 < 0.0 || class_weight_1 < 0.0)
            throw ArgumentError("class weights must be non-negative");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    MetricsReport val_metrics;
};

using TrainHistory = std::vector<EpochStats>;

/// Softmax over two logits.
inline std::pair<double, double> class_probabilities(double logit0, double logit1) {
    const double mx = std::max(logit0, logit1);
    const double e0 = std::exp(logit0 - mx), e1 = std::exp(logit1 - mx);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

/// -(1/N) sum_i w_{y_i} log P(y_i), differentiable through the logits.
inline Tensor wce_loss(const std::vector<Tensor>& logit_rows, const std::vector<int>& labels,
                       double w0, double w1) {
    if (logit_rows.empty()) throw EmptyBatch("wce_loss: empty batch");
    return weighted_cross_entropy(stack_rows(logit_rows), labels, w0, w1);
}

/// Inverse-frequency weights w_c = N / (2 N_c); a class absent from the set
/// falls back to weight 1.
inline std::pair<double, double> inverse_frequency_weights(const std::vector<LogWindow>& data) {
    long n1 = 0;
    for (const LogWindow& w : data) n1 += w.label;
    const long n = static_cast<long>(data.size());
    const long n0 = n - n1;
    const double w0 = n0 > 0 ? static_cast<double>(n) / (2.0 * static_cast<double>(n0)) : 1.0;
    const double w1 = n1 > 0 ? static_cast<double>(n) / (2.0 * static_cast<double>(n1)) : 1.0;
    return {w0, w1};
}

inline std::pair<double, double> resolve_class_weights(const TrainConfig& cfg,
                                                       const std::vector<LogWindow>& train_set) {
    if (cfg.class_weight_0 > 0.0 && cfg.class_weight_1 > 0.0)
        return {cfg.class_weight_0, cfg.class_weight_1};
    return inverse_frequency_weights(train_set);
}

/// AdamW with decoupled weight decay:
/// theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * lambda * theta.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps,
          double weight_decay)
        : params_(std::move(params)),
          lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
        if (params_.empty()) throw NoTrainableParams("AdamW: no parameters to optimize");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].size(), 0.0);
            v_[i].assign(params_[i].size(), 0.0);
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            const std::vector<double>& g = p.grad();
            double* theta = p.data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                theta[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_) +
                            lr_ * weight_decay_ * theta[j];
            }
        }
    }

    long steps_taken() const { return t_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

struct EvalResult {
    double mean_loss = 0.0;
    MetricsReport metrics;
    ConfusionMatrix cm;
};

namespace detail {

inline double sample_loss(double l0, double l1, int label, double w0, double w1) {
    const double mx = std::max(l0, l1);
    const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
    const double w = label == 0 ? w0 : w1;
    return -w * ((label == 0 ? l0 : l1) - lse);
}

}  // namespace detail

/// Inference-mode pass over a dataset: mean weighted cross-entropy under the
/// given class weights, plus metric scores with prediction = argmax logits
/// (ties resolve to class 0).
inline EvalResult evaluate(const ModelBundle& model, const std::vector<LogWindow>& data,
                           double w0, double w1) {
    if (data.empty()) throw EmptyDataset("evaluate: empty dataset");
    std::vector<int> preds, labels;
    preds.reserve(data.size());
    labels.reserve(data.size());
    double loss = 0.0;
    for (const LogWindow& w : data) {
        Tensor lg = model.logits(w.key_ids, w.attention_mask);
        const double l0 = lg.at(0), l1 = lg.at(1);
        loss += detail::sample_loss(l0, l1, w.label, w0, w1);
        preds.push_back(l1 > l0 ? 1 : 0);
        labels.push_back(w.label);
    }
    EvalResult r;
    r.mean_loss = loss / static_cast<double>(data.size());
    r.cm = confusion(preds, labels);
    r.metrics = metrics_report(r.cm);
    return r;
}

/// Optimizes the bundle's trainable parameters (LoRA factors + classifier,
/// or the adapter head) with AdamW over seeded shuffled mini-batches. The
/// frozen backbone is never touched. Adapter mode precomputes the pooled
/// frozen-encoder features once, since they cannot change.
inline TrainHistory train(ModelBundle& model, const std::vector<LogWindow>& train_set,
                          const std::vector<LogWindow>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw EmptyDataset("train: training and validation sets must be non-empty");
    std::vector<Tensor> trainable = model.trainable_parameters();
    if (trainable.empty()) throw NoTrainableParams("train: nothing to optimize");

    const auto [w0, w1] = resolve_class_weights(cfg, train_set);
    TrainHistory history;
    if (cfg.epochs == 0) return history;

    auto shuffle_rng = named_stream(cfg.seed, "shuffle");
    auto dropout_rng = named_stream(cfg.seed, "dropout");
    AdamW opt(trainable, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

    const bool adapter = model.method == PeftMethod::Adapter;
    std::vector<std::vector<double>> train_feats, val_feats;
    if (adapter) {
        train_feats.reserve(train_set.size());
        for (const LogWindow& w : train_set)
            train_feats.push_back(model.pooled_features(w.key_ids, w.attention_mask));
        val_feats.reserve(val_set.size());
        for (const LogWindow& w : val_set)
            val_feats.push_back(model.pooled_features(w.key_ids, w.attention_mask));
    }

    auto eval_val = [&]() -> std::pair<double, MetricsReport> {
        if (!adapter) {
            EvalResult r = evaluate(model, val_set, w0, w1);
            return {r.mean_loss, r.metrics};
        }
        double loss = 0.0;
        std::vector<int> preds, labels;
        for (std::size_t i = 0; i < val_set.size(); ++i) {
            Tensor lg = model.logits_from_features(val_feats[i]);
            loss += detail::sample_loss(lg.at(0), lg.at(1), val_set[i].label, w0, w1);
            preds.push_back(lg.at(1) > lg.at(0) ? 1 : 0);
            labels.push_back(val_set[i].label);
        }
        return {loss / static_cast<double>(val_set.size()),
                metrics_report(confusion(preds, labels))};
    };

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_vector(order, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> rows;
            std::vector<int> labels;
            rows.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const LogWindow& w = train_set[order[i]];
                rows.push_back(adapter
                                   ? model.logits_from_features(train_feats[order[i]])
                                   : model.logits(w.key_ids, w.attention_mask,
                                                  /*training=*/true, &dropout_rng));
                labels.push_back(w.label);
            }
            Tensor loss = wce_loss(rows, labels, w0, w1);
            opt.zero_grad();
            loss.backward();
            opt.step();
            epoch_loss += loss.value() * static_cast<double>(stop - start);
        }
        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(train_set.size());
        auto [vloss, vmetrics] = eval_val();
        stats.val_loss = vloss;
        stats.val_metrics = vmetrics;
        history.push_back(stats);
    }
    return history;
}

}  // namespace logpeft
