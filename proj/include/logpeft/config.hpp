#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/peft.hpp"
#include "logpeft/sequencer.hpp"
#include "logpeft/trainer.hpp"
#include "logpeft/transformer.hpp"

namespace logpeft {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_csv(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t comma = s.find(',', start);
        if (comma == std::string_view::npos) comma = s.size();
        auto item = trim(s.substr(start, comma - start));
        if (!item.empty()) out.emplace_back(item);
        start = comma + 1;
    }
    return out;
}

/// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, ptr};
}

}  // namespace detail

/// Flat run configuration covering every stage of the pipeline. Serializes
/// as `key = value` lines; unknown keys are rejected. Command-line flags
/// override file values which override the defaults below.
struct RunConfig {
    // drain
    int depth = 4;
    double sim_threshold = 0.5;
    int max_children = 100;
    // windows
    int window_size = 64;
    int stride = 64;
    // synthetic corpus
    int synth_vocab = 64;
    int synth_normal_patterns = 20;
    int synth_anomaly_patterns = 5;
    double synth_rate = 0.1;
    long synth_lines = 100000;
    // model
    int model_dim = 64;
    int model_heads = 4;
    int model_layers = 2;
    int model_max_len = 128;
    int model_ffn_dim = 0;  // 0 means 4 * dim
    long vocab_keys = 0;    // 0 means bind from the training data
    // lora
    int lora_rank = 2;
    double lora_alpha = 16.0;
    double lora_dropout = 0.05;
    double lora_init_std = 0.02;
    std::string lora_targets = "k_proj";
    std::string lora_layers;  // csv of 1-based layer indices; empty = all
    bool lora_alpha_over_rank = false;
    // training
    std::string method = "lora";
    int epochs = 3;
    int batch_size = 2;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double class_weight_0 = 0.0;  // 0 means inverse-frequency from train split
    double class_weight_1 = 0.0;
    double train_frac = 0.8;
    double val_frac = 0.1;
    std::uint64_t seed = 1;
    // paths
    std::string logs;
    std::string keys;
    std::string labels;
    std::string data;
    std::string out;
    std::string templates_out;
    std::string keys_out;
    std::string labels_out;
    std::string checkpoint;
    std::string checkpoint_out;
    std::string report_out;

    using FieldPtr = std::variant<int RunConfig::*, long RunConfig::*, double RunConfig::*,
                                  bool RunConfig::*, std::uint64_t RunConfig::*,
                                  std::string RunConfig::*>;

    struct FieldDef {
        const char* key;
        FieldPtr ptr;
    };

    static const std::vector<FieldDef>& fields() {
        static const std::vector<FieldDef> defs = {
            {"depth", &RunConfig::depth},
            {"sim_threshold", &RunConfig::sim_threshold},
            {"max_children", &RunConfig::max_children},
            {"window_size", &RunConfig::window_size},
            {"stride", &RunConfig::stride},
            {"synth_vocab", &RunConfig::synth_vocab},
            {"synth_normal_patterns", &RunConfig::synth_normal_patterns},
            {"synth_anomaly_patterns", &RunConfig::synth_anomaly_patterns},
            {"synth_rate", &RunConfig::synth_rate},
            {"synth_lines", &RunConfig::synth_lines},
            {"model_dim", &RunConfig::model_dim},
            {"model_heads", &RunConfig::model_heads},
            {"model_layers", &RunConfig::model_layers},
            {"model_max_len", &RunConfig::model_max_len},
            {"model_ffn_dim", &RunConfig::model_ffn_dim},
            {"vocab_keys", &RunConfig::vocab_keys},
            {"lora_rank", &RunConfig::lora_rank},
            {"lora_alpha", &RunConfig::lora_alpha},
            {"lora_dropout", &RunConfig::lora_dropout},
            {"lora_init_std", &RunConfig::lora_init_std},
            {"lora_targets", &RunConfig::lora_targets},
            {"lora_layers", &RunConfig::lora_layers},
            {"lora_alpha_over_rank", &RunConfig::lora_alpha_over_rank},
            {"method", &RunConfig::method},
            {"epochs", &RunConfig::epochs},
            {"batch_size", &RunConfig::batch_size},
            {"lr", &RunConfig::lr},
            {"beta1", &RunConfig::beta1},
            {"beta2", &RunConfig::beta2},
            {"adam_eps", &RunConfig::adam_eps},
            {"weight_decay", &RunConfig::weight_decay},
            {"class_weight_0", &RunConfig::class_weight_0},
            {"class_weight_1", &RunConfig::class_weight_1},
            {"train_frac", &RunConfig::train_frac},
            {"val_frac", &RunConfig::val_frac},
            {"seed", &RunConfig::seed},
            {"logs", &RunConfig::logs},
            {"keys", &RunConfig::keys},
            {"labels", &RunConfig::labels},
            {"data", &RunConfig::data},
            {"out", &RunConfig::out},
            {"templates_out", &RunConfig::templates_out},
            {"keys_out", &RunConfig::keys_out},
            {"labels_out", &RunConfig::labels_out},
            {"checkpoint", &RunConfig::checkpoint},
            {"checkpoint_out", &RunConfig::checkpoint_out},
            {"report_out", &RunConfig::report_out},
        };
        return defs;
    }

    void set(std::string_view key, std::string_view value) {
        for (const FieldDef& f : fields()) {
            if (key != f.key) continue;
            assign(f.ptr, value, key);
            return;
        }
        throw ArgumentError("unknown config key '" + std::string(key) + "'");
    }

    std::string get(std::string_view key) const {
        for (const FieldDef& f : fields())
            if (key == f.key) return render(f.ptr);
        throw ArgumentError("unknown config key '" + std::string(key) + "'");
    }

    void serialize(std::ostream& os) const {
        for (const FieldDef& f : fields()) os << f.key << " = " << render(f.ptr) << '\n';
    }

    std::string serialize() const {
        std::ostringstream ss;
        serialize(ss);
        return ss.str();
    }

    /// Parses `key = value` lines; '#' lines are comments, blank lines are
    /// skipped, unknown keys are rejected.
    void load(std::istream& is) {
        std::string line;
        long line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            std::string_view v = detail::trim(line);
            if (v.empty() || v.front() == '#') continue;
            const std::size_t eq = v.find('=');
            if (eq == std::string_view::npos)
                throw ArgumentError("config line " + std::to_string(line_no) +
                                    ": expected key = value");
            set(detail::trim(v.substr(0, eq)), detail::trim(v.substr(eq + 1)));
        }
    }

    // Typed views over the flat fields.

    TransformerConfig transformer_config() const {
        TransformerConfig c;
        c.vocab_size = static_cast<int>(vocab_keys) + 1;  // reserved pad row
        c.dim = model_dim;
        c.heads = model_heads;
        c.layers = model_layers;
        c.max_len = model_max_len;
        c.ffn_dim = model_ffn_dim;
        c.pad_id = static_cast<int>(vocab_keys);
        return c;
    }

    LoraConfig lora_config() const {
        LoraConfig c;
        c.rank = lora_rank;
        c.alpha = lora_alpha;
        c.dropout = lora_dropout;
        c.init_std = lora_init_std;
        c.alpha_over_rank = lora_alpha_over_rank;
        c.targets.clear();
        for (const std::string& t : detail::split_csv(lora_targets))
            c.targets.push_back(attn_proj_from_string(t));
        c.target_layers.clear();
        for (const std::string& l : detail::split_csv(lora_layers))
            c.target_layers.push_back(parse_int(l));
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig c;
        c.method = peft_method_from_string(method);
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.lr = lr;
        c.beta1 = beta1;
        c.beta2 = beta2;
        c.adam_eps = adam_eps;
        c.weight_decay = weight_decay;
        c.class_weight_0 = class_weight_0;
        c.class_weight_1 = class_weight_1;
        c.seed = seed;
        return c;
    }

    SynthSpec synth_spec() const {
        SynthSpec s;
        s.vocab = synth_vocab;
        s.normal_patterns = synth_normal_patterns;
        s.anomaly_patterns = synth_anomaly_patterns;
        s.anomaly_rate = synth_rate;
        s.lines = synth_lines;
        return s;
    }

private:
    static int parse_int(std::string_view v) {
        int out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw ArgumentError("bad integer value '" + std::string(v) + "'");
        return out;
    }

    void assign(const FieldPtr& ptr, std::string_view value, std::string_view key) {
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(this->*member)>;
                if constexpr (std::is_same_v<T, std::string>) {
                    this->*member = std::string(value);
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (value == "true" || value == "1") this->*member = true;
                    else if (value == "false" || value == "0") this->*member = false;
                    else
                        throw ArgumentError("bad boolean for '" + std::string(key) + "': '" +
                                            std::string(value) + "'");
                } else {
                    T out{};
                    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
                    if (ec != std::errc() || p != value.data() + value.size())
                        throw ArgumentError("bad value for '" + std::string(key) + "': '" +
                                            std::string(value) + "'");
                    this->*member = out;
                }
            },
            ptr);
    }

    std::string render(const FieldPtr& ptr) const {
        return std::visit(
            [&](auto member) -> std::string {
                using T = std::remove_cvref_t<decltype(this->*member)>;
                if constexpr (std::is_same_v<T, std::string>) return this->*member;
                else if constexpr (std::is_same_v<T, bool>) return this->*member ? "true" : "false";
                else if constexpr (std::is_same_v<T, double>)
                    return detail::format_double(this->*member);
                else return std::to_string(this->*member);
            },
            ptr);
    }
};

inline RunConfig default_config() { return RunConfig{}; }

}  // namespace logpeft
