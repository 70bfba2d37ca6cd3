// Command-line front end: parse raw logs into key streams, build windows,
// generate synthetic corpora, and train/evaluate the PEFT classifiers.

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "logpeft/logpeft.hpp"

namespace {

using logpeft::RunConfig;

/// Registers subcommand flags that override config-file values, which in
/// turn override the built-in defaults.
class ConfigFlags {
public:
    explicit ConfigFlags(CLI::App* cmd) : cmd_(cmd) {
        cmd->add_option("--config", config_path_,
                        "run configuration file (key = value lines)");
    }

    template <typename T>
    CLI::Option* bind(const std::string& flag, T RunConfig::*member, const std::string& desc) {
        auto local = std::make_shared<T>();
        CLI::Option* opt = cmd_->add_option(flag, *local, desc);
        applies_.push_back([opt, local, member](RunConfig& cfg) {
            if (opt->count() > 0) cfg.*member = *local;
        });
        return opt;
    }

    CLI::Option* bind_flag(const std::string& flag, bool RunConfig::*member,
                           const std::string& desc) {
        auto local = std::make_shared<bool>(false);
        CLI::Option* opt = cmd_->add_flag(flag, *local, desc);
        applies_.push_back([opt, local, member](RunConfig& cfg) {
            if (opt->count() > 0) cfg.*member = *local;
        });
        return opt;
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path_.empty()) {
            std::ifstream f(config_path_);
            if (!f) throw logpeft::IoError("cannot read config file '" + config_path_ + "'");
            cfg.load(f);
        }
        for (const auto& apply : applies_) apply(cfg);
        return cfg;
    }

private:
    CLI::App* cmd_;
    std::string config_path_;
    std::vector<std::function<void(RunConfig&)>> applies_;
};

void require_path(const std::string& value, const std::string& flag) {
    if (value.empty()) throw logpeft::ArgumentError("missing required path: " + flag);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw logpeft::IoError("cannot write '" + path + "'");
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw logpeft::IoError("cannot read '" + path + "'");
    return is;
}

/// Every run records the configuration it actually used next to its primary
/// output; re-running with --config on that file reproduces the run.
void write_effective_config(const RunConfig& cfg, const std::string& primary_output) {
    auto os = open_out(primary_output + ".config");
    cfg.serialize(os);
}

void echo_config(const RunConfig& cfg) {
    std::cout << "# effective configuration\n";
    cfg.serialize(std::cout);
}

std::vector<int> read_int_per_line(const std::string& path, const char* what) {
    auto is = open_in(path);
    std::vector<int> out;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw logpeft::IoError(std::string(what) + " file line " + std::to_string(line_no) +
                                   ": expected an integer");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_parse(const RunConfig& cfg, bool plain_input) {
    require_path(cfg.logs, "--logs");
    require_path(cfg.templates_out, "--templates-out");
    require_path(cfg.keys_out, "--keys-out");

    logpeft::DrainTree tree(cfg.depth, cfg.sim_threshold, cfg.max_children);
    auto logs = open_in(cfg.logs);
    auto keys_os = open_out(cfg.keys_out);
    const std::string labels_path =
        cfg.labels_out.empty() ? cfg.keys_out + ".labels" : cfg.labels_out;
    std::ofstream labels_os;
    if (!plain_input) labels_os = open_out(labels_path);

    std::string line;
    long parsed = 0, skipped = 0;
    while (std::getline(logs, line)) {
        try {
            int flag = 0;
            std::string_view message = line;
            logpeft::LabeledLine labeled;
            if (!plain_input) {
                labeled = logpeft::read_labeled_line(line);
                flag = labeled.is_anomalous ? 1 : 0;
                message = labeled.message;
            }
            const auto result = tree.parse_line(message);
            keys_os << result.key_id << '\n';
            if (!plain_input) labels_os << flag << '\n';
            ++parsed;
        } catch (const logpeft::EmptyLine&) {
            ++skipped;
        }
    }
    auto tmpl_os = open_out(cfg.templates_out);
    tree.write_templates(tmpl_os);

    write_effective_config(cfg, cfg.keys_out);
    echo_config(cfg);
    std::cout << "parsed " << parsed << " lines (" << skipped << " skipped), "
              << tree.template_count() << " templates\n";
    return 0;
}

int cmd_windows(const RunConfig& cfg) {
    require_path(cfg.keys, "--keys");
    require_path(cfg.out, "--out");

    std::vector<int> keys = read_int_per_line(cfg.keys, "key");
    std::vector<char> flags(keys.size(), 0);
    if (!cfg.labels.empty()) {
        std::vector<int> raw = read_int_per_line(cfg.labels, "label");
        if (raw.size() != keys.size())
            throw logpeft::LengthMismatch("labels file has " + std::to_string(raw.size()) +
                                          " entries but keys file has " +
                                          std::to_string(keys.size()));
        for (std::size_t i = 0; i < raw.size(); ++i) flags[i] = raw[i] != 0;
    }
    auto windows = logpeft::build_windows(keys, flags, cfg.window_size, cfg.stride);
    auto os = open_out(cfg.out);
    logpeft::write_windows(os, windows);

    write_effective_config(cfg, cfg.out);
    echo_config(cfg);
    long anomalous = 0;
    for (const auto& w : windows) anomalous += w.label;
    std::cout << windows.size() << " windows (" << anomalous << " anomalous)\n";
    return 0;
}

int cmd_synth(const RunConfig& cfg) {
    require_path(cfg.out, "--out");
    auto [keys, flags] = logpeft::generate_synthetic(cfg.synth_spec(), cfg.seed);
    auto os = open_out(cfg.out);
    logpeft::render_synthetic_log(os, keys, flags, cfg.seed);

    write_effective_config(cfg, cfg.out);
    echo_config(cfg);
    long anomalous = 0;
    for (char f : flags) anomalous += f;
    std::cout << keys.size() << " lines (" << anomalous << " anomalous)\n";
    return 0;
}

void write_history_report(const std::string& path, const logpeft::TrainHistory& history) {
    auto os = open_out(path);
    os << "epoch\ttrain_loss\tval_loss\taccuracy\tprecision\trecall\tf1\tf1_weighted\n";
    using logpeft::detail::format_double;
    for (std::size_t e = 0; e < history.size(); ++e) {
        const auto& h = history[e];
        os << (e + 1) << '\t' << format_double(h.train_loss) << '\t'
           << format_double(h.val_loss) << '\t' << format_double(h.val_metrics.accuracy) << '\t'
           << format_double(h.val_metrics.precision) << '\t'
           << format_double(h.val_metrics.recall) << '\t' << format_double(h.val_metrics.f1)
           << '\t' << format_double(h.val_metrics.f1_w) << '\n';
    }
}

long max_key_id(const std::vector<logpeft::LogWindow>& windows) {
    long mx = -1;
    for (const auto& w : windows)
        for (int id : w.key_ids) mx = std::max(mx, static_cast<long>(id));
    return mx;
}

int cmd_train(RunConfig cfg) {
    require_path(cfg.data, "--data");
    require_path(cfg.checkpoint_out, "--checkpoint-out");
    require_path(cfg.report_out, "--report-out");

    const logpeft::PeftMethod method = logpeft::peft_method_from_string(cfg.method);
    logpeft::LoraConfig lora_cfg = cfg.lora_config();  // validates target names

    auto data_is = open_in(cfg.data);
    std::vector<logpeft::LogWindow> windows = logpeft::read_windows(data_is);
    if (windows.empty()) throw logpeft::EmptyDataset("no windows in '" + cfg.data + "'");

    const long max_key = max_key_id(windows);
    if (cfg.vocab_keys == 0) cfg.vocab_keys = max_key + 1;
    if (max_key >= cfg.vocab_keys)
        throw logpeft::IdOutOfRange("data contains key " + std::to_string(max_key) +
                                    " but the vocabulary binds " +
                                    std::to_string(cfg.vocab_keys) + " keys");

    auto split = logpeft::split_dataset(windows, cfg.train_frac, cfg.val_frac, cfg.seed);
    if (split.val.empty())
        throw logpeft::EmptyDataset("validation split is empty; raise val_frac");

    const logpeft::TransformerConfig mc = cfg.transformer_config();
    logpeft::ModelBundle bundle = method == logpeft::PeftMethod::Lora
                                      ? logpeft::ModelBundle::make_lora(mc, lora_cfg, cfg.seed)
                                      : logpeft::ModelBundle::make_adapter(mc, cfg.seed);

    logpeft::TrainConfig tc = cfg.train_config();
    const auto [w0, w1] = logpeft::resolve_class_weights(tc, split.train);
    cfg.class_weight_0 = w0;  // persist the resolved weights for eval
    cfg.class_weight_1 = w1;
    tc.class_weight_0 = w0;
    tc.class_weight_1 = w1;

    const logpeft::TrainHistory history = logpeft::train(bundle, split.train, split.val, tc);

    logpeft::save_checkpoint(bundle, cfg, cfg.checkpoint_out);
    write_history_report(cfg.report_out, history);
    write_effective_config(cfg, cfg.checkpoint_out);
    echo_config(cfg);

    const auto report = bundle.parameter_report();
    std::cout << "trainable parameters: " << report.trainable << " / " << report.total()
              << '\n';
    if (!history.empty()) {
        const auto& last = history.back();
        std::cout << "final val_loss " << last.val_loss << ", f1 " << last.val_metrics.f1
                  << '\n';
    }
    if (!split.test.empty()) {
        const auto test = logpeft::evaluate(bundle, split.test, w0, w1);
        std::cout << "held-out test f1 " << test.metrics.f1 << " over " << split.test.size()
                  << " windows\n";
    }
    return 0;
}

int cmd_eval(const RunConfig& cli_cfg) {
    require_path(cli_cfg.checkpoint, "--checkpoint");
    require_path(cli_cfg.data, "--data");
    require_path(cli_cfg.report_out, "--report-out");

    logpeft::LoadedCheckpoint loaded = logpeft::load_checkpoint(cli_cfg.checkpoint);
    auto data_is = open_in(cli_cfg.data);
    std::vector<logpeft::LogWindow> windows = logpeft::read_windows(data_is);
    if (windows.empty()) throw logpeft::EmptyDataset("no windows in '" + cli_cfg.data + "'");

    const long max_key = max_key_id(windows);
    if (max_key >= loaded.config.vocab_keys)
        throw logpeft::IdOutOfRange(
            "window file uses key " + std::to_string(max_key) +
            " but the checkpoint binds a vocabulary of " +
            std::to_string(loaded.config.vocab_keys) + " keys");

    const double w0 = loaded.config.class_weight_0 > 0 ? loaded.config.class_weight_0 : 1.0;
    const double w1 = loaded.config.class_weight_1 > 0 ? loaded.config.class_weight_1 : 1.0;
    const logpeft::EvalResult r = logpeft::evaluate(loaded.bundle, windows, w0, w1);

    using logpeft::detail::format_double;
    auto os = open_out(cli_cfg.report_out);
    os << "windows = " << windows.size() << '\n';
    os << "loss = " << format_double(r.mean_loss) << '\n';
    os << "accuracy = " << format_double(r.metrics.accuracy) << '\n';
    os << "precision = " << format_double(r.metrics.precision) << '\n';
    os << "recall = " << format_double(r.metrics.recall) << '\n';
    os << "f1 = " << format_double(r.metrics.f1) << '\n';
    os << "precision_weighted = " << format_double(r.metrics.precision_w) << '\n';
    os << "recall_weighted = " << format_double(r.metrics.recall_w) << '\n';
    os << "f1_weighted = " << format_double(r.metrics.f1_w) << '\n';
    os << "tp = " << r.cm.tp << '\n';
    os << "fp = " << r.cm.fp << '\n';
    os << "tn = " << r.cm.tn << '\n';
    os << "fn = " << r.cm.fn << '\n';
    os.close();

    RunConfig cfg = loaded.config;
    cfg.checkpoint = cli_cfg.checkpoint;
    cfg.data = cli_cfg.data;
    cfg.report_out = cli_cfg.report_out;
    write_effective_config(cfg, cli_cfg.report_out);

    std::cout << "loss " << r.mean_loss << ", accuracy " << r.metrics.accuracy << ", f1 "
              << r.metrics.f1 << " over " << windows.size() << " windows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"log-key anomaly detection with LoRA / adapter fine-tuning"};
    app.require_subcommand(1);

    // parse
    CLI::App* parse_cmd = app.add_subcommand("parse", "mine templates and key ids from raw logs");
    ConfigFlags parse_flags(parse_cmd);
    parse_flags.bind("--logs", &RunConfig::logs, "raw log file (Thunderbird-style labels)");
    parse_flags.bind("--depth", &RunConfig::depth, "parse tree token levels");
    parse_flags.bind("--sim-threshold", &RunConfig::sim_threshold, "template match threshold");
    parse_flags.bind("--max-children", &RunConfig::max_children, "per-node child cap");
    parse_flags.bind("--templates-out", &RunConfig::templates_out, "mined template file");
    parse_flags.bind("--keys-out", &RunConfig::keys_out, "key id stream, one per line");
    parse_flags.bind("--labels-out", &RunConfig::labels_out, "0/1 label stream");
    bool plain_input = false;
    parse_cmd->add_flag("--plain", plain_input, "input lines carry no label column");

    // windows
    CLI::App* windows_cmd = app.add_subcommand("windows", "slice key streams into labeled windows");
    ConfigFlags windows_flags(windows_cmd);
    windows_flags.bind("--keys", &RunConfig::keys, "key id stream file");
    windows_flags.bind("--labels", &RunConfig::labels, "0/1 line labels file");
    windows_flags.bind("--size", &RunConfig::window_size, "window length in keys");
    windows_flags.bind("--stride", &RunConfig::stride, "offset between windows");
    windows_flags.bind("--out", &RunConfig::out, "window file");

    // synth
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic corpus");
    ConfigFlags synth_flags(synth_cmd);
    synth_flags.bind("--vocab", &RunConfig::synth_vocab, "distinct key count");
    synth_flags.bind("--rate", &RunConfig::synth_rate, "anomalous line rate in [0,1]");
    synth_flags.bind("--lines", &RunConfig::synth_lines, "lines to emit");
    synth_flags.bind("--normal-patterns", &RunConfig::synth_normal_patterns,
                     "normal pattern count");
    synth_flags.bind("--anomaly-patterns", &RunConfig::synth_anomaly_patterns,
                     "anomaly pattern count");
    synth_flags.bind("--seed", &RunConfig::seed, "generator seed");
    synth_flags.bind("--out", &RunConfig::out, "raw log file to write");

    // train
    CLI::App* train_cmd = app.add_subcommand("train", "fine-tune a classifier on a window file");
    ConfigFlags train_flags(train_cmd);
    train_flags.bind("--data", &RunConfig::data, "window file");
    train_flags.bind("--method", &RunConfig::method, "lora or adapter");
    train_flags.bind("--targets", &RunConfig::lora_targets,
                     "comma list of q_proj,k_proj,v_proj");
    train_flags.bind("--rank", &RunConfig::lora_rank, "LoRA rank r");
    train_flags.bind("--alpha", &RunConfig::lora_alpha, "LoRA scaling alpha");
    train_flags.bind("--dropout", &RunConfig::lora_dropout, "LoRA path dropout");
    train_flags.bind("--init-std", &RunConfig::lora_init_std, "stddev for LoRA A init");
    train_flags.bind_flag("--alpha-over-rank", &RunConfig::lora_alpha_over_rank,
                          "scale by alpha/r instead of alpha");
    train_flags.bind("--lora-layers", &RunConfig::lora_layers,
                     "comma list of 1-based target layers (default: all)");
    train_flags.bind("--lr", &RunConfig::lr, "learning rate");
    train_flags.bind("--batch", &RunConfig::batch_size, "mini-batch size");
    train_flags.bind("--epochs", &RunConfig::epochs, "training epochs");
    train_flags.bind("--dim", &RunConfig::model_dim, "model width d");
    train_flags.bind("--heads", &RunConfig::model_heads, "attention heads");
    train_flags.bind("--layers", &RunConfig::model_layers, "decoder blocks");
    train_flags.bind("--max-len", &RunConfig::model_max_len, "maximum sequence length");
    train_flags.bind("--ffn-dim", &RunConfig::model_ffn_dim, "FFN width (0 = 4d)");
    train_flags.bind("--vocab-keys", &RunConfig::vocab_keys,
                     "vocabulary binding (0 = from data)");
    train_flags.bind("--train-frac", &RunConfig::train_frac, "training fraction");
    train_flags.bind("--val-frac", &RunConfig::val_frac, "validation fraction");
    train_flags.bind("--w0", &RunConfig::class_weight_0, "class 0 weight (0 = auto)");
    train_flags.bind("--w1", &RunConfig::class_weight_1, "class 1 weight (0 = auto)");
    train_flags.bind("--beta1", &RunConfig::beta1, "AdamW beta1");
    train_flags.bind("--beta2", &RunConfig::beta2, "AdamW beta2");
    train_flags.bind("--adam-eps", &RunConfig::adam_eps, "AdamW epsilon");
    train_flags.bind("--weight-decay", &RunConfig::weight_decay, "decoupled weight decay");
    train_flags.bind("--seed", &RunConfig::seed, "run seed");
    train_flags.bind("--checkpoint-out", &RunConfig::checkpoint_out, "checkpoint to write");
    train_flags.bind("--report-out", &RunConfig::report_out, "per-epoch TSV report");

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a window file");
    ConfigFlags eval_flags(eval_cmd);
    eval_flags.bind("--checkpoint", &RunConfig::checkpoint, "checkpoint file");
    eval_flags.bind("--data", &RunConfig::data, "window file");
    eval_flags.bind("--report-out", &RunConfig::report_out, "metrics key-value file");

    try {
        app.parse(argc, argv);
        if (parse_cmd->parsed()) return cmd_parse(parse_flags.resolve(), plain_input);
        if (windows_cmd->parsed()) return cmd_windows(windows_flags.resolve());
        if (synth_cmd->parsed()) return cmd_synth(synth_flags.resolve());
        if (train_cmd->parsed()) return cmd_train(train_flags.resolve());
        if (eval_cmd->parsed()) return cmd_eval(eval_flags.resolve());
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const logpeft::ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const logpeft::UnknownTarget& e) {
        std::cerr << "error: UnknownTarget: " << e.what() << '\n';
        return 1;
    } catch (const logpeft::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
