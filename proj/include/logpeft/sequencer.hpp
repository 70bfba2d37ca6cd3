#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "logpeft/errors.hpp"
#include "logpeft/rng.hpp"

namespace logpeft {

/// A raw log line with its Thunderbird-style label column removed.
struct LabeledLine {
    bool is_anomalous = false;
    std::string message;
};

/// Thunderbird convention: a first column of exactly "-" marks a normal line;
/// anything else is an alert tag and the line is anomalous. The first column
/// is stripped either way.
inline LabeledLine read_labeled_line(std::string_view raw) {
    std::size_t i = 0;
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < raw.size() && raw[i] != ' ' && raw[i] != '\t') ++i;
    if (i == start) throw EmptyLine("read_labeled_line: empty line");
    std::string_view first = raw.substr(start, i - start);
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
    std::size_t end = raw.size();
    while (end > i && (raw[end - 1] == ' ' || raw[end - 1] == '\t' || raw[end - 1] == '\r' ||
                       raw[end - 1] == '\n'))
        --end;
    if (end <= i) throw EmptyLine("read_labeled_line: no message after label column");
    return {first != "-", std::string(raw.substr(i, end - i))};
}

/// A fixed-length slice of the key stream forming one classification
/// instance. Before padding the attention mask is all ones; after
/// pad_and_mask it is a prefix of ones followed by zeros.
struct LogWindow {
    std::vector<int> key_ids;
    std::vector<int> attention_mask;
    int label = 0;  // 1 = anomalous
    int source_id = 0;
    long start_offset = 0;
};

/// Sliding windows at offsets 0, stride, 2*stride, ...; emits exactly
/// floor((n - window_size)/stride) + 1 windows when n >= window_size.
/// A window's label is the OR of its line flags.
inline std::vector<LogWindow> build_windows(const std::vector<int>& keys,
                                            const std::vector<char>& flags, int window_size,
                                            int stride, int source_id = 0) {
    if (window_size <= 0 || stride <= 0)
        throw ArgumentError("build_windows: window_size and stride must be positive");
    if (keys.size() != flags.size())
        throw LengthMismatch("build_windows: keys and flags differ in length");
    std::vector<LogWindow> windows;
    const long n = static_cast<long>(keys.size());
    if (n < window_size) return windows;
    windows.reserve(static_cast<std::size_t>((n - window_size) / stride + 1));
    for (long off = 0; off + window_size <= n; off += stride) {
        LogWindow w;
        w.key_ids.assign(keys.begin() + off, keys.begin() + off + window_size);
        w.attention_mask.assign(static_cast<std::size_t>(window_size), 1);
        w.label = 0;
        for (long i = off; i < off + window_size; ++i)
            if (flags[static_cast<std::size_t>(i)]) w.label = 1;
        w.source_id = source_id;
        w.start_offset = off;
        windows.push_back(std::move(w));
    }
    return windows;
}

/// Right-pads key_ids with pad_id up to max_len; the mask is 1 for real
/// positions and 0 for padding.
inline LogWindow pad_and_mask(LogWindow window, int max_len, int pad_id) {
    if (max_len <= 0) throw ArgumentError("pad_and_mask: max_len must be positive");
    if (static_cast<int>(window.key_ids.size()) > max_len)
        throw TooLong("pad_and_mask: window of " + std::to_string(window.key_ids.size()) +
                      " keys exceeds max_len " + std::to_string(max_len));
    const std::size_t real = window.key_ids.size();
    window.key_ids.resize(static_cast<std::size_t>(max_len), pad_id);
    window.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
    for (std::size_t i = 0; i < real; ++i) window.attention_mask[i] = 1;
    return window;
}

struct SplitResult {
    std::vector<LogWindow> train, val, test;
};

/// Seeded shuffle, then partition with floor(n * frac) sizes; the remainder
/// goes to test.
inline SplitResult split_dataset(std::vector<LogWindow> windows, double train_frac,
                                 double val_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
        throw ArgumentError("split_dataset: fractions must satisfy 0 < train, 0 <= val, "
                            "train + val <= 1");
    auto rng = named_stream(seed, "split");
    shuffle_vector(windows, rng);
    const std::size_t n = windows.size();
    const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * train_frac);
    const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * val_frac);
    SplitResult out;
    out.train.assign(windows.begin(), windows.begin() + n_train);
    out.val.assign(windows.begin() + n_train, windows.begin() + n_train + n_val);
    out.test.assign(windows.begin() + n_train + n_val, windows.end());
    return out;
}

/// Shape of a synthetic corpus: `vocab` keys total, of which the top eighth
/// (at least one) are reserved for anomalous behaviour.
struct SynthSpec {
    int vocab = 64;
    int normal_patterns = 20;
    int anomaly_patterns = 5;
    double anomaly_rate = 0.1;
    long lines = 100000;

    int anomaly_keys() const { return vocab / 8 > 0 ? vocab / 8 : 1; }
    int normal_keys() const { return vocab - anomaly_keys(); }
};

/// Emits a key stream of alternating segments. Normal segments walk one of
/// the seeded cyclic patterns over the normal key range; anomalous segments
/// (flagged true) mix reserved rare keys with pattern-violating jumps.
/// Segment types are drawn i.i.d. with P(anomalous) = anomaly_rate, so the
/// anomalous line fraction converges to the rate.
inline std::pair<std::vector<int>, std::vector<char>> generate_synthetic(const SynthSpec& spec,
                                                                         std::uint64_t seed) {
    if (spec.anomaly_rate < 0.0 || spec.anomaly_rate > 1.0)
        throw ArgumentError("generate_synthetic: anomaly rate must be in [0,1]");
    if (spec.vocab < 2) throw ArgumentError("generate_synthetic: vocab must be at least 2");
    if (spec.normal_patterns < 1 || spec.anomaly_patterns < 1)
        throw ArgumentError("generate_synthetic: pattern counts must be positive");
    if (spec.lines < 0) throw ArgumentError("generate_synthetic: negative line count");

    auto rng = named_stream(seed, "synth");
    const int normal_range = spec.normal_keys();
    const int anomaly_base = spec.normal_keys();
    const int anomaly_range = spec.anomaly_keys();

    constexpr int kPatternLen = 8;
    std::vector<std::vector<int>> patterns(static_cast<std::size_t>(spec.normal_patterns));
    for (auto& p : patterns) {
        p.resize(kPatternLen);
        for (int& k : p) k = static_cast<int>(uniform_below(rng, normal_range));
    }

    std::vector<int> keys;
    std::vector<char> flags;
    keys.reserve(static_cast<std::size_t>(spec.lines));
    flags.reserve(static_cast<std::size_t>(spec.lines));
    while (static_cast<long>(keys.size()) < spec.lines) {
        const long remaining = spec.lines - static_cast<long>(keys.size());
        long seg_len = 16 + static_cast<long>(uniform_below(rng, 48));  // 16..63
        if (seg_len > remaining) seg_len = remaining;
        const bool anomalous = uniform_double(rng) < spec.anomaly_rate;
        if (anomalous) {
            const auto pat = static_cast<int>(
                uniform_below(rng, static_cast<std::uint64_t>(spec.anomaly_patterns)));
            const int pattern_rare = anomaly_base + pat % anomaly_range;
            for (long i = 0; i < seg_len; ++i) {
                // majority rare keys, remainder pattern-violating jumps
                const bool rare = uniform_double(rng) < 0.7;
                int k = rare ? pattern_rare
                             : static_cast<int>(uniform_below(rng, normal_range));
                keys.push_back(k);
                flags.push_back(1);
            }
        } else {
            const auto& pattern =
                patterns[uniform_below(rng, static_cast<std::uint64_t>(spec.normal_patterns))];
            auto phase = static_cast<std::size_t>(uniform_below(rng, kPatternLen));
            for (long i = 0; i < seg_len; ++i) {
                keys.push_back(pattern[(phase + static_cast<std::size_t>(i)) % kPatternLen]);
                flags.push_back(0);
            }
        }
    }
    return {std::move(keys), std::move(flags)};
}

namespace detail {

/// Letters-only word for key k, so the rendered token survives digit masking.
inline std::string key_word(int k) {
    std::string w = "ev";
    int v = k;
    do {
        w += static_cast<char>('a' + v % 26);
        v /= 26;
    } while (v > 0);
    return w;
}

}  // namespace detail

/// Renders a key stream as Thunderbird-style raw log lines: normal lines get
/// a "-" label column, anomalous ones an alert tag. Each key maps to a
/// distinct token pattern with one digit-bearing (variable) token, so a
/// Drain pass recovers one template per key.
inline void render_synthetic_log(std::ostream& os, const std::vector<int>& keys,
                                 const std::vector<char>& flags, std::uint64_t seed) {
    if (keys.size() != flags.size())
        throw LengthMismatch("render_synthetic_log: keys and flags differ in length");
    auto rng = named_stream(seed, "synth_render");
    std::string line;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        line.clear();
        line += flags[i] ? "FAULT" : "-";
        line += " svc ";
        line += detail::key_word(keys[i]);
        line += " emit seq ";
        line += std::to_string(uniform_below(rng, 100000));
        line += '\n';
        os << line;
    }
}

// ---------------------------------------------------------------------------
// Window file format: one window per line, "label<TAB>id id id ..." with the
// pre-padding key ids.
// ---------------------------------------------------------------------------

inline void write_windows(std::ostream& os, const std::vector<LogWindow>& windows) {
    for (const LogWindow& w : windows) {
        os << w.label << '\t';
        for (std::size_t i = 0; i < w.key_ids.size(); ++i) {
            if (i) os << ' ';
            os << w.key_ids[i];
        }
        os << '\n';
    }
}

inline std::vector<LogWindow> read_windows(std::istream& is) {
    std::vector<LogWindow> windows;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        LogWindow w;
        if (!(ss >> w.label) || (w.label != 0 && w.label != 1))
            throw IoError("window file line " + std::to_string(line_no) + ": bad label");
        int id;
        while (ss >> id) w.key_ids.push_back(id);
        if (w.key_ids.empty())
            throw IoError("window file line " + std::to_string(line_no) + ": no key ids");
        w.attention_mask.assign(w.key_ids.size(), 1);
        w.start_offset = line_no - 1;
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace logpeft
