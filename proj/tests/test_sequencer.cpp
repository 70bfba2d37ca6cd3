#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "logpeft/sequencer.hpp"

using namespace logpeft;

TEST_CASE("read_labeled_line follows the dash convention", "[sequencer]") {
    auto normal = read_labeled_line("- Jun 9 kernel: ok");
    CHECK_FALSE(normal.is_anomalous);
    CHECK(normal.message == "Jun 9 kernel: ok");

    auto alert = read_labeled_line("ALERT Jun 9 kernel: panic");
    CHECK(alert.is_anomalous);
    CHECK(alert.message == "Jun 9 kernel: panic");

    CHECK_THROWS_AS(read_labeled_line("-"), EmptyLine);
    CHECK_THROWS_AS(read_labeled_line(""), EmptyLine);
    CHECK_THROWS_AS(read_labeled_line("   "), EmptyLine);
}

TEST_CASE("first column decides the label exactly", "[sequencer][property]") {
    auto rng = named_stream(31, "seq");
    const std::vector<std::string> firsts = {"-", "--", "-x", "ALERT", "R_FAULT", "a-b"};
    for (int i = 0; i < 100; ++i) {
        const std::string& first = firsts[uniform_below(rng, firsts.size())];
        const std::string body = "msg " + std::to_string(uniform_below(rng, 100));
        auto parsed = read_labeled_line(first + " " + body);
        CHECK(parsed.is_anomalous == (first != "-"));
        CHECK(parsed.message == body);
    }
}

TEST_CASE("build_windows emits the exact offset grid", "[sequencer]") {
    std::vector<int> keys(10);
    for (int i = 0; i < 10; ++i) keys[static_cast<std::size_t>(i)] = i;
    std::vector<char> flags(10, 0);
    auto windows = build_windows(keys, flags, 4, 2);
    REQUIRE(windows.size() == 4);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        CHECK(windows[i].start_offset == static_cast<long>(2 * i));
        CHECK(windows[i].key_ids.size() == 4);
        CHECK(windows[i].label == 0);
    }

    CHECK(build_windows({1, 2, 3}, {0, 0, 0}, 4, 1).empty());
    CHECK_THROWS_AS(build_windows(keys, flags, 0, 1), ArgumentError);
    CHECK_THROWS_AS(build_windows(keys, flags, 4, 0), ArgumentError);
}

TEST_CASE("window label is the OR of line flags", "[sequencer]") {
    std::vector<int> keys(6, 1);
    std::vector<char> flags = {0, 0, 0, 1, 0, 0};
    auto windows = build_windows(keys, flags, 3, 3);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].label == 0);
    CHECK(windows[1].label == 1);
}

TEST_CASE("window count formula holds for random shapes", "[sequencer][property]") {
    auto rng = named_stream(32, "seq");
    for (int round = 0; round < 200; ++round) {
        const auto n = static_cast<long>(uniform_below(rng, 200));
        const int ws = 1 + static_cast<int>(uniform_below(rng, 20));
        const int stride = 1 + static_cast<int>(uniform_below(rng, 20));
        std::vector<int> keys(static_cast<std::size_t>(n), 0);
        std::vector<char> flags(static_cast<std::size_t>(n), 0);
        const auto windows = build_windows(keys, flags, ws, stride);
        const long expected = n >= ws ? (n - ws) / stride + 1 : 0;
        CHECK(static_cast<long>(windows.size()) == expected);
    }
}

TEST_CASE("pad_and_mask pads right and masks a prefix of ones", "[sequencer]") {
    LogWindow w;
    w.key_ids = {3, 7};
    w.attention_mask = {1, 1};
    auto padded = pad_and_mask(w, 4, 0);
    CHECK(padded.key_ids == std::vector<int>{3, 7, 0, 0});
    CHECK(padded.attention_mask == std::vector<int>{1, 1, 0, 0});

    LogWindow full;
    full.key_ids = {1, 2, 3, 4};
    full.attention_mask = {1, 1, 1, 1};
    auto same = pad_and_mask(full, 4, 0);
    CHECK(same.key_ids == full.key_ids);
    CHECK(same.attention_mask == std::vector<int>{1, 1, 1, 1});

    LogWindow too_long;
    too_long.key_ids = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(pad_and_mask(too_long, 4, 0), TooLong);
}

TEST_CASE("masks are prefixes of ones with the pre-padding sum", "[sequencer][property]") {
    auto rng = named_stream(33, "seq");
    for (int round = 0; round < 100; ++round) {
        const int real = 1 + static_cast<int>(uniform_below(rng, 16));
        const int max_len = real + static_cast<int>(uniform_below(rng, 16));
        LogWindow w;
        for (int i = 0; i < real; ++i)
            w.key_ids.push_back(static_cast<int>(uniform_below(rng, 50)));
        w.attention_mask.assign(static_cast<std::size_t>(real), 1);
        const auto padded = pad_and_mask(w, max_len, 99);
        int sum = 0;
        bool in_zeros = false;
        for (int m : padded.attention_mask) {
            if (m == 0) in_zeros = true;
            CHECK((m == 0 || !in_zeros));  // once zero, always zero
            sum += m;
        }
        CHECK(sum == real);
    }
}

TEST_CASE("split_dataset partitions deterministically", "[sequencer]") {
    std::vector<LogWindow> windows(100);
    for (int i = 0; i < 100; ++i) windows[static_cast<std::size_t>(i)].start_offset = i;

    auto s1 = split_dataset(windows, 0.8, 0.1, 99);
    CHECK(s1.train.size() == 80);
    CHECK(s1.val.size() == 10);
    CHECK(s1.test.size() == 10);

    std::set<long> seen;
    for (const auto* part : {&s1.train, &s1.val, &s1.test})
        for (const auto& w : *part) CHECK(seen.insert(w.start_offset).second);
    CHECK(seen.size() == 100);

    auto s2 = split_dataset(windows, 0.8, 0.1, 99);
    for (std::size_t i = 0; i < s1.train.size(); ++i)
        CHECK(s1.train[i].start_offset == s2.train[i].start_offset);

    CHECK_THROWS_AS(split_dataset(windows, 1.0, 0.5, 1), ArgumentError);
    CHECK_THROWS_AS(split_dataset(windows, 0.0, 0.5, 1), ArgumentError);
}

TEST_CASE("generate_synthetic respects the anomaly rate", "[sequencer]") {
    SynthSpec spec;
    spec.vocab = 64;
    spec.normal_patterns = 20;
    spec.anomaly_patterns = 5;
    spec.lines = 100000;

    spec.anomaly_rate = 0.0;
    auto [keys0, flags0] = generate_synthetic(spec, 5);
    CHECK(keys0.size() == 100000);
    for (char f : flags0) REQUIRE(f == 0);

    spec.anomaly_rate = 0.1;
    auto [keys, flags] = generate_synthetic(spec, 5);
    long anomalous = 0;
    for (char f : flags) anomalous += f;
    const double fraction = static_cast<double>(anomalous) / static_cast<double>(flags.size());
    CHECK(fraction > 0.08);
    CHECK(fraction < 0.12);

    auto [keys2, flags2] = generate_synthetic(spec, 5);
    CHECK(keys == keys2);
    CHECK(flags == flags2);

    spec.anomaly_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(spec, 5), ArgumentError);
    spec.anomaly_rate = 0.1;
    spec.vocab = 1;
    CHECK_THROWS_AS(generate_synthetic(spec, 5), ArgumentError);
}

TEST_CASE("window files round-trip", "[sequencer]") {
    std::vector<int> keys = {4, 9, 1, 1, 7, 2, 2, 8};
    std::vector<char> flags = {0, 0, 1, 0, 0, 0, 0, 1};
    auto windows = build_windows(keys, flags, 4, 4);
    std::ostringstream os;
    write_windows(os, windows);
    CHECK(os.str() == "1\t4 9 1 1\n1\t7 2 2 8\n");

    std::istringstream is(os.str());
    auto parsed = read_windows(is);
    REQUIRE(parsed.size() == windows.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].label == windows[i].label);
        CHECK(parsed[i].key_ids == windows[i].key_ids);
        CHECK(parsed[i].attention_mask == std::vector<int>(4, 1));
    }

    std::istringstream bad("2\t1 2\n");
    CHECK_THROWS_AS(read_windows(bad), IoError);
}

TEST_CASE("synthetic renderer writes parseable labeled lines", "[sequencer]") {
    std::vector<int> keys = {0, 5, 63};
    std::vector<char> flags = {0, 1, 0};
    std::ostringstream os;
    render_synthetic_log(os, keys, flags, 3);
    std::istringstream is(os.str());
    std::string line;
    int i = 0;
    while (std::getline(is, line)) {
        auto parsed = read_labeled_line(line);
        CHECK(parsed.is_anomalous == (flags[static_cast<std::size_t>(i)] != 0));
        ++i;
    }
    CHECK(i == 3);
}
