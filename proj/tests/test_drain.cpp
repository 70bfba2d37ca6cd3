#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "logpeft/drain.hpp"
#include "logpeft/rng.hpp"

using namespace logpeft;

namespace {

/// Random corpus built from letter-only pattern words plus digit-bearing
/// variable tokens, so the expected grouping is known.
std::vector<std::string> random_corpus(std::mt19937_64& rng, int lines) {
    static const std::vector<std::string> verbs = {"start", "stop", "open", "close", "sync"};
    static const std::vector<std::string> nouns = {"disk", "net", "job", "user", "cache"};
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(lines));
    for (int i = 0; i < lines; ++i) {
        const auto& v = verbs[uniform_below(rng, verbs.size())];
        const auto& s = nouns[uniform_below(rng, nouns.size())];
        std::string line = s + " " + v + " id" + std::to_string(uniform_below(rng, 1000));
        if (uniform_below(rng, 2) == 0) line += " extra";
        out.push_back(std::move(line));
    }
    return out;
}

}  // namespace

TEST_CASE("preprocess splits and masks digit-bearing tokens", "[drain]") {
    CHECK(preprocess("connected to 10.0.0.1") ==
          std::vector<std::string>{"connected", "to", "<*>"});
    CHECK(preprocess("error code 5 on node7") ==
          std::vector<std::string>{"error", "code", "<*>", "on", "<*>"});
    CHECK(preprocess("").empty());
    CHECK(preprocess("  \t ").empty());
}

TEST_CASE("similarity counts concrete matches over full length", "[drain]") {
    LogTemplate tmpl;
    tmpl.tokens = {"a", "<*>"};
    CHECK(similarity({"a", "b"}, tmpl) == 0.5);
    tmpl.tokens = {"a", "b"};
    CHECK(similarity({"a", "b"}, tmpl) == 1.0);
    tmpl.tokens = {"c", "<*>"};
    CHECK(similarity({"a", "b"}, tmpl) == 0.0);
    CHECK_THROWS_AS(similarity({"a"}, tmpl), LengthMismatch);
}

TEST_CASE("parse_line groups variants of the same message type", "[drain]") {
    DrainTree tree(4, 0.5, 100);
    auto r1 = tree.parse_line("connected to 10.0.0.1");
    auto r2 = tree.parse_line("connected to 10.0.0.2");
    CHECK(r1.key_id == 0);
    CHECK(r2.key_id == 0);
    CHECK(r2.tmpl->tokens == std::vector<std::string>{"connected", "to", "<*>"});

    DrainTree tree2;
    CHECK(tree2.parse_line("shutdown").key_id == 0);
    CHECK(tree2.parse_line("connected to X").key_id == 1);

    CHECK_THROWS_AS(tree.parse_line("   "), EmptyLine);
}

TEST_CASE("re-parsing a template's concrete form is the identity", "[drain]") {
    DrainTree tree;
    tree.parse_line("connected to 10.0.0.1");
    const auto before = tree.template_at(0).tokens;
    auto again = tree.parse_line("connected to 10.0.0.9");
    CHECK(again.key_id == 0);
    CHECK(tree.template_at(0).tokens == before);
    CHECK(tree.template_at(0).match_count == 2);
}

TEST_CASE("similarity ties break toward the lowest template id", "[drain]") {
    DrainTree tree(4, 0.5, 100);
    const int first = tree.parse_line("p q r s a a a a a").key_id;
    const int second = tree.parse_line("p q r s b b b b b").key_id;  // 4/9 < 0.5: new template
    REQUIRE(first == 0);
    REQUIRE(second == 1);
    // equally similar to both (5/9 each): must join template 0
    CHECK(tree.parse_line("p q r s a b x y z").key_id == first);
}

TEST_CASE("max_children overflow routes to the catch-all child", "[drain]") {
    DrainTree tree(4, 0.5, 2);
    const int a = tree.parse_line("aa x y").key_id;
    const int b = tree.parse_line("bb x y").key_id;
    const int c = tree.parse_line("cc x y").key_id;
    const int d = tree.parse_line("dd x y").key_id;
    CHECK(a != b);
    CHECK(c != a);
    CHECK(c != b);
    CHECK(d == c);  // both overflow into the same wildcard subtree
    CHECK(tree.template_count() == 3);
}

TEST_CASE("export_templates is ordered and counts every parsed line", "[drain]") {
    DrainTree fresh;
    CHECK(fresh.export_templates().empty());

    DrainTree tree;
    tree.parse_line("connected to 10.0.0.1");
    tree.parse_line("connected to 10.0.0.2");
    auto tmpls = tree.export_templates();
    REQUIRE(tmpls.size() == 1);
    CHECK(tmpls[0].match_count == 2);

    auto rng = named_stream(21, "drain");
    DrainTree big;
    const int lines = 500;
    for (const std::string& line : random_corpus(rng, lines)) big.parse_line(line);
    long total = 0;
    int expected_id = 0;
    for (const LogTemplate& t : big.export_templates()) {
        CHECK(t.id == expected_id++);
        total += t.match_count;
    }
    CHECK(total == lines);
}

TEST_CASE("parsing is deterministic and keys stay dense", "[drain][property]") {
    auto rng = named_stream(22, "drain");
    const auto corpus = random_corpus(rng, 800);

    DrainTree t1, t2;
    std::vector<int> k1, k2;
    std::size_t prev_count = 0;
    for (const std::string& line : corpus) {
        const int key = t1.parse_line(line).key_id;
        k1.push_back(key);
        // monotonicity: returned ids are below the current template count,
        // and the count never decreases
        CHECK(key < static_cast<int>(t1.template_count()));
        CHECK(t1.template_count() >= prev_count);
        prev_count = t1.template_count();
    }
    for (const std::string& line : corpus) k2.push_back(t2.parse_line(line).key_id);
    CHECK(k1 == k2);

    const auto e1 = t1.export_templates();
    const auto e2 = t2.export_templates();
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1[i].tokens == e2[i].tokens);
        CHECK(e1[i].match_count == e2[i].match_count);
    }
}

TEST_CASE("templates generalize their member lines", "[drain][property]") {
    auto rng = named_stream(23, "drain");
    const auto corpus = random_corpus(rng, 600);
    DrainTree tree;
    std::map<int, std::vector<std::vector<std::string>>> members;
    for (const std::string& line : corpus) {
        auto tokens = preprocess(line);
        const int key = tree.parse_line(line).key_id;
        members[key].push_back(std::move(tokens));
    }
    for (const auto& [key, lines] : members) {
        const LogTemplate& tmpl = tree.template_at(key);
        for (const auto& tokens : lines) {
            REQUIRE(tokens.size() == tmpl.tokens.size());  // length partition
            for (std::size_t i = 0; i < tokens.size(); ++i)
                if (tmpl.tokens[i] != kWildcard) CHECK(tmpl.tokens[i] == tokens[i]);
        }
    }
}

TEST_CASE("re-parsing a rendered template returns its own id", "[drain][property]") {
    auto rng = named_stream(24, "drain");
    DrainTree tree;
    for (const std::string& line : random_corpus(rng, 400)) tree.parse_line(line);
    for (const LogTemplate& tmpl : tree.export_templates()) {
        std::string rendered;
        for (std::size_t i = 0; i < tmpl.tokens.size(); ++i) {
            if (i) rendered += ' ';
            rendered += tmpl.tokens[i] == kWildcard ? "v17" : tmpl.tokens[i];
        }
        CHECK(tree.parse_line(rendered).key_id == tmpl.id);
    }
}

TEST_CASE("template file serialization matches the documented format", "[drain]") {
    DrainTree tree;
    tree.parse_line("connected to 10.0.0.1");
    tree.parse_line("connected to 10.0.0.2");
    std::ostringstream os;
    tree.write_templates(os);
    CHECK(os.str() == "0\t2\tconnected to <*>\n");
}
