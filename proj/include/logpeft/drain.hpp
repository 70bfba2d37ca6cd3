#pragma once

#include <cctype>
#include <deque>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "logpeft/errors.hpp"

namespace logpeft {

inline constexpr std::string_view kWildcard = "<*>";

/// A mined message type: the token sequence shared by all member lines, with
/// "<*>" at positions where members disagreed (or preprocessing masked).
struct LogTemplate {
    int id = 0;
    std::vector<std::string> tokens;
    long match_count = 0;

    std::string joined() const {
        std::string s;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) s += ' ';
            s += tokens[i];
        }
        return s;
    }
};

/// Splits on runs of whitespace and masks every digit-bearing token to "<*>".
inline std::vector<std::string> preprocess(std::string_view raw_line) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = raw_line.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(raw_line[i]))) ++i;
        std::size_t start = i;
        bool has_digit = false;
        while (i < n && !std::isspace(static_cast<unsigned char>(raw_line[i]))) {
            if (std::isdigit(static_cast<unsigned char>(raw_line[i]))) has_digit = true;
            ++i;
        }
        if (i > start)
            tokens.emplace_back(has_digit ? std::string(kWildcard)
                                          : std::string(raw_line.substr(start, i - start)));
    }
    return tokens;
}

/// Fraction of positions where the line token equals a concrete template
/// token. Wildcard positions contribute 0 to the numerator; the denominator
/// is the full length.
inline double similarity(const std::vector<std::string>& tokens, const LogTemplate& tmpl) {
    if (tokens.size() != tmpl.tokens.size() || tokens.empty())
        throw LengthMismatch("similarity: token count differs from template");
    int matches = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tmpl.tokens[i] != kWildcard && tokens[i] == tmpl.tokens[i]) ++matches;
    return static_cast<double>(matches) / static_cast<double>(tokens.size());
}

/// Fixed-depth parse tree assigning each log line a dense integer key id.
/// Lines are grouped first by token count, then by up to `depth` leading
/// tokens, then matched against the leaf's templates by `similarity`.
class DrainTree {
public:
    explicit DrainTree(int depth = 4, double sim_threshold = 0.5, int max_children = 100)
        : depth_(depth), sim_threshold_(sim_threshold), max_children_(max_children) {
        if (depth < 1) throw ArgumentError("drain depth must be positive");
        if (sim_threshold <= 0.0 || sim_threshold > 1.0)
            throw ArgumentError("similarity threshold must be in (0,1]");
        if (max_children < 1) throw ArgumentError("max_children must be positive");
    }

    struct ParseResult {
        int key_id;
        const LogTemplate* tmpl;
        bool created;
    };

    ParseResult parse_line(std::string_view raw_line) {
        std::vector<std::string> tokens = preprocess(raw_line);
        if (tokens.empty()) throw EmptyLine("parse_line: line has no tokens");

        Node* leaf = descend(tokens);

        int best_id = -1;
        double best_sim = -1.0;
        for (int id : leaf->template_ids) {
            double s = similarity(tokens, templates_[static_cast<std::size_t>(id)]);
            if (s > best_sim) {  // ties break toward the lowest id
                best_sim = s;
                best_id = id;
            }
        }

        if (best_id >= 0 && best_sim >= sim_threshold_) {
            LogTemplate& tmpl = templates_[static_cast<std::size_t>(best_id)];
            for (std::size_t i = 0; i < tokens.size(); ++i)
                if (tmpl.tokens[i] != tokens[i]) tmpl.tokens[i] = std::string(kWildcard);
            ++tmpl.match_count;
            return {best_id, &tmpl, false};
        }

        LogTemplate fresh;
        fresh.id = static_cast<int>(templates_.size());
        fresh.tokens = std::move(tokens);
        fresh.match_count = 1;
        templates_.push_back(std::move(fresh));
        leaf->template_ids.push_back(templates_.back().id);
        return {templates_.back().id, &templates_.back(), true};
    }

    std::size_t template_count() const { return templates_.size(); }

    const LogTemplate& template_at(int id) const {
        if (id < 0 || id >= static_cast<int>(templates_.size()))
            throw IdOutOfRange("no template with id " + std::to_string(id));
        return templates_[static_cast<std::size_t>(id)];
    }

    /// Templates in id order (ids are assigned in first-seen order).
    std::vector<LogTemplate> export_templates() const {
        return {templates_.begin(), templates_.end()};
    }

    /// One template per line: id, match_count, space-joined tokens,
    /// tab-separated.
    void write_templates(std::ostream& os) const {
        for (const LogTemplate& t : templates_)
            os << t.id << '\t' << t.match_count << '\t' << t.joined() << '\n';
    }

    int depth() const { return depth_; }
    double sim_threshold() const { return sim_threshold_; }
    int max_children() const { return max_children_; }

private:
    struct Node {
        std::map<std::string, std::unique_ptr<Node>> children;
        std::vector<int> template_ids;  // ascending; non-empty only at leaves
    };

    Node* descend(const std::vector<std::string>& tokens) {
        Node* cur = &length_roots_[tokens.size()];
        const std::size_t levels = std::min<std::size_t>(static_cast<std::size_t>(depth_),
                                                         tokens.size());
        for (std::size_t i = 0; i < levels; ++i) {
            const std::string& token = tokens[i];
            std::string key;
            if (token.find(kWildcard) != std::string::npos) {
                key = std::string(kWildcard);
            } else if (cur->children.count(token) > 0) {
                key = token;
            } else if (static_cast<int>(cur->children.size()) < max_children_) {
                key = token;
            } else {
                key = std::string(kWildcard);  // width cap reached
            }
            auto& child = cur->children[key];
            if (!child) child = std::make_unique<Node>();
            cur = child.get();
        }
        return cur;
    }

    int depth_;
    double sim_threshold_;
    int max_children_;
    std::map<std::size_t, Node> length_roots_;
    std::deque<LogTemplate> templates_;  // stable storage; index == id
};

}  // namespace logpeft
