#pragma once

#include <algorithm>
#include <cctype>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "sgtrans/common.hpp"

namespace sgtrans {

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

enum class token_kind { identifier, keyword, literal, op, separator, comment };

struct lex_token {
    token_kind kind;
    std::string text;
    std::size_t begin = 0;  // byte offset, inclusive
    std::size_t end = 0;    // byte offset, exclusive
    int line = 1;           // 1-based line of the first byte
    int col = 0;            // 0-based column of the first byte
};

namespace detail {

inline const std::unordered_set<std::string>& keywords(language lang) {
    static const std::unordered_set<std::string> java{
        "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char",
        "class", "const", "continue", "default", "do", "double", "else", "enum",
        "extends", "final", "finally", "float", "for", "goto", "if", "implements",
        "import", "instanceof", "int", "interface", "long", "native", "new",
        "package", "private", "protected", "public", "return", "short", "static",
        "strictfp", "super", "switch", "synchronized", "this", "throw", "throws",
        "transient", "try", "void", "volatile", "while", "var", "true", "false",
        "null"};
    static const std::unordered_set<std::string> python{
        "False", "None", "True", "and", "as", "assert", "async", "await", "break",
        "class", "continue", "def", "del", "elif", "else", "except", "finally",
        "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
        "not", "or", "pass", "raise", "return", "try", "while", "with", "yield"};
    return lang == language::java ? java : python;
}

inline bool ident_start(unsigned char c, language lang) {
    if (c >= 0x80) return true;
    if (std::isalpha(c) || c == '_') return true;
    return lang == language::java && c == '$';
}

inline bool ident_cont(unsigned char c, language lang) {
    return ident_start(c, lang) || std::isdigit(c);
}

inline const std::vector<std::string>& multi_ops(language lang) {
    static const std::vector<std::string> java{
        ">>>=", ">>>", "<<=", ">>=", "==", "!=", "<=", ">=", "&&", "||", "++",
        "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "->", "::", "<<",
        ">>"};
    static const std::vector<std::string> python{
        "**=", "//=", ">>=", "<<=", "==", "!=", "<=", ">=", "->", ":=", "+=",
        "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**", "//", ">>", "<<"};
    return lang == language::java ? java : python;
}

inline bool is_separator_char(char c) {
    return c == '(' || c == ')' || c == '{' || c == '}' || c == '[' || c == ']' ||
           c == ';' || c == ',' || c == '.';
}

}  // namespace detail

// Splits source into a full covering of its non-whitespace bytes: identifiers,
// keywords, literals, operators, separators and comments, each tagged with its
// byte range. Unterminated string or character literals abort with the line.
inline std::vector<lex_token> lex(const std::string& src, language lang) {
    std::vector<lex_token> out;
    const std::size_t n = src.size();
    std::size_t pos = 0;
    int line = 1;
    std::size_t line_start = 0;

    auto advance_to = [&](std::size_t target) {
        for (std::size_t q = pos; q < target; ++q)
            if (src[q] == '\n') {
                ++line;
                line_start = q + 1;
            }
        pos = target;
    };
    auto push = [&](token_kind k, std::size_t b, std::size_t e, int ln, int cl) {
        out.push_back({k, src.substr(b, e - b), b, e, ln, cl});
    };

    while (pos < n) {
        const char c = src[pos];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance_to(pos + 1);
            continue;
        }
        const std::size_t b = pos;
        const int tline = line;
        const int tcol = static_cast<int>(pos - line_start);

        // comments
        if (lang == language::java && c == '/' && pos + 1 < n && src[pos + 1] == '/') {
            std::size_t e = src.find('\n', pos);
            if (e == std::string::npos) e = n;
            push(token_kind::comment, b, e, tline, tcol);
            advance_to(e);
            continue;
        }
        if (lang == language::java && c == '/' && pos + 1 < n && src[pos + 1] == '*') {
            std::size_t e = src.find("*/", pos + 2);
            e = e == std::string::npos ? n : e + 2;
            push(token_kind::comment, b, e, tline, tcol);
            advance_to(e);
            continue;
        }
        if (lang == language::python && c == '#') {
            std::size_t e = src.find('\n', pos);
            if (e == std::string::npos) e = n;
            push(token_kind::comment, b, e, tline, tcol);
            advance_to(e);
            continue;
        }

        // string and char literals, with optional python prefix (r, b, f, u
        // and two-letter combinations)
        std::size_t lit_from = pos;
        if (lang == language::python && detail::ident_start(static_cast<unsigned char>(c), lang)) {
            std::size_t q = pos;
            while (q < n && q - pos < 2 &&
                   std::strchr("rRbBuUfF", src[q]) != nullptr)
                ++q;
            if (q > pos && q < n && (src[q] == '"' || src[q] == '\''))
                lit_from = q;
        }
        if (src[lit_from] == '"' || src[lit_from] == '\'') {
            const char quote = src[lit_from];
            std::size_t e;
            if (lang == language::python && lit_from + 2 < n &&
                src[lit_from + 1] == quote && src[lit_from + 2] == quote) {
                const std::string triple(3, quote);
                std::size_t close = src.find(triple, lit_from + 3);
                if (close == std::string::npos) throw unterminated_literal(tline);
                e = close + 3;
            } else {
                std::size_t q = lit_from + 1;
                while (true) {
                    if (q >= n) throw unterminated_literal(tline);
                    if (src[q] == '\\') {
                        q += 2;
                        continue;
                    }
                    if (src[q] == '\n') throw unterminated_literal(tline);
                    if (src[q] == quote) break;
                    ++q;
                }
                e = q + 1;
            }
            push(token_kind::literal, b, e, tline, tcol);
            advance_to(e);
            continue;
        }

        // numbers
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t e = pos;
            while (e < n && (std::isalnum(static_cast<unsigned char>(src[e])) ||
                             src[e] == '_' || src[e] == '.'))
                ++e;
            push(token_kind::literal, b, e, tline, tcol);
            advance_to(e);
            continue;
        }

        // identifiers and keywords
        if (detail::ident_start(static_cast<unsigned char>(c), lang)) {
            std::size_t e = pos;
            while (e < n && detail::ident_cont(static_cast<unsigned char>(src[e]), lang))
                ++e;
            std::string word = src.substr(b, e - b);
            token_kind k = detail::keywords(lang).count(word) ? token_kind::keyword
                                                              : token_kind::identifier;
            push(k, b, e, tline, tcol);
            advance_to(e);
            continue;
        }

        // multi-character operators
        bool matched = false;
        for (const auto& op : detail::multi_ops(lang)) {
            if (src.compare(pos, op.size(), op) == 0) {
                push(token_kind::op, b, b + op.size(), tline, tcol);
                advance_to(b + op.size());
                matched = true;
                break;
            }
        }
        if (matched) continue;

        if (detail::is_separator_char(c)) {
            push(token_kind::separator, b, b + 1, tline, tcol);
            advance_to(b + 1);
            continue;
        }
        push(token_kind::op, b, b + 1, tline, tcol);
        advance_to(b + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sub-token splitting
// ---------------------------------------------------------------------------

// CamelCase and snake_case boundaries plus letter/digit transitions, results
// lowercased. "getFileName" -> get file name, "b64_encode" -> b 64 encode.
inline std::vector<std::string> split_subtokens(const std::string& ident) {
    std::vector<std::string> parts;
    std::string cur;
    auto lower = [](std::string s) {
        for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        return s;
    };
    auto flush = [&] {
        if (!cur.empty()) {
            parts.push_back(lower(cur));
            cur.clear();
        }
    };
    char prev = '\0';
    for (char ch : ident) {
        const unsigned char c = static_cast<unsigned char>(ch);
        const unsigned char p = static_cast<unsigned char>(prev);
        if (ch == '_') {
            flush();
            prev = ch;
            continue;
        }
        if (!cur.empty()) {
            bool boundary = false;
            if (std::islower(p) && std::isupper(c)) boundary = true;
            if (static_cast<bool>(std::isdigit(p)) != static_cast<bool>(std::isdigit(c)))
                boundary = true;
            if (boundary) flush();
        }
        cur.push_back(ch);
        prev = ch;
    }
    flush();
    if (parts.empty()) parts.push_back(lower(ident));
    return parts;
}

// ---------------------------------------------------------------------------
// Statement segmentation (over code tokens, comments excluded)
// ---------------------------------------------------------------------------

// Java statements are runs delimited by { } ; with the delimiter attached to
// the run it closes. Python statements are physical rows.
inline std::vector<int> token_statements(const std::vector<lex_token>& code, language lang) {
    std::vector<int> ids(code.size(), 0);
    if (lang == language::java) {
        int cur = 0;
        for (std::size_t i = 0; i < code.size(); ++i) {
            ids[i] = cur;
            const std::string& t = code[i].text;
            if (code[i].kind == token_kind::separator &&
                (t == "{" || t == "}" || t == ";"))
                ++cur;
        }
    } else {
        int cur = -1, prev_line = -1;
        for (std::size_t i = 0; i < code.size(); ++i) {
            if (code[i].line != prev_line) {
                ++cur;
                prev_line = code[i].line;
            }
            ids[i] = cur;
        }
    }
    return ids;
}

// ---------------------------------------------------------------------------
// Data-flow graph
// ---------------------------------------------------------------------------

enum class dfg_kind { last_write, compute_from, loop_back };

inline std::string to_string(dfg_kind k) {
    switch (k) {
        case dfg_kind::last_write: return "last_write";
        case dfg_kind::compute_from: return "compute_from";
        default: return "loop_back";
    }
}

inline dfg_kind dfg_kind_from_string(const std::string& s) {
    if (s == "last_write") return dfg_kind::last_write;
    if (s == "compute_from") return dfg_kind::compute_from;
    if (s == "loop_back") return dfg_kind::loop_back;
    throw config_error("unknown data-flow edge kind '" + s + "'");
}

struct dfg_node {
    int token_index = -1;  // index into the code-token list
    std::string name;
    int ordinal = 0;   // 1-based occurrence number of this name
    int sub_lo = -1;   // sub-token range [sub_lo, sub_hi), filled by parse()
    int sub_hi = -1;
    bool is_write = false;
    bool is_read = false;
};

struct dfg_edge {
    int src = -1;  // node index of the value provider
    int dst = -1;  // node index of the consumer
    dfg_kind kind = dfg_kind::last_write;
};

inline bool operator<(const dfg_edge& a, const dfg_edge& b) {
    if (a.src != b.src) return a.src < b.src;
    if (a.dst != b.dst) return a.dst < b.dst;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
}

struct data_flow_graph {
    std::vector<dfg_node> nodes;
    std::vector<dfg_edge> edges;
};

namespace detail {

inline bool is_java_type_keyword(const std::string& s) {
    static const std::unordered_set<std::string> t{
        "int", "long", "short", "byte", "char", "float", "double", "boolean", "var"};
    return t.count(s) > 0;
}

// Tracks variable occurrences while statements are scanned in source order.
// Branch bodies run on copies of the environment and re-join by set union, so
// a read after an if/else sees the last write from every path that could have
// produced its value.
class dfg_builder {
  public:
    dfg_builder(const std::vector<lex_token>& code, const std::vector<int>& stmt_of,
                language lang)
        : toks_(code), stmt_of_(stmt_of), lang_(lang) {}

    data_flow_graph run() {
        env_t env;
        if (lang_ == language::java) {
            int start = java_signature(env);
            java_block(start, static_cast<int>(toks_.size()), env);
        } else {
            build_rows();
            python_block(0, static_cast<int>(rows_.size()), env);
        }
        finish_ordinals();
        data_flow_graph g;
        g.nodes = nodes_;
        for (const auto& [key, _] : edge_set_) g.edges.push_back(key);
        std::sort(g.edges.begin(), g.edges.end(), [](const dfg_edge& a, const dfg_edge& b) {
            if (a.src != b.src) return a.src < b.src;
            if (a.dst != b.dst) return a.dst < b.dst;
            return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        });
        return g;
    }

  private:
    using env_t = std::map<std::string, std::set<int>>;

    const std::vector<lex_token>& toks_;
    const std::vector<int>& stmt_of_;
    language lang_;
    std::vector<dfg_node> nodes_;
    std::map<int, int> node_at_;  // token index -> node index
    std::map<dfg_edge, bool> edge_set_;

    struct row {
        int b, e;  // token range
        int indent;
        int line;
    };
    std::vector<row> rows_;

    const std::string& text(int i) const { return toks_[i].text; }
    bool is_kw(int i, const char* w) const {
        return toks_[i].kind == token_kind::keyword && toks_[i].text == w;
    }
    bool is_text(int i, const char* w) const { return toks_[i].text == w; }
    int size() const { return static_cast<int>(toks_.size()); }

    // A variable occurrence: an identifier that is not a call target, not a
    // member selected after '.', and not a Java type name position.
    bool eligible(int i) const {
        if (toks_[i].kind != token_kind::identifier) return false;
        if (i > 0 && text(i - 1) == ".") return false;
        if (i + 1 < size() && text(i + 1) == "(") return false;
        if (lang_ == language::java) {
            if (i + 1 < size() && toks_[i + 1].kind == token_kind::identifier) return false;
            if (i + 3 < size() && text(i + 1) == "[" && text(i + 2) == "]" &&
                toks_[i + 3].kind == token_kind::identifier)
                return false;
        } else {
            if (i > 0 && (is_kw(i - 1, "def") || is_kw(i - 1, "class"))) return false;
        }
        return true;
    }

    int node_of(int i) {
        auto it = node_at_.find(i);
        if (it != node_at_.end()) return it->second;
        dfg_node nd;
        nd.token_index = i;
        nd.name = text(i);
        nodes_.push_back(nd);
        int id = static_cast<int>(nodes_.size()) - 1;
        node_at_[i] = id;
        return id;
    }

    void add_edge(int src, int dst, dfg_kind kind) {
        if (src == dst) return;
        edge_set_[{src, dst, kind}] = true;
    }

    void read_at(int i, env_t& env) {
        int id = node_of(i);
        nodes_[id].is_read = true;
        auto it = env.find(nodes_[id].name);
        if (it != env.end())
            for (int w : it->second) add_edge(w, id, dfg_kind::last_write);
    }

    void write_at(int i, env_t& env, const std::vector<int>& rhs_reads) {
        int id = node_of(i);
        nodes_[id].is_write = true;
        for (int r : rhs_reads) add_edge(r, id, dfg_kind::compute_from);
        env[nodes_[id].name] = {id};
    }

    static env_t union_envs(const env_t& a, const env_t& b) {
        env_t out = a;
        for (const auto& [name, set] : b) out[name].insert(set.begin(), set.end());
        return out;
    }

    // --- token walking helpers ------------------------------------------

    int match_group(int open, int limit) const {
        // open sits on ( [ or {; returns index of the matching closer
        int depth = 0;
        for (int i = open; i < limit; ++i) {
            const std::string& t = text(i);
            if (t == "(" || t == "[" || t == "{") ++depth;
            else if (t == ")" || t == "]" || t == "}") {
                --depth;
                if (depth == 0) return i;
            }
        }
        return limit - 1;
    }

    int java_stmt_end(int b, int e) const {
        int depth = 0;
        for (int i = b; i < e; ++i) {
            const std::string& t = text(i);
            if (t == "(" || t == "[") ++depth;
            else if (t == ")" || t == "]") --depth;
            else if (t == "{") {
                if (depth == 0) return i;
                ++depth;
            } else if (t == "}") {
                if (depth == 0) return i;
                --depth;
            } else if (t == ";" && depth == 0)
                return i + 1;
        }
        return e;
    }

    // End of one statement or construct starting at i, without processing.
    int java_skip_one(int i, int e) const {
        if (i >= e) return e;
        if (is_kw(i, "if")) {
            int close = text(i + 1) == "(" ? match_group(i + 1, e) : i + 1;
            int j = java_skip_one(close + 1, e);
            if (j < e && is_kw(j, "else")) j = java_skip_one(j + 1, e);
            return j;
        }
        if (is_kw(i, "for") || is_kw(i, "while")) {
            int close = i + 1 < e && text(i + 1) == "(" ? match_group(i + 1, e) : i + 1;
            if (close + 1 < e && text(close + 1) == ";") return close + 2;  // do-while tail
            return java_skip_one(close + 1, e);
        }
        if (is_text(i, "{")) return match_group(i, e) + 1;
        return java_stmt_end(i, e);
    }

    // --- expression / statement processing ------------------------------

    // Scans [b, e) as one statement: reads in source order, then the write
    // effect. Handles =, augmented assignment, ++/--, declarations and plain
    // expressions.
    void process_statement(int b, int e, env_t& env) {
        static const std::unordered_set<std::string> aug{
            "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
            "**=", "//="};
        int eq = -1;
        bool eq_aug = false;
        int depth = 0;
        for (int i = b; i < e; ++i) {
            const std::string& t = text(i);
            if (t == "(" || t == "[" || t == "{") ++depth;
            else if (t == ")" || t == "]" || t == "}") --depth;
            else if (depth == 0 && toks_[i].kind == token_kind::op) {
                if (t == "=" || aug.count(t)) {
                    eq = i;
                    eq_aug = aug.count(t) > 0;
                    break;
                }
            }
        }

        std::vector<int> targets;     // pure writes
        std::vector<int> rw_targets;  // read-then-write (augmented, ++/--)
        if (eq >= 0) {
            // multi-target only when the left side is identifiers and commas
            bool plain_tuple = !eq_aug;
            std::vector<int> lhs_idents;
            for (int i = b; i < eq && plain_tuple; ++i) {
                if (toks_[i].kind == token_kind::identifier && eligible(i))
                    lhs_idents.push_back(i);
                else if (!is_text(i, ","))
                    plain_tuple = false;
            }
            if (plain_tuple && !lhs_idents.empty()) {
                targets = lhs_idents;
            } else {
                for (int i = b; i < eq; ++i)
                    if (eligible(i)) {
                        if (eq_aug)
                            rw_targets.push_back(i);
                        else
                            targets.push_back(i);
                        break;
                    }
            }
        }

        // ++/-- make their identifier a read-write occurrence
        for (int i = b; i < e; ++i) {
            if (toks_[i].kind == token_kind::op && (text(i) == "++" || text(i) == "--")) {
                int cand = -1;
                if (i > b && eligible(i - 1)) cand = i - 1;
                else if (i + 1 < e && eligible(i + 1)) cand = i + 1;
                if (cand >= 0 && !std::count(rw_targets.begin(), rw_targets.end(), cand))
                    rw_targets.push_back(cand);
            }
        }

        // Java declaration without initializer: `File f;`
        if (eq < 0 && lang_ == language::java && targets.empty() && rw_targets.empty()) {
            for (int i = b; i < e; ++i)
                if (eligible(i) && i > b &&
                    (toks_[i - 1].kind == token_kind::identifier ||
                     (toks_[i - 1].kind == token_kind::keyword &&
                      is_java_type_keyword(text(i - 1))))) {
                    targets.push_back(i);
                    break;
                }
        }

        auto is_target = [&](int i) {
            return std::count(targets.begin(), targets.end(), i) > 0;
        };
        auto is_rw = [&](int i) {
            return std::count(rw_targets.begin(), rw_targets.end(), i) > 0;
        };

        std::vector<int> rhs_reads;
        for (int i = b; i < e; ++i) {
            if (!eligible(i)) continue;
            if (is_target(i)) continue;
            if (is_rw(i)) {
                read_at(i, env);  // old value feeds the new one
                continue;
            }
            read_at(i, env);
            if (eq < 0 || i > eq) rhs_reads.push_back(node_at_[i]);
        }
        for (int t : targets) write_at(t, env, rhs_reads);
        for (int t : rw_targets) write_at(t, env, rhs_reads);
    }

    // --- Java ------------------------------------------------------------

    // Registers method parameters as initial writes and returns the token
    // index where body scanning should start.
    int java_signature(env_t& env) {
        int first_brace = -1;
        for (int i = 0; i < size(); ++i)
            if (is_text(i, "{")) {
                first_brace = i;
                break;
            }
        if (first_brace <= 0) return 0;
        bool header = false;
        for (int i = 0; i + 1 < first_brace; ++i)
            if (toks_[i].kind == token_kind::identifier && text(i + 1) == "(") {
                header = true;
                break;
            }
        if (!header) return 0;
        int open = -1;
        for (int i = first_brace - 1; i >= 0; --i)
            if (is_text(i, ")")) {
                int depth = 0;
                for (int j = i; j >= 0; --j) {
                    if (is_text(j, ")")) ++depth;
                    if (is_text(j, "(")) {
                        --depth;
                        if (depth == 0) {
                            open = j;
                            break;
                        }
                    }
                }
                break;
            }
        if (open < 0) return 0;
        int close = match_group(open, first_brace);
        int depth = 0, angle = 0;
        for (int i = open; i <= close; ++i) {
            const std::string& t = text(i);
            if (t == "(") ++depth;
            else if (t == ")") --depth;
            else if (t == "<") ++angle;
            else if (t == ">") angle = std::max(0, angle - 1);
            else if (depth == 1 && angle == 0 && toks_[i].kind == token_kind::identifier) {
                const std::string& nx = text(i + 1);
                if (nx == "," || nx == ")") write_at(i, env, {});
            }
        }
        return first_brace;
    }

    void java_block(int b, int e, env_t& env) {
        int i = b;
        while (i < e) {
            if (is_kw(i, "if")) {
                i = java_if(i, e, env);
            } else if (is_kw(i, "for") || is_kw(i, "while")) {
                i = java_loop(i, e, env);
            } else if (is_text(i, "{")) {
                int close = match_group(i, e);
                java_block(i + 1, close, env);
                i = close + 1;
            } else if (is_text(i, "}") || is_kw(i, "else") || is_kw(i, "do")) {
                ++i;
            } else {
                int j = java_stmt_end(i, e);
                if (j <= i) {
                    ++i;
                    continue;
                }
                process_statement(i, j, env);
                i = j;
            }
        }
    }

    int java_body(int i, int e, env_t& env) {
        // body of a construct: braced block or a single statement/construct
        if (i < e && is_text(i, "{")) {
            int close = match_group(i, e);
            java_block(i + 1, close, env);
            return close + 1;
        }
        int j = java_skip_one(i, e);
        java_block(i, j, env);
        return j;
    }

    int java_if(int i, int e, env_t& env) {
        int close = i + 1 < e && text(i + 1) == "(" ? match_group(i + 1, e) : i;
        if (close > i + 1) process_statement(i + 2, close, env);
        env_t then_env = env;
        int j = java_body(close + 1, e, then_env);
        if (j < e && is_kw(j, "else")) {
            env_t else_env = env;
            j = java_body(j + 1, e, else_env);
            env = union_envs(then_env, else_env);
        } else {
            env = union_envs(env, then_env);
        }
        return j;
    }

    int java_loop(int i, int e, env_t& env) {
        const bool is_for = is_kw(i, "for");
        int header_b = i;
        int open = i + 1 < e && text(i + 1) == "(" ? i + 1 : -1;
        int close = open >= 0 ? match_group(open, e) : i;
        int iter_b = header_b;  // for-init runs once, so it sits outside the iterated region

        if (is_for && open >= 0) {
            std::vector<int> semis;
            int depth = 0;
            for (int q = open + 1; q < close; ++q) {
                const std::string& t = text(q);
                if (t == "(" || t == "[") ++depth;
                else if (t == ")" || t == "]") --depth;
                else if (t == ";" && depth == 0) semis.push_back(q);
            }
            if (semis.size() == 2) {
                process_statement(open + 1, semis[0], env);
                process_statement(semis[0] + 1, semis[1], env);
                process_statement(semis[1] + 1, close, env);
                iter_b = semis[0] + 1;
            } else {
                // enhanced for: `for (Type x : coll)`
                int colon = -1;
                for (int q = open + 1; q < close; ++q)
                    if (is_text(q, ":")) {
                        colon = q;
                        break;
                    }
                if (colon > 0) {
                    process_statement(colon + 1, close, env);  // collection reads
                    std::vector<int> rhs;
                    for (int q = colon + 1; q < close; ++q) {
                        auto it = node_at_.find(q);
                        if (it != node_at_.end()) rhs.push_back(it->second);
                    }
                    for (int q = open + 1; q < colon; ++q)
                        if (eligible(q)) {
                            write_at(q, env, rhs);
                            break;
                        }
                } else {
                    process_statement(open + 1, close, env);
                }
            }
        } else if (open >= 0) {
            process_statement(open + 1, close, env);  // while condition
        }

        int body_b = close + 1;
        int body_e = java_body(body_b, e, env);
        loop_back_pass(iter_b, body_e);
        return body_e;
    }

    // --- Python ----------------------------------------------------------

    void build_rows() {
        int i = 0;
        while (i < size()) {
            int line = toks_[i].line;
            int j = i;
            while (j < size() && toks_[j].line == line) ++j;
            rows_.push_back({i, j, toks_[i].col, line});
            i = j;
        }
    }

    int top_level_colon(int b, int e) const {
        int depth = 0;
        for (int i = b; i < e; ++i) {
            const std::string& t = text(i);
            if (t == "(" || t == "[" || t == "{") ++depth;
            else if (t == ")" || t == "]" || t == "}") --depth;
            else if (t == ":" && depth == 0) return i;
        }
        return -1;
    }

    // rows [r+1, x) more indented than rows_[r]
    int body_rows_end(int r, int r1) const {
        int x = r + 1;
        while (x < r1 && rows_[x].indent > rows_[r].indent) ++x;
        return x;
    }

    void python_block(int r0, int r1, env_t& env) {
        int r = r0;
        while (r < r1) {
            const row& rw = rows_[r];
            int first = rw.b;
            if (is_kw(first, "if")) {
                r = python_if(r, r1, env);
            } else if (is_kw(first, "for") || is_kw(first, "while")) {
                r = python_loop(r, r1, env);
            } else if (is_kw(first, "def") || is_kw(first, "class")) {
                python_signature(rw, env);
                int be = body_rows_end(r, r1);
                python_block(r + 1, be, env);
                r = be;
            } else if (is_kw(first, "with")) {
                python_with(rw, env);
                int be = body_rows_end(r, r1);
                python_block(r + 1, be, env);
                r = be;
            } else if (is_kw(first, "try") || is_kw(first, "except") ||
                       is_kw(first, "finally") || is_kw(first, "else") ||
                       is_kw(first, "elif")) {
                // handled by python_if for elif/else; stray headers scan their
                // bodies sequentially
                int colon = top_level_colon(rw.b, rw.e);
                if (colon >= 0 && colon + 1 < rw.e)
                    process_statement(colon + 1, rw.e, env);
                else if (is_kw(first, "except")) {
                    // `except E as name:` binds name
                    for (int q = rw.b; q < rw.e; ++q)
                        if (is_kw(q, "as") && q + 1 < rw.e && eligible(q + 1))
                            write_at(q + 1, env, {});
                }
                int be = body_rows_end(r, r1);
                python_block(r + 1, be, env);
                r = be;
            } else {
                process_statement(rw.b, rw.e, env);
                ++r;
            }
        }
    }

    void python_signature(const row& rw, env_t& env) {
        int open = -1;
        for (int q = rw.b; q < rw.e; ++q)
            if (is_text(q, "(")) {
                open = q;
                break;
            }
        if (open < 0) return;
        int close = match_group(open, rw.e);
        int depth = 0;
        for (int q = open; q <= close; ++q) {
            const std::string& t = text(q);
            if (t == "(" || t == "[" || t == "{") ++depth;
            else if (t == ")" || t == "]" || t == "}") --depth;
            else if (depth == 1 && toks_[q].kind == token_kind::identifier) {
                const std::string& pv = text(q - 1);
                if (pv == "(" || pv == "," || pv == "*" || pv == "**")
                    write_at(q, env, {});
            }
        }
    }

    void python_with(const row& rw, env_t& env) {
        int colon = top_level_colon(rw.b, rw.e);
        int end = colon >= 0 ? colon : rw.e;
        int as_at = -1;
        for (int q = rw.b; q < end; ++q)
            if (is_kw(q, "as")) as_at = q;
        int expr_end = as_at >= 0 ? as_at : end;
        process_statement(rw.b + 1, expr_end, env);
        if (as_at >= 0) {
            std::vector<int> rhs;
            for (int q = rw.b + 1; q < expr_end; ++q) {
                auto it = node_at_.find(q);
                if (it != node_at_.end() && nodes_[it->second].is_read)
                    rhs.push_back(it->second);
            }
            for (int q = as_at + 1; q < end; ++q)
                if (eligible(q)) write_at(q, env, rhs);
        }
        if (colon >= 0 && colon + 1 < rw.e) process_statement(colon + 1, rw.e, env);
    }

    int python_if(int r, int r1, env_t& env) {
        const env_t before = env;
        std::vector<env_t> branch_envs;
        bool saw_else = false;
        int cur = r;
        bool first_branch = true;
        while (cur < r1) {
            const row& rw = rows_[cur];
            int first = rw.b;
            bool is_branch = first_branch
                                 ? is_kw(first, "if")
                                 : rows_[cur].indent == rows_[r].indent &&
                                       (is_kw(first, "elif") || is_kw(first, "else"));
            if (!is_branch) break;
            first_branch = false;
            int colon = top_level_colon(rw.b, rw.e);
            int cond_end = colon >= 0 ? colon : rw.e;
            env_t cond_env = before;
            if (!is_kw(first, "else") && cond_end > rw.b + 1)
                process_statement(rw.b + 1, cond_end, cond_env);
            env_t body_env = cond_env;
            if (colon >= 0 && colon + 1 < rw.e)
                process_statement(colon + 1, rw.e, body_env);
            int be = body_rows_end(cur, r1);
            python_block(cur + 1, be, body_env);
            branch_envs.push_back(body_env);
            if (is_kw(first, "else")) {
                saw_else = true;
                cur = be;
                break;
            }
            cur = be;
        }
        env_t joined = saw_else ? env_t{} : before;
        for (const auto& be : branch_envs) joined = union_envs(joined, be);
        env = joined;
        return cur;
    }

    int python_loop(int r, int r1, env_t& env) {
        const row& rw = rows_[r];
        int colon = top_level_colon(rw.b, rw.e);
        int header_end = colon >= 0 ? colon : rw.e;
        if (is_kw(rw.b, "for")) {
            int in_at = -1;
            for (int q = rw.b + 1; q < header_end; ++q)
                if (is_kw(q, "in")) {
                    in_at = q;
                    break;
                }
            if (in_at > 0) {
                process_statement(in_at + 1, header_end, env);  // iterable reads
                std::vector<int> rhs;
                for (int q = in_at + 1; q < header_end; ++q) {
                    auto it = node_at_.find(q);
                    if (it != node_at_.end() && nodes_[it->second].is_read)
                        rhs.push_back(it->second);
                }
                for (int q = rw.b + 1; q < in_at; ++q)
                    if (eligible(q)) write_at(q, env, rhs);
            } else {
                process_statement(rw.b + 1, header_end, env);
            }
        } else {
            process_statement(rw.b + 1, header_end, env);  // while condition
        }
        if (colon >= 0 && colon + 1 < rw.e) process_statement(colon + 1, rw.e, env);
        int be = body_rows_end(r, r1);
        python_block(r + 1, be, env);
        int body_tok_e = be > r + 1 ? rows_[be - 1].e : rw.e;
        loop_back_pass(rw.b, body_tok_e);
        return be;
    }

    // --- loop-carried edges ----------------------------------------------

    // After a loop body has been scanned once, wire loop-carried values: a
    // read inside the iterated region observes the previous iteration's last
    // write unless a committed write of the same variable precedes it within
    // the current iteration. Committed means an earlier statement, since an
    // assignment writes only after its right-hand side has been read.
    void loop_back_pass(int iter_b, int body_e) {
        std::map<std::string, int> last_write;
        for (const auto& [tok, id] : node_at_) {
            if (tok < iter_b || tok >= body_e) continue;
            if (nodes_[id].is_write) {
                auto it = last_write.find(nodes_[id].name);
                if (it == last_write.end() || nodes_[it->second].token_index < tok)
                    last_write[nodes_[id].name] = id;
            }
        }
        if (last_write.empty()) return;
        for (const auto& [tok, id] : node_at_) {
            if (tok < iter_b || tok >= body_e || !nodes_[id].is_read) continue;
            auto it = last_write.find(nodes_[id].name);
            if (it == last_write.end()) continue;
            bool shadowed = false;
            for (const auto& [wtok, wid] : node_at_) {
                if (wtok < iter_b || wtok >= tok) continue;
                if (!nodes_[wid].is_write || nodes_[wid].name != nodes_[id].name) continue;
                if (stmt_of_[wtok] != stmt_of_[tok]) {
                    shadowed = true;
                    break;
                }
            }
            if (!shadowed) add_edge(it->second, id, dfg_kind::loop_back);
        }
    }

    void finish_ordinals() {
        std::map<std::string, int> counts;
        std::vector<int> order(nodes_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return nodes_[a].token_index < nodes_[b].token_index;
        });
        std::vector<dfg_node> sorted;
        std::vector<int> remap(nodes_.size());
        for (int idx : order) {
            remap[idx] = static_cast<int>(sorted.size());
            dfg_node nd = nodes_[idx];
            nd.ordinal = ++counts[nd.name];
            sorted.push_back(nd);
        }
        std::map<dfg_edge, bool> remapped;
        for (const auto& [e, v] : edge_set_)
            remapped[{remap[e.src], remap[e.dst], e.kind}] = v;
        nodes_ = std::move(sorted);
        edge_set_ = std::move(remapped);
    }
};

}  // namespace detail

inline data_flow_graph extract_dfg(const std::vector<lex_token>& code,
                                   const std::vector<int>& stmt_of, language lang) {
    detail::dfg_builder b(code, stmt_of, lang);
    return b.run();
}

// ---------------------------------------------------------------------------
// Full structural view
// ---------------------------------------------------------------------------

struct structured_code {
    language lang = language::java;
    std::vector<std::string> sub_tokens;
    std::vector<int> token_of;      // sub-token -> code-token index
    std::vector<int> statement_of;  // sub-token -> statement id
    data_flow_graph dfg;
};

inline structured_code parse(const std::string& src, language lang) {
    structured_code sc;
    sc.lang = lang;
    auto all = lex(src, lang);
    std::vector<lex_token> code;
    for (auto& t : all)
        if (t.kind != token_kind::comment) code.push_back(t);
    if (code.empty()) throw empty_input("source contains no code tokens");

    auto stmts = token_statements(code, lang);
    std::vector<int> sub_lo(code.size()), sub_hi(code.size());
    for (std::size_t i = 0; i < code.size(); ++i) {
        sub_lo[i] = static_cast<int>(sc.sub_tokens.size());
        if (code[i].kind == token_kind::identifier) {
            for (auto& part : split_subtokens(code[i].text)) {
                sc.sub_tokens.push_back(part);
                sc.token_of.push_back(static_cast<int>(i));
                sc.statement_of.push_back(stmts[i]);
            }
        } else {
            sc.sub_tokens.push_back(code[i].text);
            sc.token_of.push_back(static_cast<int>(i));
            sc.statement_of.push_back(stmts[i]);
        }
        sub_hi[i] = static_cast<int>(sc.sub_tokens.size());
    }

    sc.dfg = extract_dfg(code, stmts, lang);
    for (auto& nd : sc.dfg.nodes) {
        nd.sub_lo = sub_lo[nd.token_index];
        nd.sub_hi = sub_hi[nd.token_index];
    }
    return sc;
}

}  // namespace sgtrans
