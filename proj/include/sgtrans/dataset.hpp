#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sgtrans/common.hpp"
#include "sgtrans/structparse.hpp"

namespace sgtrans {

using json = nlohmann::ordered_json;

// one line of a raw dataset file.
struct raw_record {
    std::string id;
    language lang = language::java;
    std::string code;
    std::string summary;
};

// lowercased whitespace tokenization, matching sub-token casing.
inline std::vector<std::string> tokenize_summary(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

inline json parse_json_line(const std::string& line, const std::string& path, size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw io_error(path + " line " + std::to_string(lineno) + ": not a JSON object");
    return j;
}

inline std::string require_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string())
        throw io_error(where + ": missing string field '" + std::string(key) + "'");
    return j[key].get<std::string>();
}

}  // namespace detail

inline std::vector<raw_record> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open dataset file " + path);
    std::vector<raw_record> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + " line " + std::to_string(lineno);
        json j = detail::parse_json_line(line, path, lineno);
        raw_record r;
        r.id = detail::require_string(j, "id", where);
        r.lang = language_from_string(detail::require_string(j, "language", where));
        r.code = detail::require_string(j, "code", where);
        r.summary = detail::require_string(j, "summary", where);
        if (r.id.empty()) throw io_error(where + ": empty id");
        if (r.code.empty()) throw io_error(where + ": empty code");
        if (r.summary.empty()) throw io_error(where + ": empty summary");
        out.push_back(std::move(r));
    }
    if (out.empty()) throw empty_input("dataset file " + path + " has no records");
    return out;
}

// structured form of one snippet, keyed by id.
struct structured_record {
    std::string id;
    structured_code sc;
};

inline json structured_to_json(const structured_record& r) {
    json j;
    j["id"] = r.id;
    j["language"] = to_string(r.sc.lang);
    j["sub_tokens"] = r.sc.sub_tokens;
    j["token_of"] = r.sc.token_of;
    j["statement_of"] = r.sc.statement_of;
    json edges = json::array();
    for (const auto& e : r.sc.dfg.edges) {
        const auto& src = r.sc.dfg.nodes[static_cast<size_t>(e.src)];
        const auto& dst = r.sc.dfg.nodes[static_cast<size_t>(e.dst)];
        edges.push_back(json::array(
            {src.sub_lo, src.sub_hi, dst.sub_lo, dst.sub_hi, to_string(e.kind)}));
    }
    j["dfg_edges"] = edges;
    return j;
}

inline structured_record structured_from_json(const json& j, const std::string& where) {
    structured_record r;
    r.id = detail::require_string(j, "id", where);
    r.sc.lang = language_from_string(detail::require_string(j, "language", where));
    for (const char* key : {"sub_tokens", "token_of", "statement_of", "dfg_edges"})
        if (!j.contains(key) || !j[key].is_array())
            throw io_error(where + ": missing array field '" + std::string(key) + "'");
    r.sc.sub_tokens = j["sub_tokens"].get<std::vector<std::string>>();
    r.sc.token_of = j["token_of"].get<std::vector<int>>();
    r.sc.statement_of = j["statement_of"].get<std::vector<int>>();
    const size_t n = r.sc.sub_tokens.size();
    if (r.sc.token_of.size() != n || r.sc.statement_of.size() != n)
        throw io_error(where + ": token_of/statement_of length mismatch");

    // rebuild a minimal node set from the serialized ranges: one node per
    // distinct occurrence span, edges by node index.
    std::map<std::pair<int, int>, int> node_of;
    auto intern = [&](int lo, int hi) {
        if (lo < 0 || hi <= lo || hi > static_cast<int>(n))
            throw io_error(where + ": dfg range [" + std::to_string(lo) + "," +
                           std::to_string(hi) + ") out of bounds");
        auto it = node_of.find({lo, hi});
        if (it != node_of.end()) return it->second;
        dfg_node nd;
        nd.sub_lo = lo;
        nd.sub_hi = hi;
        int idx = static_cast<int>(r.sc.dfg.nodes.size());
        r.sc.dfg.nodes.push_back(nd);
        node_of[{lo, hi}] = idx;
        return idx;
    };
    for (const auto& e : j["dfg_edges"]) {
        if (!e.is_array() || e.size() != 5)
            throw io_error(where + ": dfg_edges entries must be 5-element arrays");
        dfg_edge edge;
        edge.src = intern(e[0].get<int>(), e[1].get<int>());
        edge.dst = intern(e[2].get<int>(), e[3].get<int>());
        edge.kind = dfg_kind_from_string(e[4].get<std::string>());
        r.sc.dfg.edges.push_back(edge);
    }
    return r;
}

inline std::vector<structured_record> read_structured(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open structured file " + path);
    std::vector<structured_record> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + " line " + std::to_string(lineno);
        out.push_back(structured_from_json(detail::parse_json_line(line, path, lineno), where));
    }
    if (out.empty()) throw empty_input("structured file " + path + " has no records");
    return out;
}

inline void write_structured(const std::string& path,
                             const std::vector<structured_record>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write structured file " + path);
    for (const auto& r : records) out << structured_to_json(r).dump() << "\n";
}

// a training/eval example: structured source plus tokenized reference.
struct example {
    std::string id;
    structured_code sc;
    std::vector<std::string> summary;
};

inline example make_example(const raw_record& r) {
    example ex;
    ex.id = r.id;
    ex.sc = parse(r.code, r.lang);
    ex.summary = tokenize_summary(r.summary);
    if (ex.summary.empty()) throw empty_input("record " + r.id + " has a blank summary");
    return ex;
}

inline std::vector<example> load_examples(const std::string& path) {
    std::vector<example> out;
    for (const auto& r : read_dataset(path)) out.push_back(make_example(r));
    return out;
}

// model predictions, one JSON object per line.
struct prediction {
    std::string id;
    std::string summary;
    double p_gen_mean = 0.0;
};

inline std::vector<prediction> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open predictions file " + path);
    std::vector<prediction> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + " line " + std::to_string(lineno);
        json j = detail::parse_json_line(line, path, lineno);
        prediction p;
        p.id = detail::require_string(j, "id", where);
        p.summary = detail::require_string(j, "summary", where);
        if (j.contains("p_gen_mean")) p.p_gen_mean = j["p_gen_mean"].get<double>();
        out.push_back(std::move(p));
    }
    if (out.empty()) throw empty_input("predictions file " + path + " has no records");
    return out;
}

// reference summaries keyed by id; accepts full dataset files (extra keys
// are ignored) or any JSONL with id+summary.
inline std::vector<std::pair<std::string, std::string>> read_references(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open references file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + " line " + std::to_string(lineno);
        json j = detail::parse_json_line(line, path, lineno);
        out.emplace_back(detail::require_string(j, "id", where),
                         detail::require_string(j, "summary", where));
    }
    if (out.empty()) throw empty_input("references file " + path + " has no records");
    return out;
}

}  // namespace sgtrans
