#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgtrans/common.hpp"

namespace sgtrans {

// shared source/target vocabulary with four reserved ids.
class vocab {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int bos_id = 2;
    static constexpr int eos_id = 3;

    vocab() {
        for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) push(t);
    }

    // builds from token sequences: reserved ids first, then tokens ranked by
    // descending frequency, ties broken lexicographically. max_size caps the
    // total size (0 = unlimited); tokens below min_freq are dropped.
    static vocab build(const std::vector<std::vector<std::string>>& sequences,
                       size_t max_size = 0, int min_freq = 1) {
        std::map<std::string, long long> freq;
        for (const auto& seq : sequences)
            for (const auto& tok : seq) ++freq[tok];

        std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });

        vocab v;
        for (const auto& [tok, n] : ranked) {
            if (n < min_freq) break;
            if (max_size > 0 && v.size() >= max_size) break;
            if (!v.contains(tok)) v.push(tok);
        }
        return v;
    }

    int id(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? unk_id : it->second;
    }

    bool contains(const std::string& tok) const {
        return token_to_id_.count(tok) != 0;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
            throw error("vocab id " + std::to_string(id) + " out of range");
        return id_to_token_[id];
    }

    size_t size() const { return id_to_token_.size(); }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // rebuilds from a stored token list (checkpoint load).
    static vocab from_tokens(const std::vector<std::string>& toks) {
        if (toks.size() < 4 || toks[0] != "<pad>" || toks[1] != "<unk>" ||
            toks[2] != "<bos>" || toks[3] != "<eos>")
            throw io_error("vocab token list lacks reserved entries");
        vocab v;
        for (size_t i = 4; i < toks.size(); ++i) v.push(toks[i]);
        return v;
    }

private:
    void push(const std::string& tok) {
        token_to_id_[tok] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(tok);
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// per-example extension of the base vocabulary: out-of-vocabulary source
// sub-tokens get temporary ids >= vocab.size() so the copy path can point
// at them. the same surface string maps to one extended id per example.
struct extended_vocab {
    std::vector<int> src_ids;      // base ids (oov -> unk)
    std::vector<int> src_ext_ids;  // extended ids (oov -> vocab.size()+slot)
    std::vector<std::string> oov;  // oov surfaces in first-seen order

    static extended_vocab make(const vocab& v, const std::vector<std::string>& src) {
        extended_vocab ev;
        std::unordered_map<std::string, int> slot;
        for (const auto& tok : src) {
            int base = v.id(tok);
            ev.src_ids.push_back(base);
            if (base != vocab::unk_id) {
                ev.src_ext_ids.push_back(base);
                continue;
            }
            auto it = slot.find(tok);
            if (it == slot.end()) {
                it = slot.emplace(tok, static_cast<int>(ev.oov.size())).first;
                ev.oov.push_back(tok);
            }
            ev.src_ext_ids.push_back(static_cast<int>(v.size()) + it->second);
        }
        return ev;
    }

    // id for a target token: base vocab first, then this example's oov list,
    // else unk.
    int target_id(const vocab& v, const std::string& tok) const {
        int base = v.id(tok);
        if (base != vocab::unk_id) return base;
        for (size_t i = 0; i < oov.size(); ++i)
            if (oov[i] == tok) return static_cast<int>(v.size() + i);
        return vocab::unk_id;
    }

    // surface form for an extended id.
    std::string surface(const vocab& v, int id) const {
        if (id < static_cast<int>(v.size())) return v.token(id);
        size_t slot_idx = static_cast<size_t>(id) - v.size();
        if (slot_idx >= oov.size())
            throw error("extended id " + std::to_string(id) + " out of range");
        return oov[slot_idx];
    }

    int extended_size(const vocab& v) const {
        return static_cast<int>(v.size() + oov.size());
    }
};

}  // namespace sgtrans
