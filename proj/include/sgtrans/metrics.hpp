#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgtrans/common.hpp"

namespace sgtrans {

using token_seq = std::vector<std::string>;

// ---------------------------------------------------------------------------
// BLEU-4
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<token_seq, int> ngram_counts(const token_seq& s, int n) {
    std::map<token_seq, int> out;
    if (static_cast<int>(s.size()) < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i)
        ++out[token_seq(s.begin() + i, s.begin() + i + n)];
    return out;
}

}  // namespace detail

// Corpus-level BLEU on the 0..100 scale: geometric mean of modified 1..4-gram
// precisions pooled over the whole corpus, times the brevity penalty
// min(1, exp(1 - r/c)). Any zero pooled precision zeroes the score.
inline double corpus_bleu4(const std::vector<token_seq>& cands,
                           const std::vector<token_seq>& refs) {
    if (cands.size() != refs.size())
        throw shape_mismatch("corpus_bleu4: " + std::to_string(cands.size()) +
                             " candidates vs " + std::to_string(refs.size()) +
                             " references");
    if (cands.empty()) throw empty_input("corpus_bleu4: empty corpus");
    const int max_n = 4;
    std::vector<long long> matched(max_n + 1, 0), total(max_n + 1, 0);
    long long cand_len = 0, ref_len = 0;
    for (std::size_t s = 0; s < cands.size(); ++s) {
        cand_len += static_cast<long long>(cands[s].size());
        ref_len += static_cast<long long>(refs[s].size());
        for (int n = 1; n <= max_n; ++n) {
            auto cc = detail::ngram_counts(cands[s], n);
            auto rc = detail::ngram_counts(refs[s], n);
            for (const auto& [gram, count] : cc) {
                total[n] += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matched[n] += std::min(count, it->second);
            }
        }
    }
    if (cand_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        if (matched[n] == 0 || total[n] == 0) return 0.0;
        log_sum += 0.25 * std::log(static_cast<double>(matched[n]) /
                                   static_cast<double>(total[n]));
    }
    const double bp =
        cand_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return 100.0 * bp * std::exp(log_sum);
}

// Per-sentence BLEU for reporting. Precisions for n >= 2 get add-one
// smoothing so a single missing 4-gram does not zero the whole sentence.
inline double sentence_bleu4(const token_seq& cand, const token_seq& ref) {
    if (cand.empty()) return 0.0;
    const int max_n = 4;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        auto cc = detail::ngram_counts(cand, n);
        auto rc = detail::ngram_counts(ref, n);
        long long m = 0, t = 0;
        for (const auto& [gram, count] : cc) {
            t += count;
            auto it = rc.find(gram);
            if (it != rc.end()) m += std::min(count, it->second);
        }
        double p;
        if (n == 1)
            p = t > 0 ? static_cast<double>(m) / static_cast<double>(t) : 0.0;
        else
            p = static_cast<double>(m + 1) / static_cast<double>(t + 1);
        if (p == 0.0) return 0.0;
        log_sum += 0.25 * std::log(p);
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return 100.0 * bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// METEOR (exact surface matching)
// ---------------------------------------------------------------------------

namespace detail {

// Alignment search: among maximum-cardinality matchings between equal
// surfaces, find the minimum chunk count. DFS over candidate positions with
// chunk-count pruning; ref positions are tried left to right so ties resolve
// to the leftmost alignment. Falls back to a deterministic greedy alignment
// if the search budget runs out on pathological inputs.
struct meteor_aligner {
    const token_seq& cand;
    const token_seq& ref;
    std::map<std::string, int> needed;  // matches still required per surface
    std::map<std::string, int> cand_left;
    std::vector<int> assign;  // cand position -> ref position or -1
    std::vector<bool> ref_used;
    int best_chunks = 1 << 30;
    std::vector<int> best_assign;
    long long budget = 200000;

    meteor_aligner(const token_seq& c, const token_seq& r) : cand(c), ref(r) {
        std::map<std::string, int> cc, rc;
        for (const auto& w : c) ++cc[w];
        for (const auto& w : r) ++rc[w];
        for (const auto& [w, n] : cc) {
            auto it = rc.find(w);
            needed[w] = it == rc.end() ? 0 : std::min(n, it->second);
            cand_left[w] = n;
        }
        assign.assign(c.size(), -1);
        ref_used.assign(r.size(), false);
    }

    int match_count() const {
        int m = 0;
        for (const auto& [w, n] : needed) m += n;
        return m;
    }

    void dfs(std::size_t idx, int chunks) {
        if (chunks >= best_chunks) return;
        if (budget-- <= 0) return;
        if (idx == cand.size()) {
            best_chunks = chunks;
            best_assign = assign;
            return;
        }
        const std::string& w = cand[idx];
        auto need_it = needed.find(w);
        const int need = need_it->second;
        const int left = cand_left[w];

        // try matching this occurrence
        if (need > 0) {
            --need_it->second;
            --cand_left[w];
            const int prev = idx > 0 ? assign[idx - 1] : -2;
            for (std::size_t p = 0; p < ref.size(); ++p) {
                if (ref_used[p] || ref[p] != w) continue;
                const bool contiguous = prev >= 0 && static_cast<int>(p) == prev + 1;
                ref_used[p] = true;
                assign[idx] = static_cast<int>(p);
                dfs(idx + 1, chunks + (contiguous ? 0 : 1));
                assign[idx] = -1;
                ref_used[p] = false;
            }
            ++need_it->second;
            ++cand_left[w];
        }
        // or leave it unmatched, when enough later occurrences remain
        if (left - 1 >= need) {
            --cand_left[w];
            dfs(idx + 1, chunks);
            ++cand_left[w];
        }
    }

    // Greedy fallback: prefer the ref slot adjacent to the previous match.
    int greedy_chunks() {
        std::map<std::string, int> need = needed;
        std::fill(ref_used.begin(), ref_used.end(), false);
        int chunks = 0, prev = -2;
        std::map<std::string, int> left = cand_left;
        for (std::size_t idx = 0; idx < cand.size(); ++idx) {
            const std::string& w = cand[idx];
            if (need[w] > 0 && need[w] == left[w]) {
                int pick = -1;
                if (prev >= 0 && static_cast<std::size_t>(prev + 1) < ref.size() &&
                    !ref_used[prev + 1] && ref[prev + 1] == w)
                    pick = prev + 1;
                else
                    for (std::size_t p = 0; p < ref.size(); ++p)
                        if (!ref_used[p] && ref[p] == w) {
                            pick = static_cast<int>(p);
                            break;
                        }
                ref_used[pick] = true;
                chunks += pick == prev + 1 ? 0 : 1;
                prev = pick;
                --need[w];
                --left[w];
            } else {
                if (need[w] > 0 && left[w] > need[w]) {
                    // match greedily anyway if a slot lines up with the chunk
                    int pick = -1;
                    if (prev >= 0 && static_cast<std::size_t>(prev + 1) < ref.size() &&
                        !ref_used[prev + 1] && ref[prev + 1] == w)
                        pick = prev + 1;
                    if (pick >= 0) {
                        ref_used[pick] = true;
                        prev = pick;
                        --need[w];
                    } else {
                        prev = -2;
                    }
                } else {
                    prev = -2;
                }
                --left[w];
            }
        }
        // any unplaced required matches each start their own chunk
        for (const auto& [w, n] : need) chunks += n;
        return std::max(chunks, 1);
    }

    int solve() {
        if (match_count() == 0) return 0;
        dfs(0, 0);
        if (!best_assign.empty()) return best_chunks;
        return greedy_chunks();
    }
};

}  // namespace detail

// Harmonic-mean METEOR with exact surface matching: recall-weighted F times
// a fragmentation penalty. Parameters alpha 0.9, beta 3, gamma 0.5.
inline double sentence_meteor(const token_seq& cand, const token_seq& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    detail::meteor_aligner al(cand, ref);
    const int m = al.match_count();
    if (m == 0) return 0.0;
    const int chunks = al.solve();
    const double p = static_cast<double>(m) / static_cast<double>(cand.size());
    const double r = static_cast<double>(m) / static_cast<double>(ref.size());
    const double f = p * r / (0.9 * p + 0.1 * r);
    const double frag = static_cast<double>(chunks) / static_cast<double>(m);
    const double penalty = 0.5 * frag * frag * frag;
    return (1.0 - penalty) * f;
}

inline double corpus_meteor(const std::vector<token_seq>& cands,
                            const std::vector<token_seq>& refs) {
    if (cands.size() != refs.size())
        throw shape_mismatch("corpus_meteor: size mismatch");
    if (cands.empty()) throw empty_input("corpus_meteor: empty corpus");
    double sum = 0;
    for (std::size_t i = 0; i < cands.size(); ++i)
        sum += sentence_meteor(cands[i], refs[i]);
    return sum / static_cast<double>(cands.size());
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

namespace detail {

inline int lcs_len(const token_seq& a, const token_seq& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                          : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace detail

// LCS-based F-score with the precision/recall weight beta = P/R. With
// P = LCS/|cand| and R = LCS/|ref| this reduces to PR(P^2+R^2)/(P^3+R^3).
inline double sentence_rouge_l(const token_seq& cand, const token_seq& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    const int lcs = detail::lcs_len(cand, ref);
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    return p * r * (p * p + r * r) / (p * p * p + r * r * r);
}

inline double corpus_rouge_l(const std::vector<token_seq>& cands,
                             const std::vector<token_seq>& refs) {
    if (cands.size() != refs.size())
        throw shape_mismatch("corpus_rouge_l: size mismatch");
    if (cands.empty()) throw empty_input("corpus_rouge_l: empty corpus");
    double sum = 0;
    for (std::size_t i = 0; i < cands.size(); ++i)
        sum += sentence_rouge_l(cands[i], refs[i]);
    return sum / static_cast<double>(cands.size());
}

// ---------------------------------------------------------------------------
// Attention locality profile
// ---------------------------------------------------------------------------

struct attn_matrix {
    std::size_t n = 0;
    std::vector<double> w;  // row-major [n x n]
};

// Distribution of attention mass over pairwise distances 1..max_dist,
// pooled across all given matrices and normalized to sum to one.
inline std::vector<double> locality_profile(const std::vector<attn_matrix>& atts,
                                            int max_dist = 10) {
    if (atts.empty()) throw empty_input("locality_profile: no attention matrices");
    std::vector<double> mass(static_cast<std::size_t>(max_dist), 0.0);
    for (const auto& a : atts) {
        const std::size_t n = a.n;
        if (a.w.size() != n * n)
            throw shape_mismatch("locality_profile: matrix is not square");
        for (int d = 1; d <= max_dist; ++d)
            for (std::size_t i = 0; i < n; ++i) {
                if (i + static_cast<std::size_t>(d) < n)
                    mass[d - 1] += a.w[i * n + i + d];
                if (i >= static_cast<std::size_t>(d))
                    mass[d - 1] += a.w[i * n + i - d];
            }
    }
    double denom = 0.0;
    for (double v : mass) denom += v;
    if (denom > 0.0)
        for (double& v : mass) v /= denom;
    return mass;
}

}  // namespace sgtrans
