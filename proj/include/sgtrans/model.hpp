#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sgtrans/config.hpp"
#include "sgtrans/dataset.hpp"
#include "sgtrans/masks.hpp"
#include "sgtrans/rng.hpp"
#include "sgtrans/tensor.hpp"
#include "sgtrans/vocab.hpp"

namespace sgtrans {

enum class head_type { token, stmt, flow, standard };

inline std::string to_string(head_type t) {
    switch (t) {
        case head_type::token: return "token";
        case head_type::stmt: return "stmt";
        case head_type::flow: return "flow";
        default: return "std";
    }
}

// head flavors of one encoder layer, in fixed order.
inline std::vector<head_type> layer_head_types(const head_counts& hc) {
    std::vector<head_type> out;
    for (int i = 0; i < hc.token_heads; ++i) out.push_back(head_type::token);
    for (int i = 0; i < hc.stmt_heads; ++i) out.push_back(head_type::stmt);
    for (int i = 0; i < hc.flow_heads; ++i) out.push_back(head_type::flow);
    for (int i = 0; i < hc.global_heads; ++i) out.push_back(head_type::standard);
    return out;
}

// sinusoidal position rows for the given absolute positions.
template <typename Real>
tensor<Real> position_encoding(const std::vector<int>& positions, int d_model) {
    std::vector<Real> v(positions.size() * static_cast<size_t>(d_model));
    for (size_t r = 0; r < positions.size(); ++r)
        for (int j = 0; j < d_model; ++j) {
            double angle = positions[r] /
                           std::pow(10000.0, (2.0 * (j / 2)) / static_cast<double>(d_model));
            v[r * d_model + j] = static_cast<Real>(j % 2 == 0 ? std::sin(angle)
                                                              : std::cos(angle));
        }
    return tensor<Real>::from(positions.size(), static_cast<size_t>(d_model), std::move(v));
}

template <typename Real>
tensor<Real> position_encoding(size_t n, int d_model) {
    std::vector<int> pos(n);
    for (size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
    return position_encoding<Real>(pos, d_model);
}

// additive causal mask: 0 on and below the diagonal, -inf above.
template <typename Real>
tensor<Real> causal_mask(size_t n) {
    const Real ninf = -std::numeric_limits<Real>::infinity();
    std::vector<Real> v(n * n, Real(0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) v[i * n + j] = ninf;
    return tensor<Real>::from(n, n, std::move(v));
}

// named, insertion-ordered learnable parameters.
template <typename Real>
struct param_store {
    std::vector<std::pair<std::string, tensor<Real>>> items;

    tensor<Real> add_glorot(const std::string& name, size_t r, size_t c, rng& gen,
                            size_t fan_in, size_t fan_out) {
        tensor<Real> t = tensor<Real>::zeros(r, c, true);
        init_glorot(t, gen, fan_in, fan_out);
        items.emplace_back(name, t);
        return t;
    }

    tensor<Real> add_const(const std::string& name, size_t r, size_t c, Real v) {
        tensor<Real> t = tensor<Real>::filled(r, c, v, true);
        items.emplace_back(name, t);
        return t;
    }

    tensor<Real>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [n, t] : items) t.zero_grad();
    }
};

template <typename Real = float>
struct model {
    struct head_params {
        tensor<Real> wq, wk, wv;
    };
    struct attn_params {
        std::vector<head_params> heads;
        tensor<Real> wo;
    };
    struct ffn_params {
        tensor<Real> w1, b1, w2, b2;
    };
    struct ln_params {
        tensor<Real> gain, bias;
    };
    struct enc_layer {
        attn_params attn;
        ln_params ln1;
        ffn_params ffn;
        ln_params ln2;
        std::vector<head_type> head_types;
    };
    struct dec_layer {
        attn_params self_attn;
        ln_params ln1;
        attn_params cross_attn;
        ln_params ln2;
        ffn_params ffn;
        ln_params ln3;
    };

    model_config cfg;
    vocab vb;
    param_store<Real> params;

    tensor<Real> src_embed, tgt_embed;
    std::vector<enc_layer> enc;
    std::vector<dec_layer> dec;
    tensor<Real> copy_w;                      // copy-attention bilinear map
    tensor<Real> vec_s, vec_w, vec_c, b_gen;  // generation-gate parameters
    tensor<Real> out_ws, out_wc;              // vocab projections of state and context

    static model create(model_config config, const vocab& v, rng& gen) {
        config.vocab_size = static_cast<int>(v.size());
        config.validate();
        if (config.vocab_size < 5) throw config_error("vocabulary has no content tokens");

        model m;
        m.cfg = config;
        m.vb = v;
        auto& ps = m.params;
        const size_t dm = static_cast<size_t>(config.d_model);
        const size_t dh = static_cast<size_t>(config.d());
        const size_t dff = static_cast<size_t>(config.d_ff);
        const size_t vs = static_cast<size_t>(config.vocab_size);

        m.src_embed = ps.add_glorot("src_embed", vs, dm, gen, vs, dm);
        m.tgt_embed = config.share_src_tgt_embeddings
                          ? m.src_embed
                          : ps.add_glorot("tgt_embed", vs, dm, gen, vs, dm);

        auto make_attn = [&](const std::string& prefix, int heads) {
            attn_params ap;
            for (int i = 0; i < heads; ++i) {
                head_params hp;
                std::string hstr = prefix + ".h" + std::to_string(i);
                hp.wq = ps.add_glorot(hstr + ".wq", dm, dh, gen, dm, dh);
                hp.wk = ps.add_glorot(hstr + ".wk", dm, dh, gen, dm, dh);
                hp.wv = ps.add_glorot(hstr + ".wv", dm, dh, gen, dm, dh);
                ap.heads.push_back(hp);
            }
            ap.wo = ps.add_glorot(prefix + ".wo", dm, dm, gen, dm, dm);
            return ap;
        };
        auto make_ln = [&](const std::string& prefix) {
            ln_params lp;
            lp.gain = ps.add_const(prefix + ".gain", 1, dm, Real(1));
            lp.bias = ps.add_const(prefix + ".bias", 1, dm, Real(0));
            return lp;
        };
        auto make_ffn = [&](const std::string& prefix) {
            ffn_params fp;
            fp.w1 = ps.add_glorot(prefix + ".w1", dm, dff, gen, dm, dff);
            fp.b1 = ps.add_const(prefix + ".b1", 1, dff, Real(0));
            fp.w2 = ps.add_glorot(prefix + ".w2", dff, dm, gen, dff, dm);
            fp.b2 = ps.add_const(prefix + ".b2", 1, dm, Real(0));
            return fp;
        };

        auto plan = head_plan(config.l_enc, config.h, config.k);
        for (int l = 0; l < config.l_enc; ++l) {
            std::string pre = "enc.l" + std::to_string(l);
            enc_layer el;
            el.attn = make_attn(pre, config.h);
            el.ln1 = make_ln(pre + ".ln1");
            el.ffn = make_ffn(pre + ".ffn");
            el.ln2 = make_ln(pre + ".ln2");
            el.head_types = layer_head_types(plan[static_cast<size_t>(l)]);
            m.enc.push_back(el);
        }
        for (int l = 0; l < config.l_dec; ++l) {
            std::string pre = "dec.l" + std::to_string(l);
            dec_layer dl;
            dl.self_attn = make_attn(pre + ".self", config.h);
            dl.ln1 = make_ln(pre + ".ln1");
            dl.cross_attn = make_attn(pre + ".cross", config.h);
            dl.ln2 = make_ln(pre + ".ln2");
            dl.ffn = make_ffn(pre + ".ffn");
            dl.ln3 = make_ln(pre + ".ln3");
            m.dec.push_back(dl);
        }

        m.copy_w = ps.add_glorot("copy.w", dm, dm, gen, dm, dm);
        m.vec_s = ps.add_glorot("copy.vs", dm, 1, gen, dm, 1);
        m.vec_w = ps.add_glorot("copy.vw", dm, 1, gen, dm, 1);
        m.vec_c = ps.add_glorot("copy.vc", dm, 1, gen, dm, 1);
        m.b_gen = ps.add_const("copy.bgen", 1, 1, Real(0));
        m.out_ws = ps.add_glorot("out.ws", vs, dm, gen, dm, vs);
        m.out_wc = ps.add_glorot("out.wc", vs, dm, gen, dm, vs);
        return m;
    }
};

// one attention head. x_q gives queries, x_kv keys/values; masks are
// required for token/stmt/flow heads, add_mask optionally restricts a
// standard head (causal decoding).
template <typename Real>
struct head_result {
    tensor<Real> out;
    tensor<Real> attn;
};

template <typename Real>
head_result<Real> attention_head(const typename model<Real>::head_params& hp,
                                 head_type type, const tensor<Real>& x_q,
                                 const tensor<Real>& x_kv,
                                 const structure_masks<Real>* masks,
                                 const tensor<Real>* add_mask, double mu,
                                 bool elementwise, int d_head) {
    auto q = matmul(x_q, hp.wq);
    auto k = matmul(x_kv, hp.wk);
    auto v = matmul(x_kv, hp.wv);
    auto scores = matmul(q, transpose(k));
    const Real inv = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_head)));

    tensor<Real> p;
    switch (type) {
        case head_type::token:
            p = softmax_rows(scale(scores, inv), masks->token_mask);
            break;
        case head_type::stmt:
            p = softmax_rows(scale(scores, inv), masks->stmt_mask);
            break;
        case head_type::flow: {
            auto bias = elementwise ? mul(scores, masks->flow)
                                    : matmul(scores, masks->flow);
            auto total = add(scores, scale(bias, static_cast<Real>(mu)));
            p = softmax_rows(scale(total, inv));
            break;
        }
        default:
            p = add_mask ? softmax_rows(scale(scores, inv), *add_mask)
                         : softmax_rows(scale(scores, inv));
    }
    return {matmul(p, v), p};
}

template <typename Real>
struct mh_result {
    tensor<Real> out;
    std::vector<tensor<Real>> attn;
};

template <typename Real>
mh_result<Real> multi_head(const typename model<Real>::attn_params& ap,
                           const std::vector<head_type>& types, const tensor<Real>& x_q,
                           const tensor<Real>& x_kv, const structure_masks<Real>* masks,
                           const tensor<Real>* add_mask, const model_config& cfg) {
    std::vector<tensor<Real>> parts;
    mh_result<Real> r;
    for (size_t i = 0; i < ap.heads.size(); ++i) {
        auto hr = attention_head<Real>(ap.heads[i], types[i], x_q, x_kv, masks, add_mask,
                                       cfg.mu, cfg.dataflow_elementwise, cfg.d());
        parts.push_back(hr.out);
        r.attn.push_back(hr.attn);
    }
    r.out = matmul(concat_cols(parts), ap.wo);
    return r;
}

namespace detail {

template <typename Real>
tensor<Real> sublayer(const tensor<Real>& x, const tensor<Real>& sub,
                      const typename model<Real>::ln_params& ln, double p, rng& gen,
                      bool training) {
    return layer_norm(add(x, dropout(sub, p, gen, training)), ln.gain, ln.bias);
}

template <typename Real>
tensor<Real> feed_forward(const typename model<Real>::ffn_params& fp,
                          const tensor<Real>& x) {
    auto hidden = relu(add_broadcast(matmul(x, fp.w1), fp.b1));
    return add_broadcast(matmul(hidden, fp.w2), fp.b2);
}

}  // namespace detail

template <typename Real>
struct encode_trace {
    tensor<Real> memory;                          // n x d_model
    std::vector<std::vector<tensor<Real>>> attn;  // [layer][head], each n x n
};

template <typename Real>
encode_trace<Real> encode(model<Real>& m, const std::vector<int>& src_ids,
                          const structure_masks<Real>& masks, rng& gen, bool training,
                          const std::vector<int>* positions = nullptr) {
    if (src_ids.empty()) throw empty_input("encode: no source tokens");
    if (static_cast<int>(src_ids.size()) > m.cfg.max_src_len)
        throw shape_mismatch("encode: source longer than max_src_len");

    auto emb = scale(embedding(m.src_embed, src_ids),
                     static_cast<Real>(std::sqrt(static_cast<double>(m.cfg.d_model))));
    auto pe = positions ? position_encoding<Real>(*positions, m.cfg.d_model)
                        : position_encoding<Real>(src_ids.size(), m.cfg.d_model);
    auto x = dropout(add(emb, pe), m.cfg.dropout_p, gen, training);

    encode_trace<Real> tr;
    for (auto& layer : m.enc) {
        auto mh = multi_head<Real>(layer.attn, layer.head_types, x, x, &masks, nullptr,
                                   m.cfg);
        x = detail::sublayer<Real>(x, mh.out, layer.ln1, m.cfg.dropout_p, gen, training);
        x = detail::sublayer<Real>(x, detail::feed_forward<Real>(layer.ffn, x), layer.ln2,
                                   m.cfg.dropout_p, gen, training);
        tr.attn.push_back(std::move(mh.attn));
    }
    tr.memory = x;
    return tr;
}

template <typename Real>
struct decode_trace {
    tensor<Real> probs;      // T x extended_size
    tensor<Real> p_gen;      // T x 1
    tensor<Real> copy_attn;  // T x n
    tensor<Real> states;     // T x d_model
};

// teacher-forced decode of the whole target prefix. tgt_in holds base-vocab
// ids (out-of-vocabulary tokens enter as unk); src_ext_ids maps each source
// position into the extended vocabulary of size extended_size.
template <typename Real>
decode_trace<Real> decode(model<Real>& m, const tensor<Real>& memory,
                          const std::vector<int>& tgt_in,
                          const std::vector<int>& src_ext_ids, int extended_size,
                          rng& gen, bool training) {
    if (tgt_in.empty()) throw empty_input("decode: no target tokens");
    if (static_cast<int>(tgt_in.size()) > m.cfg.max_tgt_len)
        throw shape_mismatch("decode: target longer than max_tgt_len");
    if (src_ext_ids.size() != memory.rows())
        throw shape_mismatch("decode: src_ext_ids does not match memory rows");
    if (extended_size < m.cfg.vocab_size)
        throw shape_mismatch("decode: extended vocabulary smaller than base");

    const size_t t_len = tgt_in.size();
    const std::vector<head_type> std_types(static_cast<size_t>(m.cfg.h),
                                           head_type::standard);
    auto emb_raw = embedding(m.tgt_embed, tgt_in);
    auto emb = scale(emb_raw,
                     static_cast<Real>(std::sqrt(static_cast<double>(m.cfg.d_model))));
    auto x = dropout(add(emb, position_encoding<Real>(t_len, m.cfg.d_model)),
                     m.cfg.dropout_p, gen, training);
    auto causal = causal_mask<Real>(t_len);

    for (auto& layer : m.dec) {
        auto self = multi_head<Real>(layer.self_attn, std_types, x, x, nullptr, &causal,
                                     m.cfg);
        x = detail::sublayer<Real>(x, self.out, layer.ln1, m.cfg.dropout_p, gen, training);
        auto cross = multi_head<Real>(layer.cross_attn, std_types, x, memory, nullptr,
                                      nullptr, m.cfg);
        x = detail::sublayer<Real>(x, cross.out, layer.ln2, m.cfg.dropout_p, gen,
                                   training);
        x = detail::sublayer<Real>(x, detail::feed_forward<Real>(layer.ffn, x), layer.ln3,
                                   m.cfg.dropout_p, gen, training);
    }

    decode_trace<Real> tr;
    tr.states = x;

    // copy attention over the source memory.
    auto cscores = scale(matmul(matmul(x, m.copy_w), transpose(memory)),
                         static_cast<Real>(1.0 / std::sqrt(static_cast<double>(
                                                     m.cfg.d_model))));
    tr.copy_attn = softmax_rows(cscores);
    auto context = matmul(tr.copy_attn, memory);

    auto p_vocab = softmax_rows(
        add(matmul(x, transpose(m.out_ws)), matmul(context, transpose(m.out_wc))));

    auto gate = add(add(matmul(x, m.vec_s), matmul(emb_raw, m.vec_w)),
                    matmul(context, m.vec_c));
    tr.p_gen = sigmoid(add_broadcast(gate, m.b_gen));

    auto one_minus = add_broadcast(scale(tr.p_gen, Real(-1)), tensor<Real>::scalar(1));
    auto gen_part = mul_broadcast(pad_cols(p_vocab, static_cast<size_t>(extended_size)),
                                  tr.p_gen);
    auto copy_part = mul_broadcast(
        scatter_add_cols(tr.copy_attn, src_ext_ids, static_cast<size_t>(extended_size)),
        one_minus);
    tr.probs = add(gen_part, copy_part);
    return tr;
}

// a snippet plus reference prepared for the model: ids, masks, teacher-forced
// target, extended vocabulary.
template <typename Real>
struct prepared {
    std::string id;
    std::vector<int> src_ids, src_ext_ids;
    std::vector<std::string> oov;
    structure_masks<Real> masks;
    std::vector<int> tgt_in, tgt_out;  // tgt_out is in the extended space
    std::vector<std::string> summary;
    int extended_size = 0;
    std::vector<std::string> sub_tokens;
};

template <typename Real>
prepared<Real> prepare(const vocab& vb, const model_config& cfg, const example& ex) {
    structured_code sc = ex.sc;
    const size_t limit = static_cast<size_t>(cfg.max_src_len);
    if (sc.sub_tokens.size() > limit) {
        std::cerr << "warning: snippet " << ex.id << " truncated from "
                  << sc.sub_tokens.size() << " to " << limit << " sub-tokens\n";
        sc.sub_tokens.resize(limit);
        sc.token_of.resize(limit);
        sc.statement_of.resize(limit);
        std::vector<dfg_edge> kept;
        for (const auto& e : sc.dfg.edges) {
            const auto& s = sc.dfg.nodes[static_cast<size_t>(e.src)];
            const auto& d = sc.dfg.nodes[static_cast<size_t>(e.dst)];
            if (s.sub_hi <= static_cast<int>(limit) && d.sub_hi <= static_cast<int>(limit))
                kept.push_back(e);
        }
        sc.dfg.edges = std::move(kept);
    }

    prepared<Real> p;
    p.id = ex.id;
    p.sub_tokens = sc.sub_tokens;
    auto ev = extended_vocab::make(vb, sc.sub_tokens);
    p.src_ids = std::move(ev.src_ids);
    p.src_ext_ids = std::move(ev.src_ext_ids);
    p.oov = ev.oov;
    p.masks = build_masks<Real>(sc);
    p.summary = ex.summary;
    p.extended_size = ev.extended_size(vb);

    std::vector<std::string> tgt = ex.summary;
    const size_t tgt_limit = static_cast<size_t>(cfg.max_tgt_len) - 1;
    if (tgt.size() > tgt_limit) tgt.resize(tgt_limit);
    p.tgt_in.push_back(vocab::bos_id);
    for (const auto& tok : tgt) {
        p.tgt_in.push_back(vb.id(tok));
        p.tgt_out.push_back(ev.target_id(vb, tok));
    }
    p.tgt_out.push_back(vocab::eos_id);
    return p;
}

// teacher-forced per-token negative log likelihood, mean over non-pad
// positions of this example.
template <typename Real>
tensor<Real> example_loss(model<Real>& m, const prepared<Real>& p, rng& gen,
                          bool training) {
    auto et = encode(m, p.src_ids, p.masks, gen, training);
    auto dt = decode(m, et.memory, p.tgt_in, p.src_ext_ids, p.extended_size, gen,
                     training);
    return nll_mean(dt.probs, p.tgt_out, vocab::pad_id);
}

struct gen_result {
    std::vector<std::string> tokens;
    double p_gen_mean = 0.0;
};

// beam search with length-normalized scores. width 1 is greedy decoding.
// pad/unk/bos are never emitted; eos is banned at the first step so the
// summary is non-empty.
template <typename Real>
gen_result generate(model<Real>& m, const prepared<Real>& p, int width = 1) {
    if (width < 1) throw config_error("beam width must be >= 1");
    rng gen(0);  // eval mode draws nothing
    auto et = encode(m, p.src_ids, p.masks, gen, false);

    struct beam {
        std::vector<int> ext_ids;  // emitted, extended space
        double logp = 0.0;
        double p_gen_sum = 0.0;
        bool done = false;
    };
    std::vector<beam> beams{beam{}};
    const int max_steps = m.cfg.max_tgt_len - 1;
    const int v_base = m.cfg.vocab_size;

    for (int step = 0; step < max_steps; ++step) {
        bool all_done = true;
        for (const auto& b : beams)
            if (!b.done) all_done = false;
        if (all_done) break;

        struct cand {
            size_t from;
            int id;
            double logp;
            double p_gen;
            bool done;
        };
        std::vector<cand> cands;
        for (size_t bi = 0; bi < beams.size(); ++bi) {
            const auto& b = beams[bi];
            if (b.done) {
                cands.push_back({bi, -1, b.logp, 0.0, true});
                continue;
            }
            std::vector<int> tgt_in{vocab::bos_id};
            for (int id : b.ext_ids)
                tgt_in.push_back(id < v_base ? id : vocab::unk_id);
            auto dt = decode(m, et.memory, tgt_in, p.src_ext_ids, p.extended_size, gen,
                             false);
            const size_t last = tgt_in.size() - 1;
            double pg = static_cast<double>(dt.p_gen.at(last, 0));

            // top `width` admissible ids of the last row
            std::vector<std::pair<double, int>> scored;
            for (int id = 0; id < p.extended_size; ++id) {
                if (id == vocab::pad_id || id == vocab::unk_id || id == vocab::bos_id)
                    continue;
                if (id == vocab::eos_id && step == 0) continue;
                scored.push_back(
                    {static_cast<double>(dt.probs.at(last, static_cast<size_t>(id))), id});
            }
            std::partial_sort(scored.begin(),
                              scored.begin() + std::min<size_t>(width, scored.size()),
                              scored.end(), [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            for (size_t j = 0; j < std::min<size_t>(width, scored.size()); ++j) {
                double lp = b.logp + std::log(std::max(scored[j].first, 1e-30));
                cands.push_back({bi, scored[j].second, lp, pg,
                                 scored[j].second == vocab::eos_id});
            }
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const cand& a, const cand& b) { return a.logp > b.logp; });

        std::vector<beam> next;
        for (const auto& c : cands) {
            if (next.size() >= static_cast<size_t>(width)) break;
            beam nb = beams[c.from];
            if (c.id >= 0) {
                nb.logp = c.logp;
                if (c.id == vocab::eos_id) {
                    nb.done = true;
                } else {
                    nb.ext_ids.push_back(c.id);
                    nb.p_gen_sum += c.p_gen;
                }
            }
            next.push_back(std::move(nb));
        }
        beams = std::move(next);
    }

    // length-normalized selection
    size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < beams.size(); ++i) {
        double len = static_cast<double>(beams[i].ext_ids.size() + 1);
        double s = beams[i].logp / len;
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }

    gen_result r;
    extended_vocab ev;
    ev.oov = p.oov;
    for (int id : beams[best].ext_ids) r.tokens.push_back(ev.surface(m.vb, id));
    r.p_gen_mean = beams[best].ext_ids.empty()
                       ? 0.0
                       : beams[best].p_gen_sum /
                             static_cast<double>(beams[best].ext_ids.size());
    return r;
}

// standalone copy mixture for one step: blends a base-vocab distribution
// with copy attention over the extended vocabulary.
template <typename Real>
tensor<Real> copy_mix(const tensor<Real>& p_vocab, const tensor<Real>& alpha,
                      const tensor<Real>& p_gen, const std::vector<int>& src_ext_ids,
                      int extended_size) {
    auto one_minus = add_broadcast(scale(p_gen, Real(-1)), tensor<Real>::scalar(1));
    auto gen_part =
        mul_broadcast(pad_cols(p_vocab, static_cast<size_t>(extended_size)), p_gen);
    auto copy_part = mul_broadcast(
        scatter_add_cols(alpha, src_ext_ids, static_cast<size_t>(extended_size)),
        one_minus);
    return add(gen_part, copy_part);
}

}  // namespace sgtrans
