#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sgtrans/checkpoint.hpp"
#include "sgtrans/config.hpp"
#include "sgtrans/dataset.hpp"
#include "sgtrans/metrics.hpp"
#include "sgtrans/model.hpp"

namespace sgtrans {

// Adam with bias correction; moment accumulators are kept in double no
// matter the parameter precision.
template <typename Real>
struct adam {
    double lr, beta1, beta2, eps;
    long long t = 0;
    std::vector<std::vector<double>> m1, m2;

    explicit adam(const train_config& tc)
        : lr(tc.lr), beta1(tc.beta1), beta2(tc.beta2), eps(tc.eps) {}

    void step(param_store<Real>& ps, double clip_norm = 0.0) {
        if (m1.empty()) {
            for (auto& [name, tens] : ps.items) {
                m1.emplace_back(tens.values().size(), 0.0);
                m2.emplace_back(tens.values().size(), 0.0);
            }
        }
        double gscale = 1.0;
        if (clip_norm > 0.0) {
            double sq = 0.0;
            for (auto& [name, tens] : ps.items)
                for (Real g : tens.grad()) sq += static_cast<double>(g) * g;
            double norm = std::sqrt(sq);
            if (norm > clip_norm) gscale = clip_norm / norm;
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t pi = 0; pi < ps.items.size(); ++pi) {
            auto& tens = ps.items[pi].second;
            auto& vals = tens.mut_values();
            const auto& grads = tens.grad();
            for (size_t j = 0; j < vals.size(); ++j) {
                double g = static_cast<double>(grads[j]) * gscale;
                m1[pi][j] = beta1 * m1[pi][j] + (1.0 - beta1) * g;
                m2[pi][j] = beta2 * m2[pi][j] + (1.0 - beta2) * g * g;
                double mhat = m1[pi][j] / bc1;
                double vhat = m2[pi][j] / bc2;
                vals[j] = static_cast<Real>(static_cast<double>(vals[j]) -
                                            lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

// per-token mean loss over one batch of prepared examples, pooled across
// examples so every target token carries equal weight.
template <typename Real>
tensor<Real> batch_loss(model<Real>& m, const std::vector<prepared<Real>>& batch,
                        rng& gen, bool training) {
    if (batch.empty()) throw empty_input("batch_loss: empty batch");
    size_t total = 0;
    for (const auto& p : batch) total += p.tgt_out.size();
    tensor<Real> loss;
    bool first = true;
    for (const auto& p : batch) {
        Real w = static_cast<Real>(static_cast<double>(p.tgt_out.size()) /
                                   static_cast<double>(total));
        auto piece = scale(example_loss(m, p, gen, training), w);
        loss = first ? piece : add(loss, piece);
        first = false;
    }
    return loss;
}

struct epoch_stats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_bleu4 = 0.0;
    double seconds = 0.0;
};

struct train_result {
    std::vector<epoch_stats> history;
    double best_val_bleu4 = -1.0;
    int best_epoch = 0;
    std::string best_checkpoint;
};

// greedy-decodes every example and scores corpus BLEU-4 against the
// references.
template <typename Real>
double validation_bleu4(model<Real>& m, const std::vector<prepared<Real>>& examples) {
    std::vector<token_seq> cands, refs;
    for (const auto& p : examples) {
        cands.push_back(generate(m, p, 1).tokens);
        refs.push_back(p.summary);
    }
    return corpus_bleu4(cands, refs);
}

// full training run: shuffled minibatches, Adam, per-epoch validation
// BLEU-4, metrics csv, best-checkpoint tracking with early stopping.
template <typename Real>
train_result train(model<Real>& m, const std::vector<example>& train_set,
                   const std::vector<example>& valid_set, const train_config& tc,
                   const std::string& out_dir, rng& gen, std::ostream* log = nullptr) {
    tc.validate();
    if (train_set.empty()) throw empty_input("train: no training examples");
    if (valid_set.empty()) throw empty_input("train: no validation examples");

    std::vector<prepared<Real>> train_prep, valid_prep;
    for (const auto& ex : train_set) train_prep.push_back(prepare<Real>(m.vb, m.cfg, ex));
    for (const auto& ex : valid_set) valid_prep.push_back(prepare<Real>(m.vb, m.cfg, ex));

    std::ofstream csv(out_dir + "/metrics.csv");
    if (!csv) throw io_error("cannot write " + out_dir + "/metrics.csv");
    csv << "epoch,train_loss,val_bleu4,seconds\n";

    adam<Real> opt(tc);
    train_result result;

    std::vector<size_t> order(train_prep.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        gen.shuffle(order);

        double loss_weighted = 0.0;
        size_t tokens_seen = 0;
        size_t batch_index = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(tc.batch_size)) {
            std::vector<prepared<Real>> batch;
            for (size_t i = off;
                 i < std::min(order.size(), off + static_cast<size_t>(tc.batch_size)); ++i)
                batch.push_back(train_prep[order[i]]);
            size_t batch_tokens = 0;
            for (const auto& p : batch) batch_tokens += p.tgt_out.size();

            m.params.zero_grad();
            auto loss = batch_loss(m, batch, gen, true);
            double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw non_finite_loss("non-finite loss at epoch " + std::to_string(epoch) +
                                      " batch " + std::to_string(batch_index));
            loss.backward();
            opt.step(m.params, tc.grad_clip_norm);

            loss_weighted += lv * static_cast<double>(batch_tokens);
            tokens_seen += batch_tokens;
            ++batch_index;
        }

        epoch_stats st;
        st.epoch = epoch;
        st.train_loss = loss_weighted / static_cast<double>(tokens_seen);
        st.val_bleu4 = validation_bleu4(m, valid_prep);
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                         .count();
        result.history.push_back(st);

        csv << st.epoch << "," << st.train_loss << "," << st.val_bleu4 << ","
            << st.seconds << "\n";
        csv.flush();
        if (log)
            (*log) << "epoch " << st.epoch << " train_loss " << st.train_loss
                   << " val_bleu4 " << st.val_bleu4 << "\n";

        if (st.val_bleu4 > result.best_val_bleu4) {
            result.best_val_bleu4 = st.val_bleu4;
            result.best_epoch = epoch;
            std::string name = "checkpoint_epoch" + std::to_string(epoch) + ".bin";
            save_checkpoint(m, out_dir + "/" + name);
            result.best_checkpoint = out_dir + "/" + name;
            std::ofstream best(out_dir + "/best");
            best << name << "\n";
        }
        if (epoch - result.best_epoch >= tc.patience) break;
    }
    return result;
}

}  // namespace sgtrans
