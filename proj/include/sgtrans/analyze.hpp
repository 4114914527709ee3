#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sgtrans/dataset.hpp"
#include "sgtrans/metrics.hpp"
#include "sgtrans/model.hpp"

namespace sgtrans {

// ascii PGM heatmap; values are clamped to [0,1] and mapped to 0..255.
template <typename Real>
void write_pgm(const std::string& path, const tensor<Real>& a) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << "P2\n" << a.cols() << " " << a.rows() << "\n255\n";
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t j = 0; j < a.cols(); ++j) {
            double v = std::clamp(static_cast<double>(a.at(i, j)), 0.0, 1.0);
            out << static_cast<int>(std::lround(v * 255.0)) << (j + 1 < a.cols() ? " " : "");
        }
        out << "\n";
    }
}

template <typename Real>
void write_matrix_csv(const std::string& path, const tensor<Real>& a) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t j = 0; j < a.cols(); ++j)
            out << static_cast<double>(a.at(i, j)) << (j + 1 < a.cols() ? "," : "");
        out << "\n";
    }
}

// mask CSV with exact "0" / "-inf" / "1" entries.
template <typename Real>
void write_mask_csv(const std::string& path, const tensor<Real>& a) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t j = 0; j < a.cols(); ++j) {
            Real v = a.at(i, j);
            if (std::isinf(static_cast<double>(v)) && v < Real(0)) out << "-inf";
            else out << static_cast<long long>(v);
            out << (j + 1 < a.cols() ? "," : "");
        }
        out << "\n";
    }
}

template <typename Real>
void dump_masks(const structure_masks<Real>& m, const std::string& dir,
                const std::string& id) {
    write_mask_csv(dir + "/" + id + "_token_mask.csv", m.token_mask);
    write_mask_csv(dir + "/" + id + "_stmt_mask.csv", m.stmt_mask);
    write_mask_csv(dir + "/" + id + "_flow.csv", m.flow);
}

template <typename Real>
attn_matrix to_attn_matrix(const tensor<Real>& t) {
    attn_matrix a;
    a.n = t.rows();
    a.w.reserve(t.values().size());
    for (Real v : t.values()) a.w.push_back(static_cast<double>(v));
    return a;
}

// per-layer attention-mass-by-distance profiles of an encoder trace,
// pooled over every head in the layer.
template <typename Real>
std::vector<std::vector<double>> layer_locality(const encode_trace<Real>& tr,
                                                int max_dist = 10) {
    std::vector<std::vector<double>> out;
    for (const auto& layer : tr.attn) {
        std::vector<attn_matrix> mats;
        for (const auto& h : layer) mats.push_back(to_attn_matrix(h));
        out.push_back(locality_profile(mats, max_dist));
    }
    return out;
}

// dumps every encoder head's attention as CSV + PGM, plus a locality
// profile CSV, for one snippet.
template <typename Real>
void analyze_snippet(model<Real>& m, const prepared<Real>& p, const std::string& out_dir) {
    rng gen(0);
    auto tr = encode(m, p.src_ids, p.masks, gen, false);
    for (size_t l = 0; l < tr.attn.size(); ++l) {
        const auto& types = m.enc[l].head_types;
        for (size_t i = 0; i < tr.attn[l].size(); ++i) {
            std::string stem = out_dir + "/layer" + std::to_string(l + 1) + "_head" +
                               std::to_string(i) + "_" + to_string(types[i]);
            write_matrix_csv(stem + ".csv", tr.attn[l][i]);
            write_pgm(stem + ".pgm", tr.attn[l][i]);
        }
    }

    auto profiles = layer_locality(tr);
    std::ofstream csv(out_dir + "/locality.csv");
    if (!csv) throw io_error("cannot write " + out_dir + "/locality.csv");
    csv << "layer,distance,mass\n";
    for (size_t l = 0; l < profiles.size(); ++l)
        for (size_t d = 0; d < profiles[l].size(); ++d)
            csv << (l + 1) << "," << (d + 1) << "," << profiles[l][d] << "\n";
}

}  // namespace sgtrans
