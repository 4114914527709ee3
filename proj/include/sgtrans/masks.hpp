#pragma once

#include <limits>
#include <string>
#include <vector>

#include "sgtrans/common.hpp"
#include "sgtrans/structparse.hpp"
#include "sgtrans/tensor.hpp"

namespace sgtrans {

// Structural attention guides for one snippet, all [n x n] over sub-tokens.
// token_mask / stmt_mask are additive: 0 where attention is allowed, -inf
// where it is cut off, so the masked softmax puts exactly zero weight there.
// flow is a 0/1 adjacency: flow[i][j] = 1 when sub-token i consumes a value
// that sub-token j provides.
template <typename Real = float>
struct structure_masks {
    tensor<Real> token_mask;
    tensor<Real> stmt_mask;
    tensor<Real> flow;
};

template <typename Real = float>
structure_masks<Real> build_masks(const structured_code& sc) {
    const std::size_t n = sc.sub_tokens.size();
    if (n == 0) throw empty_input("build_masks: no sub-tokens");
    const Real ninf = -std::numeric_limits<Real>::infinity();

    std::vector<Real> tok(n * n), stmt(n * n), flow(n * n, Real(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            tok[i * n + j] = sc.token_of[i] == sc.token_of[j] ? Real(0) : ninf;
            stmt[i * n + j] = sc.statement_of[i] == sc.statement_of[j] ? Real(0) : ninf;
        }
    for (const auto& e : sc.dfg.edges) {
        const auto& src = sc.dfg.nodes[static_cast<std::size_t>(e.src)];
        const auto& dst = sc.dfg.nodes[static_cast<std::size_t>(e.dst)];
        for (int i = dst.sub_lo; i < dst.sub_hi; ++i)
            for (int j = src.sub_lo; j < src.sub_hi; ++j)
                flow[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] =
                    Real(1);
    }

    structure_masks<Real> m;
    m.token_mask = tensor<Real>::from(n, n, std::move(tok));
    m.stmt_mask = tensor<Real>::from(n, n, std::move(stmt));
    m.flow = tensor<Real>::from(n, n, std::move(flow));
    return m;
}

// How many heads of each flavor an encoder layer gets. Layers are counted
// from 1; lower layers favor local token/statement guidance, upper layers
// shift to data-flow and unconstrained heads.
struct head_counts {
    int token_heads = 0;
    int stmt_heads = 0;
    int flow_heads = 0;
    int global_heads = 0;

    int total() const { return token_heads + stmt_heads + flow_heads + global_heads; }
    bool operator==(const head_counts&) const = default;
};

inline std::vector<head_counts> head_plan(int num_layers, int num_heads, int boundary) {
    if (num_layers < 1)
        throw invalid_schedule("head_plan: need at least one layer, got " +
                               std::to_string(num_layers));
    if (num_heads < 1)
        throw invalid_schedule("head_plan: need at least one head, got " +
                               std::to_string(num_heads));
    if (boundary < num_layers)
        throw invalid_schedule("head_plan: boundary " + std::to_string(boundary) +
                               " below layer count " + std::to_string(num_layers));
    std::vector<head_counts> plan;
    const long long h = num_heads, k = boundary;
    for (long long l = 1; l <= num_layers; ++l) {
        head_counts c;
        c.token_heads = static_cast<int>(h * (k - l) / (2 * k - l));
        c.stmt_heads = c.token_heads;
        c.flow_heads = static_cast<int>(h * l / (2 * k - l));
        c.global_heads = static_cast<int>(h) - c.token_heads - c.stmt_heads - c.flow_heads;
        if (c.global_heads < 0)
            throw invalid_schedule("head_plan: layer " + std::to_string(l) +
                                   " over-allocates heads");
        plan.push_back(c);
    }
    return plan;
}

}  // namespace sgtrans
