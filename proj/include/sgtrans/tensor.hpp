#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sgtrans/common.hpp"
#include "sgtrans/rng.hpp"

namespace sgtrans {

// Reverse-mode autodiff on 2-D tensors. Every op builds one tape node holding
// the forward value and a closure that scatters the node's gradient into its
// parents. backward() topologically sorts the tape from a scalar root and runs
// the closures child-first. Gradients accumulate additively, so a tensor used
// twice gets the sum of both contributions.
//
// Scalars are [1x1]. There is no implicit broadcasting; the *_broadcast ops
// accept exactly [1xn], [mx1] or [1x1] on the right.

namespace detail {

template <typename Real>
struct node {
    std::size_t rows = 0, cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<node>> parents;
    std::function<void(node&)> backprop;

    std::size_t numel() const { return rows * cols; }
    void ensure_grad() {
        if (requires_grad && grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

}  // namespace detail

template <typename Real = float>
class tensor {
  public:
    using node_t = detail::node<Real>;

    std::shared_ptr<node_t> n;

    tensor() = default;
    explicit tensor(std::shared_ptr<node_t> p) : n(std::move(p)) {}

    static tensor zeros(std::size_t r, std::size_t c, bool requires_grad = false) {
        return filled(r, c, Real(0), requires_grad);
    }

    static tensor filled(std::size_t r, std::size_t c, Real v, bool requires_grad = false) {
        auto nd = std::make_shared<node_t>();
        nd->rows = r;
        nd->cols = c;
        nd->value.assign(r * c, v);
        nd->requires_grad = requires_grad;
        nd->ensure_grad();
        return tensor(std::move(nd));
    }

    static tensor from(std::size_t r, std::size_t c, std::vector<Real> v,
                       bool requires_grad = false) {
        if (v.size() != r * c)
            throw shape_mismatch("tensor::from: " + std::to_string(v.size()) +
                                 " values for shape " + shape_str({r, c}));
        auto nd = std::make_shared<node_t>();
        nd->rows = r;
        nd->cols = c;
        nd->value = std::move(v);
        nd->requires_grad = requires_grad;
        nd->ensure_grad();
        return tensor(std::move(nd));
    }

    static tensor scalar(Real v, bool requires_grad = false) {
        return filled(1, 1, v, requires_grad);
    }

    bool defined() const { return n != nullptr; }
    std::size_t rows() const { return n->rows; }
    std::size_t cols() const { return n->cols; }
    std::size_t numel() const { return n->numel(); }
    bool requires_grad() const { return n->requires_grad; }

    Real at(std::size_t r, std::size_t c) const { return n->value[r * n->cols + c]; }
    Real item() const { return n->value[0]; }

    const std::vector<Real>& values() const { return n->value; }
    std::vector<Real>& mut_values() { return n->value; }
    std::vector<Real>& grad() { return n->grad; }
    const std::vector<Real>& grad() const { return n->grad; }

    void zero_grad() {
        if (n->requires_grad) std::fill(n->grad.begin(), n->grad.end(), Real(0));
    }

    // Reverse pass from a scalar root.
    void backward() const {
        if (numel() != 1)
            throw shape_mismatch("backward() needs a scalar root, got " +
                                 shape_str({rows(), cols()}));
        if (!n->requires_grad) return;
        n->ensure_grad();
        n->grad[0] = Real(1);

        std::vector<node_t*> order;
        std::unordered_set<node_t*> visited;
        std::vector<std::pair<node_t*, int>> stack{{n.get(), 0}};
        while (!stack.empty()) {
            auto [nd, phase] = stack.back();
            stack.pop_back();
            if (phase == 0) {
                if (visited.count(nd)) continue;
                visited.insert(nd);
                stack.push_back({nd, 1});
                for (auto& p : nd->parents)
                    if (p->requires_grad && !visited.count(p.get()))
                        stack.push_back({p.get(), 0});
            } else {
                order.push_back(nd);
            }
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            node_t* nd = *it;
            if (nd->backprop) nd->backprop(*nd);
        }
    }
};

namespace detail {

template <typename Real>
std::shared_ptr<node<Real>> make_op(std::size_t r, std::size_t c,
                                    std::vector<std::shared_ptr<node<Real>>> parents) {
    auto nd = std::make_shared<node<Real>>();
    nd->rows = r;
    nd->cols = c;
    nd->value.assign(r * c, Real(0));
    for (auto& p : parents)
        if (p->requires_grad) nd->requires_grad = true;
    nd->parents = std::move(parents);
    nd->ensure_grad();
    return nd;
}

template <typename Real>
void require_same_shape(const char* op, const tensor<Real>& a, const tensor<Real>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw shape_mismatch(std::string(op) + ": " + shape_str({a.rows(), a.cols()}) +
                             " vs " + shape_str({b.rows(), b.cols()}));
}

}  // namespace detail

// out[i,j] = sum_k a[i,k] * b[k,j]
template <typename Real>
tensor<Real> matmul(const tensor<Real>& a, const tensor<Real>& b) {
    if (a.cols() != b.rows())
        throw shape_mismatch("matmul: " + shape_str({a.rows(), a.cols()}) + " x " +
                             shape_str({b.rows(), b.cols()}));
    const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
    auto nd = detail::make_op<Real>(m, p, {a.n, b.n});
    const Real* av = a.n->value.data();
    const Real* bv = b.n->value.data();
    Real* ov = nd->value.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const Real s = av[i * k + t];
            if (s == Real(0)) continue;
            const Real* brow = bv + t * p;
            Real* orow = ov + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += s * brow[j];
        }
    if (nd->requires_grad) {
        auto an = a.n, bn = b.n;
        nd->backprop = [an, bn, m, k, p](detail::node<Real>& self) {
            const Real* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                Real* ga = an->grad.data();
                const Real* bv2 = bn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        Real s = Real(0);
                        const Real* grow = g + i * p;
                        const Real* brow = bv2 + t * p;
                        for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
                        ga[i * k + t] += s;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                Real* gb = bn->grad.data();
                const Real* av2 = an->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        const Real s = av2[i * k + t];
                        if (s == Real(0)) continue;
                        const Real* grow = g + i * p;
                        Real* brow = gb + t * p;
                        for (std::size_t j = 0; j < p; ++j) brow[j] += s * grow[j];
                    }
            }
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> transpose(const tensor<Real>& a) {
    const std::size_t m = a.rows(), c = a.cols();
    auto nd = detail::make_op<Real>(c, m, {a.n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) nd->value[j * m + i] = a.at(i, j);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, m, c](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += self.grad[j * m + i];
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> add(const tensor<Real>& a, const tensor<Real>& b) {
    detail::require_same_shape("add", a, b);
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n, b.n});
    for (std::size_t i = 0; i < nd->numel(); ++i)
        nd->value[i] = a.n->value[i] + b.n->value[i];
    if (nd->requires_grad) {
        auto an = a.n, bn = b.n;
        nd->backprop = [an, bn](detail::node<Real>& self) {
            for (auto& pn : {an, bn})
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        pn->grad[i] += self.grad[i];
                }
        };
    }
    return tensor<Real>(nd);
}

// b is [1xn] (added to every row), [mx1] (added to every column) or [1x1].
template <typename Real>
tensor<Real> add_broadcast(const tensor<Real>& a, const tensor<Real>& b) {
    const std::size_t m = a.rows(), c = a.cols();
    const bool row_vec = b.rows() == 1 && b.cols() == c;
    const bool col_vec = b.cols() == 1 && b.rows() == m;
    const bool one = b.rows() == 1 && b.cols() == 1;
    if (!row_vec && !col_vec && !one)
        throw shape_mismatch("add_broadcast: " + shape_str({m, c}) + " vs " +
                             shape_str({b.rows(), b.cols()}));
    auto nd = detail::make_op<Real>(m, c, {a.n, b.n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            Real bv = one ? b.n->value[0] : (row_vec ? b.n->value[j] : b.n->value[i]);
            nd->value[i * c + j] = a.n->value[i * c + j] + bv;
        }
    if (nd->requires_grad) {
        auto an = a.n, bn = b.n;
        nd->backprop = [an, bn, m, c, row_vec, one](detail::node<Real>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        std::size_t bi = one ? 0 : (row_vec ? j : i);
                        bn->grad[bi] += self.grad[i * c + j];
                    }
            }
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> scale(const tensor<Real>& a, Real k) {
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n});
    for (std::size_t i = 0; i < nd->numel(); ++i) nd->value[i] = a.n->value[i] * k;
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, k](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * k;
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> mul(const tensor<Real>& a, const tensor<Real>& b) {
    detail::require_same_shape("mul", a, b);
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n, b.n});
    for (std::size_t i = 0; i < nd->numel(); ++i)
        nd->value[i] = a.n->value[i] * b.n->value[i];
    if (nd->requires_grad) {
        auto an = a.n, bn = b.n;
        nd->backprop = [an, bn](detail::node<Real>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
            }
        };
    }
    return tensor<Real>(nd);
}

// Elementwise product where b is [mx1], [1xn] or [1x1].
template <typename Real>
tensor<Real> mul_broadcast(const tensor<Real>& a, const tensor<Real>& b) {
    const std::size_t m = a.rows(), c = a.cols();
    const bool row_vec = b.rows() == 1 && b.cols() == c;
    const bool col_vec = b.cols() == 1 && b.rows() == m;
    const bool one = b.rows() == 1 && b.cols() == 1;
    if (!row_vec && !col_vec && !one)
        throw shape_mismatch("mul_broadcast: " + shape_str({m, c}) + " vs " +
                             shape_str({b.rows(), b.cols()}));
    auto nd = detail::make_op<Real>(m, c, {a.n, b.n});
    auto bval = [&](std::size_t i, std::size_t j) {
        return one ? b.n->value[0] : (row_vec ? b.n->value[j] : b.n->value[i]);
    };
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
            nd->value[i * c + j] = a.n->value[i * c + j] * bval(i, j);
    if (nd->requires_grad) {
        auto an = a.n, bn = b.n;
        nd->backprop = [an, bn, m, c, row_vec, one](detail::node<Real>& self) {
            auto bidx = [&](std::size_t i, std::size_t j) {
                return one ? std::size_t(0) : (row_vec ? j : i);
            };
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        an->grad[i * c + j] +=
                            self.grad[i * c + j] * bn->value[bidx(i, j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        bn->grad[bidx(i, j)] +=
                            self.grad[i * c + j] * an->value[i * c + j];
            }
        };
    }
    return tensor<Real>(nd);
}

namespace detail {

// Shared softmax core. mask entries are added to the logits before the
// rowwise max-subtraction; -inf entries come out as exactly 0 because
// exp(-inf) == 0 in IEEE arithmetic. The mask is a constant: it never
// receives gradient.
template <typename Real>
tensor<Real> softmax_rows_impl(const tensor<Real>& a, const Real* mask) {
    const std::size_t m = a.rows(), c = a.cols();
    auto nd = make_op<Real>(m, c, {a.n});
    for (std::size_t i = 0; i < m; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            Real z = a.n->value[i * c + j] + (mask ? mask[i * c + j] : Real(0));
            mx = std::max(mx, z);
        }
        Real denom = Real(0);
        for (std::size_t j = 0; j < c; ++j) {
            Real z = a.n->value[i * c + j] + (mask ? mask[i * c + j] : Real(0));
            Real e = std::exp(z - mx);
            nd->value[i * c + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) nd->value[i * c + j] /= denom;
    }
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, m, c](node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                Real dot = Real(0);
                for (std::size_t j = 0; j < c; ++j)
                    dot += self.grad[i * c + j] * self.value[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] +=
                        self.value[i * c + j] * (self.grad[i * c + j] - dot);
            }
        };
    }
    return tensor<Real>(nd);
}

}  // namespace detail

template <typename Real>
tensor<Real> softmax_rows(const tensor<Real>& a) {
    return detail::softmax_rows_impl<Real>(a, nullptr);
}

template <typename Real>
tensor<Real> softmax_rows(const tensor<Real>& a, const tensor<Real>& mask) {
    detail::require_same_shape("softmax_rows(mask)", a, mask);
    return detail::softmax_rows_impl<Real>(a, mask.n->value.data());
}

template <typename Real>
tensor<Real> relu(const tensor<Real>& a) {
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n});
    for (std::size_t i = 0; i < nd->numel(); ++i)
        nd->value[i] = a.n->value[i] > Real(0) ? a.n->value[i] : Real(0);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (an->value[i] > Real(0)) an->grad[i] += self.grad[i];
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> sigmoid(const tensor<Real>& a) {
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n});
    for (std::size_t i = 0; i < nd->numel(); ++i) {
        Real x = a.n->value[i];
        nd->value[i] = x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                    : std::exp(x) / (Real(1) + std::exp(x));
    }
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                Real y = self.value[i];
                an->grad[i] += self.grad[i] * y * (Real(1) - y);
            }
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> log_elem(const tensor<Real>& a) {
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n});
    for (std::size_t i = 0; i < nd->numel(); ++i) nd->value[i] = std::log(a.n->value[i]);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] / an->value[i];
        };
    }
    return tensor<Real>(nd);
}

// Rowwise normalization over the last dimension: (x - mean) / sqrt(var + eps),
// then an affine map with gain and bias, both [1 x cols].
template <typename Real>
tensor<Real> layer_norm(const tensor<Real>& x, const tensor<Real>& gain,
                        const tensor<Real>& bias, Real eps = Real(1e-6)) {
    const std::size_t m = x.rows(), c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw shape_mismatch("layer_norm: params must be [1x" + std::to_string(c) + "]");
    auto nd = detail::make_op<Real>(m, c, {x.n, gain.n, bias.n});
    std::vector<Real> xhat(m * c), inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        Real mean = Real(0);
        for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j);
        mean /= Real(c);
        Real var = Real(0);
        for (std::size_t j = 0; j < c; ++j) {
            Real d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= Real(c);
        inv_std[i] = Real(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            Real h = (x.at(i, j) - mean) * inv_std[i];
            xhat[i * c + j] = h;
            nd->value[i * c + j] = h * gain.n->value[j] + bias.n->value[j];
        }
    }
    if (nd->requires_grad) {
        auto xn = x.n, gn = gain.n, bn = bias.n;
        nd->backprop = [xn, gn, bn, m, c, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](detail::node<Real>& self) {
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        gn->grad[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        bn->grad[j] += self.grad[i * c + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    Real sum_g = Real(0), sum_gh = Real(0);
                    for (std::size_t j = 0; j < c; ++j) {
                        Real gj = self.grad[i * c + j] * gn->value[j];
                        sum_g += gj;
                        sum_gh += gj * xhat[i * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j) {
                        Real gj = self.grad[i * c + j] * gn->value[j];
                        xn->grad[i * c + j] +=
                            inv_std[i] *
                            (gj - (sum_g + xhat[i * c + j] * sum_gh) / Real(c));
                    }
                }
            }
        };
    }
    return tensor<Real>(nd);
}

// Row gather: out[t, :] = table[ids[t], :].
template <typename Real>
tensor<Real> embedding(const tensor<Real>& table, const std::vector<int>& ids) {
    const std::size_t v = table.rows(), d = table.cols();
    auto nd = detail::make_op<Real>(ids.size(), d, {table.n});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= v)
            throw shape_mismatch("embedding: id " + std::to_string(ids[t]) +
                                 " outside table " + shape_str({v, d}));
        for (std::size_t j = 0; j < d; ++j)
            nd->value[t * d + j] = table.at(static_cast<std::size_t>(ids[t]), j);
    }
    if (nd->requires_grad) {
        auto tn = table.n;
        nd->backprop = [tn, ids, d](detail::node<Real>& self) {
            tn->ensure_grad();
            for (std::size_t t = 0; t < ids.size(); ++t)
                for (std::size_t j = 0; j < d; ++j)
                    tn->grad[static_cast<std::size_t>(ids[t]) * d + j] +=
                        self.grad[t * d + j];
        };
    }
    return tensor<Real>(nd);
}

// Inverted dropout. Training mode draws one uniform per element and scales
// kept activations by 1/(1-p); eval mode is the identity and consumes no
// randomness.
template <typename Real>
tensor<Real> dropout(const tensor<Real>& a, double p, rng& gen, bool training) {
    if (!training || p <= 0.0) return a;
    if (p >= 1.0) throw config_error("dropout rate must be < 1");
    auto nd = detail::make_op<Real>(a.rows(), a.cols(), {a.n});
    std::vector<Real> keep(nd->numel());
    const Real inv = Real(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < nd->numel(); ++i) {
        keep[i] = gen.uniform01() >= p ? inv : Real(0);
        nd->value[i] = a.n->value[i] * keep[i];
    }
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, keep = std::move(keep)](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * keep[i];
        };
    }
    return tensor<Real>(nd);
}

// Horizontal concatenation: all parts share the row count.
template <typename Real>
tensor<Real> concat_cols(const std::vector<tensor<Real>>& parts) {
    if (parts.empty()) throw empty_input("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    std::vector<std::shared_ptr<detail::node<Real>>> parents;
    for (const auto& p : parts) {
        if (p.rows() != m)
            throw shape_mismatch("concat_cols: row mismatch " + shape_str({p.rows(), p.cols()}));
        total += p.cols();
        parents.push_back(p.n);
    }
    auto nd = detail::make_op<Real>(m, total, parents);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                nd->value[i * total + off + j] = p.at(i, j);
        off += p.cols();
    }
    if (nd->requires_grad) {
        std::vector<std::size_t> widths;
        for (const auto& p : parts) widths.push_back(p.cols());
        auto parent_nodes = nd->parents;
        nd->backprop = [parent_nodes, widths, m, total](detail::node<Real>& self) {
            std::size_t off2 = 0;
            for (std::size_t k = 0; k < parent_nodes.size(); ++k) {
                auto& pn = parent_nodes[k];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            pn->grad[i * widths[k] + j] +=
                                self.grad[i * total + off2 + j];
                }
                off2 += widths[k];
            }
        };
    }
    return tensor<Real>(nd);
}

// Row slice [r0, r1).
template <typename Real>
tensor<Real> slice_rows(const tensor<Real>& a, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > a.rows())
        throw shape_mismatch("slice_rows: [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") of " + shape_str({a.rows(), a.cols()}));
    const std::size_t c = a.cols(), m = r1 - r0;
    auto nd = detail::make_op<Real>(m, c, {a.n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) nd->value[i * c + j] = a.at(r0 + i, j);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, r0, m, c](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[(r0 + i) * c + j] += self.grad[i * c + j];
        };
    }
    return tensor<Real>(nd);
}

// Zero-extend on the right to new_cols columns.
template <typename Real>
tensor<Real> pad_cols(const tensor<Real>& a, std::size_t new_cols) {
    if (new_cols < a.cols())
        throw shape_mismatch("pad_cols: target " + std::to_string(new_cols) +
                             " smaller than " + shape_str({a.rows(), a.cols()}));
    const std::size_t m = a.rows(), c = a.cols();
    auto nd = detail::make_op<Real>(m, new_cols, {a.n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) nd->value[i * new_cols + j] = a.at(i, j);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, m, c, new_cols](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += self.grad[i * new_cols + j];
        };
    }
    return tensor<Real>(nd);
}

// out[i, ids[j]] += a[i, j]; out has out_cols columns. Columns mapping to the
// same id pile up, which is exactly what a copy distribution over repeated
// source tokens needs.
template <typename Real>
tensor<Real> scatter_add_cols(const tensor<Real>& a, const std::vector<int>& ids,
                              std::size_t out_cols) {
    if (ids.size() != a.cols())
        throw shape_mismatch("scatter_add_cols: " + std::to_string(ids.size()) +
                             " ids for " + shape_str({a.rows(), a.cols()}));
    const std::size_t m = a.rows(), c = a.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= out_cols)
            throw shape_mismatch("scatter_add_cols: id " + std::to_string(id) +
                                 " outside [0," + std::to_string(out_cols) + ")");
    auto nd = detail::make_op<Real>(m, out_cols, {a.n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
            nd->value[i * out_cols + static_cast<std::size_t>(ids[j])] += a.at(i, j);
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an, ids, m, c, out_cols](detail::node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] +=
                        self.grad[i * out_cols + static_cast<std::size_t>(ids[j])];
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> sum_all(const tensor<Real>& a) {
    auto nd = detail::make_op<Real>(1, 1, {a.n});
    Real s = Real(0);
    for (Real v : a.n->value) s += v;
    nd->value[0] = s;
    if (nd->requires_grad) {
        auto an = a.n;
        nd->backprop = [an](detail::node<Real>& self) {
            an->ensure_grad();
            for (auto& g : an->grad) g += self.grad[0];
        };
    }
    return tensor<Real>(nd);
}

template <typename Real>
tensor<Real> mean_all(const tensor<Real>& a) {
    return scale(sum_all(a), Real(1) / Real(a.numel()));
}

// Mean negative log likelihood over rows of a probability matrix.
// Rows whose target equals ignore_index are excluded from the mean.
template <typename Real>
tensor<Real> nll_mean(const tensor<Real>& probs, const std::vector<int>& targets,
                      int ignore_index = -1) {
    if (targets.size() != probs.rows())
        throw shape_mismatch("nll_mean: " + std::to_string(targets.size()) +
                             " targets for " + shape_str({probs.rows(), probs.cols()}));
    const std::size_t c = probs.cols();
    std::size_t count = 0;
    for (std::size_t t = 0; t < targets.size(); ++t)
        if (targets[t] != ignore_index) {
            if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= c)
                throw shape_mismatch("nll_mean: target " + std::to_string(targets[t]) +
                                     " outside [0," + std::to_string(c) + ")");
            ++count;
        }
    if (count == 0) throw empty_input("nll_mean: every position is ignored");
    auto nd = detail::make_op<Real>(1, 1, {probs.n});
    Real loss = Real(0);
    for (std::size_t t = 0; t < targets.size(); ++t)
        if (targets[t] != ignore_index)
            loss -= std::log(probs.at(t, static_cast<std::size_t>(targets[t])));
    nd->value[0] = loss / Real(count);
    if (nd->requires_grad) {
        auto pn = probs.n;
        nd->backprop = [pn, targets, ignore_index, c, count](detail::node<Real>& self) {
            pn->ensure_grad();
            for (std::size_t t = 0; t < targets.size(); ++t)
                if (targets[t] != ignore_index) {
                    std::size_t idx = t * c + static_cast<std::size_t>(targets[t]);
                    pn->grad[idx] -= self.grad[0] / (Real(count) * pn->value[idx]);
                }
        };
    }
    return tensor<Real>(nd);
}

// Uniform Glorot initialization, bound sqrt(6 / (fan_in + fan_out)).
template <typename Real>
void init_glorot(tensor<Real>& t, rng& gen, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.mut_values()) v = static_cast<Real>(gen.uniform(-bound, bound));
}

}  // namespace sgtrans
