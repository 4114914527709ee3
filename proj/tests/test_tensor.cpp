#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "sgtrans/rng.hpp"
#include "sgtrans/tensor.hpp"

using sgtrans::tensor;

namespace {

using T = tensor<double>;

// Central finite differences against the tape gradient. The forward closure
// rebuilds the graph from the current leaf values on every call, so nudging a
// leaf and re-running gives the perturbed loss.
void check_grads(std::vector<T> leaves, const std::function<T()>& forward,
                 double tol = 1e-4) {
    const double h = 1e-5;
    T loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].mut_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double f1 = forward().item();
            vals[i] = keep - h;
            const double f2 = forward().item();
            vals[i] = keep;
            const double fd = (f1 - f2) / (2 * h);
            const double an = analytic[li][i];
            const double rel =
                std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
            INFO("leaf " << li << " element " << i << " analytic " << an << " fd " << fd);
            REQUIRE(rel < tol);
        }
        leaves[li].zero_grad();
    }
}

T randt(std::size_t r, std::size_t c, sgtrans::rng& g, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = g.uniform(lo, hi);
    return T::from(r, c, std::move(v), true);
}

}  // namespace

TEST_CASE("rng stream is reproducible") {
    sgtrans::rng a(42), b(42);
    for (int i = 0; i < 5; ++i) REQUIRE(a.next_u64() == b.next_u64());
    sgtrans::rng c(42), d(43);
    REQUIRE(c.next_u64() != d.next_u64());
    sgtrans::rng e(7);
    for (int i = 0; i < 1000; ++i) {
        double u = e.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("matmul against identity and hand product") {
    auto eye = T::from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto a = T::from(3, 2, {1, 2, 3, 4, 5, 6});
    auto prod = sgtrans::matmul(eye, a);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) REQUIRE(prod.at(i, j) == a.at(i, j));

    auto x = T::from(2, 2, {1, 2, 3, 4});
    auto y = T::from(2, 2, {5, 6, 7, 8});
    auto xy = sgtrans::matmul(x, y);
    REQUIRE(xy.at(0, 0) == 19);
    REQUIRE(xy.at(0, 1) == 22);
    REQUIRE(xy.at(1, 0) == 43);
    REQUIRE(xy.at(1, 1) == 50);
}

TEST_CASE("shape errors carry both shapes") {
    auto a = T::zeros(2, 3);
    auto b = T::zeros(4, 5);
    try {
        sgtrans::add(a, b);
        FAIL("expected shape_mismatch");
    } catch (const sgtrans::shape_mismatch& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[2x3]") != std::string::npos);
        REQUIRE(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
    auto logits = T::from(1, 2, {0.0, 0.0});
    const double ninf = -std::numeric_limits<double>::infinity();
    auto mask = T::from(1, 2, {0.0, ninf});
    auto p = sgtrans::softmax_rows(logits, mask);
    REQUIRE(p.at(0, 0) == 1.0);
    REQUIRE(p.at(0, 1) == 0.0);
}

TEST_CASE("gradients: matmul, transpose, add, scale") {
    sgtrans::rng g(1);
    auto a = randt(3, 4, g);
    auto b = randt(4, 2, g);
    check_grads({a, b}, [&] {
        return sgtrans::sum_all(sgtrans::matmul(a, b));
    });
    auto c = randt(3, 5, g);
    check_grads({c}, [&] {
        return sgtrans::sum_all(sgtrans::transpose(c));
    });
    auto d = randt(2, 3, g), e = randt(2, 3, g);
    check_grads({d, e}, [&] {
        return sgtrans::mean_all(sgtrans::mul(sgtrans::add(d, e), sgtrans::scale(d, 0.5)));
    });
}

TEST_CASE("gradients: broadcast variants") {
    sgtrans::rng g(2);
    auto a = randt(3, 4, g);
    auto row = randt(1, 4, g);
    auto col = randt(3, 1, g);
    auto one = randt(1, 1, g);
    check_grads({a, row}, [&] { return sgtrans::sum_all(sgtrans::add_broadcast(a, row)); });
    check_grads({a, col}, [&] { return sgtrans::sum_all(sgtrans::add_broadcast(a, col)); });
    check_grads({a, one}, [&] { return sgtrans::sum_all(sgtrans::add_broadcast(a, one)); });
    check_grads({a, row}, [&] {
        return sgtrans::mean_all(sgtrans::mul(sgtrans::mul_broadcast(a, row), a));
    });
    check_grads({a, col}, [&] {
        return sgtrans::mean_all(sgtrans::mul(sgtrans::mul_broadcast(a, col), a));
    });
}

TEST_CASE("gradients: softmax with and without mask") {
    sgtrans::rng g(3);
    auto a = randt(4, 5, g);
    auto w = randt(4, 5, g);
    check_grads({a, w}, [&] {
        return sgtrans::sum_all(sgtrans::mul(sgtrans::softmax_rows(a), w));
    });
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> mv(4 * 5, 0.0);
    mv[1] = ninf;
    mv[7] = ninf;
    mv[13] = ninf;
    auto mask = T::from(4, 5, std::move(mv));
    check_grads({a, w}, [&] {
        return sgtrans::sum_all(sgtrans::mul(sgtrans::softmax_rows(a, mask), w));
    });
}

TEST_CASE("gradients: pointwise nonlinearities") {
    sgtrans::rng g(4);
    std::vector<double> rv(12);
    for (auto& x : rv) {
        x = g.uniform(0.15, 1.0);
        if (g.uniform01() < 0.5) x = -x;
    }
    auto away_from_kink = T::from(3, 4, std::move(rv), true);
    check_grads({away_from_kink}, [&] {
        return sgtrans::sum_all(sgtrans::relu(away_from_kink));
    });
    auto a = randt(3, 4, g);
    check_grads({a}, [&] { return sgtrans::mean_all(sgtrans::sigmoid(a)); });
    auto pos = randt(3, 4, g, 0.2, 2.0);
    check_grads({pos}, [&] { return sgtrans::sum_all(sgtrans::log_elem(pos)); });
}

TEST_CASE("gradients: layer norm") {
    sgtrans::rng g(5);
    auto x = randt(3, 6, g);
    auto gain = randt(1, 6, g, 0.5, 1.5);
    auto bias = randt(1, 6, g);
    check_grads({x, gain, bias}, [&] {
        return sgtrans::sum_all(
            sgtrans::mul(sgtrans::layer_norm(x, gain, bias), x));
    });
}

TEST_CASE("layer norm output is normalized") {
    auto x = T::from(1, 4, {1.0, 2.0, 3.0, 4.0});
    auto gain = T::from(1, 4, {1, 1, 1, 1});
    auto bias = T::from(1, 4, {0, 0, 0, 0});
    auto y = sgtrans::layer_norm(x, gain, bias);
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 4; ++j) mean += y.at(0, j);
    mean /= 4;
    for (std::size_t j = 0; j < 4; ++j) var += (y.at(0, j) - mean) * (y.at(0, j) - mean);
    var /= 4;
    REQUIRE(std::fabs(mean) < 1e-9);
    REQUIRE(std::fabs(var - 1.0) < 1e-4);
}

TEST_CASE("gradients: embedding, concat, slice, pad, scatter") {
    sgtrans::rng g(6);
    auto table = randt(7, 3, g);
    std::vector<int> ids{0, 3, 3, 6, 1};
    check_grads({table}, [&] {
        return sgtrans::sum_all(
            sgtrans::mul(sgtrans::embedding(table, ids), sgtrans::embedding(table, ids)));
    });

    auto p1 = randt(3, 2, g);
    auto p2 = randt(3, 4, g);
    auto p3 = randt(3, 1, g);
    check_grads({p1, p2, p3}, [&] {
        auto cat = sgtrans::concat_cols<double>({p1, p2, p3});
        return sgtrans::mean_all(sgtrans::mul(cat, cat));
    });

    auto s = randt(5, 3, g);
    check_grads({s}, [&] {
        auto sl = sgtrans::slice_rows(s, 1, 4);
        return sgtrans::sum_all(sgtrans::mul(sl, sl));
    });
    check_grads({s}, [&] {
        auto pd = sgtrans::pad_cols(s, 6);
        return sgtrans::sum_all(sgtrans::mul(pd, pd));
    });

    auto sc = randt(2, 5, g);
    std::vector<int> dest{0, 2, 2, 1, 0};
    check_grads({sc}, [&] {
        auto out = sgtrans::scatter_add_cols(sc, dest, 4);
        return sgtrans::sum_all(sgtrans::mul(out, out));
    });
}

TEST_CASE("scatter_add_cols accumulates duplicate ids") {
    auto a = T::from(1, 3, {0.25, 0.5, 0.25});
    auto out = sgtrans::scatter_add_cols(a, {1, 1, 0}, 3);
    REQUIRE(out.at(0, 0) == 0.25);
    REQUIRE(out.at(0, 1) == 0.75);
    REQUIRE(out.at(0, 2) == 0.0);
}

TEST_CASE("gradient accumulates when a tensor is reused") {
    auto x = T::from(1, 1, {3.0}, true);
    auto y = sgtrans::add(sgtrans::scale(x, 2.0), sgtrans::scale(x, 5.0));
    y.backward();
    REQUIRE(x.grad()[0] == 7.0);
}

TEST_CASE("softmax + nll matches the closed-form gradient") {
    sgtrans::rng g(7);
    const std::size_t t = 4, v = 6;
    auto logits = randt(t, v, g);
    std::vector<int> targets{2, 0, 5, 0};
    int ignore = 0;
    auto probs = sgtrans::softmax_rows(logits);
    auto loss = sgtrans::nll_mean(probs, targets, ignore);
    loss.backward();

    std::size_t count = 0;
    for (int y : targets)
        if (y != ignore) ++count;
    for (std::size_t i = 0; i < t; ++i) {
        const bool counted = targets[i] != ignore;
        for (std::size_t j = 0; j < v; ++j) {
            double expect = 0.0;
            if (counted) {
                double p = probs.at(i, j);
                double onehot = (static_cast<int>(j) == targets[i]) ? 1.0 : 0.0;
                expect = (p - onehot) / static_cast<double>(count);
            }
            REQUIRE(std::fabs(logits.grad()[i * v + j] - expect) < 1e-10);
        }
    }
}

TEST_CASE("gradients: nll over probabilities") {
    sgtrans::rng g(8);
    auto logits = randt(3, 4, g);
    std::vector<int> targets{1, 3, 2};
    check_grads({logits}, [&] {
        return sgtrans::nll_mean(sgtrans::softmax_rows(logits), targets);
    });
}

TEST_CASE("dropout statistics and eval identity") {
    sgtrans::rng g(11);
    const double p = 0.3;
    auto big = T::filled(100, 100, 1.0);
    auto dropped = sgtrans::dropout(big, p, g, true);
    std::size_t zeros = 0;
    double sum = 0;
    for (double x : dropped.values()) {
        if (x == 0.0)
            ++zeros;
        else {
            REQUIRE(x == Catch::Approx(1.0 / 0.7));
            sum += x;
        }
    }
    double zero_frac = static_cast<double>(zeros) / 10000.0;
    REQUIRE(zero_frac > 0.27);
    REQUIRE(zero_frac < 0.33);
    REQUIRE(sum / 10000.0 == Catch::Approx(1.0).margin(0.05));

    auto same = sgtrans::dropout(big, p, g, false);
    REQUIRE(same.n == big.n);
}

TEST_CASE("gradients: dropout with a replayed mask") {
    const double p = 0.4;
    auto x = T::from(4, 4, std::vector<double>(16, 0.5), true);
    check_grads({x}, [&] {
        sgtrans::rng g(99);
        return sgtrans::sum_all(sgtrans::mul(sgtrans::dropout(x, p, g, true), x));
    });
}

TEST_CASE("backward seeds only scalars") {
    auto x = T::from(2, 2, {1, 2, 3, 4}, true);
    auto y = sgtrans::scale(x, 2.0);
    REQUIRE_THROWS_AS(y.backward(), sgtrans::shape_mismatch);
}
