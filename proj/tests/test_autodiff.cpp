#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pasr/autodiff.hpp"

using namespace pasr;
using namespace pasr::ad;

namespace {

Tensor random_tensor(size_t r, size_t c, std::mt19937_64& rng, bool grad = true, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(r * c);
    for (auto& x : v) x = u(rng);
    return Tensor::from_values(r, c, std::move(v), grad);
}

// Central differences on every entry of every leaf.
void expect_gradients_match(std::vector<Tensor> leaves, const std::function<Tensor()>& f, double tol = 1e-6) {
    for (auto& t : leaves) t.zero_grad();
    backward(f());
    const double h = 1e-5;
    for (auto& t : leaves) {
        const std::vector<double> g(t.grad().begin(), t.grad().end());
        ASSERT_EQ(g.size(), t.size());
        for (size_t i = 0; i < t.size(); ++i) {
            const double x = t.values()[i];
            t.mutable_values()[i] = x + h;
            double up, dn;
            {
                NoGradGuard ng;
                up = f().item();
                t.mutable_values()[i] = x - h;
                dn = f().item();
            }
            t.mutable_values()[i] = x;
            const double fd = (up - dn) / (2 * h);
            EXPECT_NEAR(g[i], fd, tol * std::max(1.0, std::abs(fd))) << "entry " << i;
        }
    }
}

// Straight-line softmax(QK^T/sqrt(d))V with an optional dense additive mask.
std::vector<double> dense_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const std::vector<double>* mask = nullptr) {
    const size_t nq = q.rows(), nk = k.rows(), d = q.cols(), dv = v.cols();
    std::vector<double> out(nq * dv, 0.0);
    for (size_t i = 0; i < nq; ++i) {
        std::vector<double> s(nk);
        double mx = -INFINITY;
        for (size_t j = 0; j < nk; ++j) {
            double dot = 0;
            for (size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
            s[j] = dot / std::sqrt(static_cast<double>(d)) + (mask ? (*mask)[i * nk + j] : 0.0);
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (size_t j = 0; j < nk; ++j)
            for (size_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v.at(j, c);
    }
    return out;
}

}  // namespace

TEST(Backward, SumGivesOnes) {
    auto w = Tensor::from_values(2, 3, {1, 2, 3, 4, 5, 6}, true);
    backward(sum(w));
    for (double g : w.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesW) {
    auto w = Tensor::from_values(2, 2, {0.5, -1, 2, 3}, true);
    backward(scale(sum(rowwise_dot(w, w)), 0.5));
    for (size_t i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], w.values()[i]);
}

TEST(Backward, SharedSubexpressionAccumulates) {
    auto x = Tensor::from_values(1, 1, {3}, true);
    auto y = add(x, x);
    backward(sum(add(y, y)));
    EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    auto x = Tensor::from_values(1, 1, {3}, true);
    NoGradGuard ng;
    EXPECT_FALSE(scale(x, 2).requires_grad());
}

TEST(Ops, NonFiniteThrows) {
    auto x = Tensor::from_values(1, 1, {-1}, true);
    EXPECT_THROW(log(x), NonFiniteError);
}

TEST(Ops, Gradients) {
    std::mt19937_64 rng(1);
    auto a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng), c = random_tensor(3, 4, rng);
    auto bias = random_tensor(1, 4, rng);
    expect_gradients_match({a, b}, [&] { return sum(matmul(a, b)); });
    expect_gradients_match({a, c}, [&] { return sum(rowwise_dot(add(a, c), c)); });
    expect_gradients_match({a, bias}, [&] { return sum(sigmoid(add_row(a, bias))); });
    expect_gradients_match({a}, [&] { return sum(log_sigmoid(scale(a, 3))); });
    expect_gradients_match({a, c}, [&] { return sum(rowwise_dot(softmax_rows(a), c)); });
    expect_gradients_match({a, c}, [&] { return mean(rowwise_dot(reshape(a, 6, 2), reshape(c, 6, 2))); });
    expect_gradients_match({a, c}, [&] { return sum(rowwise_dot(concat_cols({a, c}), concat_cols({c, a}))); });
    auto pos = random_tensor(3, 4, rng, true, 0.5, 2);
    expect_gradients_match({pos}, [&] { return sum(log(pos)); });
}

TEST(Ops, ReluGradient) {
    auto x = Tensor::from_values(1, 4, {-2, -0.5, 0.5, 2}, true);
    backward(sum(relu(x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Ops, GatherAndSegmentMean) {
    std::mt19937_64 rng(2);
    auto table = random_tensor(5, 3, rng), w = random_tensor(6, 3, rng, false);
    const std::vector<long> idx{0, 4, kZeroRow, 4, 2, 1};
    auto g = gather_rows(table, idx);
    for (size_t c = 0; c < 3; ++c) EXPECT_EQ(g.at(2, c), 0.0);
    expect_gradients_match({table}, [&] { return sum(rowwise_dot(gather_rows(table, idx), w)); });
    auto x = random_tensor(6, 3, rng);
    auto m = segment_mean(x, 3);
    EXPECT_NEAR(m.at(1, 2), (x.at(3, 2) + x.at(4, 2) + x.at(5, 2)) / 3, 1e-15);
    auto wm = random_tensor(3, 3, rng, false);
    expect_gradients_match({x}, [&] { return sum(rowwise_dot(segment_mean(x, 2), wm)); });
    EXPECT_THROW(gather_rows(table, {5}), std::domain_error);
}

TEST(Attention, SingleKeyIsIdentity) {
    auto r = Tensor::from_values(1, 3, {0.3, -1, 2});
    auto out = attention(r, r, r);
    for (size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(0, c), r.at(0, c));
}

TEST(Attention, EqualValuesGiveThatValue) {
    auto q = Tensor::from_values(2, 2, {5, -3, 0.1, 7});
    auto k = Tensor::from_values(2, 2, {1, 2, 1, 2});
    auto v = Tensor::from_values(2, 3, {4, 5, 6, 4, 5, 6});
    auto out = attention(q, k, v);
    for (size_t r = 0; r < 2; ++r)
        for (size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(r, c), v.at(0, c), 1e-12);
}

TEST(Attention, MatchesDenseOracle) {
    std::mt19937_64 rng(3);
    auto q = random_tensor(4, 8, rng), k = random_tensor(4, 8, rng), v = random_tensor(4, 8, rng);
    const auto want = dense_attention(q, k, v);
    const auto got = attention(q, k, v);
    for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.values()[i], want[i], 1e-12);

    const auto mask = AttentionMask::causal(4);
    const auto additive = mask.to_additive(4);
    const auto want_m = dense_attention(q, k, v, &additive);
    const auto got_m = attention(q, k, v, mask);
    for (size_t i = 0; i < want_m.size(); ++i) EXPECT_NEAR(got_m.values()[i], want_m[i], 1e-12);
}

TEST(Attention, Gradients) {
    std::mt19937_64 rng(4);
    auto q = random_tensor(5, 3, rng), k = random_tensor(6, 3, rng), v = random_tensor(6, 2, rng);
    auto w = random_tensor(5, 2, rng, false);
    expect_gradients_match({q, k, v}, [&] { return sum(rowwise_dot(attention(q, k, v), w)); });
    const AttentionMask spans({{0, 1}, {0, 2}, {1, 4}, {3, 6}, {5, 6}});
    expect_gradients_match({q, k, v}, [&] { return sum(rowwise_dot(attention(q, k, v, spans), w)); });
}

TEST(Attention, RowsAreStochastic) {
    std::mt19937_64 rng(5);
    auto q = random_tensor(6, 4, rng), k = random_tensor(6, 4, rng);
    auto ones = Tensor::from_values(6, 1, std::vector<double>(6, 1.0));
    const auto out = attention(q, k, ones, AttentionMask::causal(6));
    for (size_t r = 0; r < 6; ++r) EXPECT_NEAR(out.at(r, 0), 1.0, 1e-12);
}

TEST(Attention, CausalRowsIgnoreLaterInputs) {
    std::mt19937_64 rng(6);
    auto x = random_tensor(6, 4, rng, false);
    const auto base = attention(x, x, x, AttentionMask::causal(6));
    for (size_t j = 0; j < 6; ++j) {
        auto y = Tensor::from_values(6, 4, std::vector<double>(x.values().begin(), x.values().end()));
        for (size_t c = 0; c < 4; ++c) y.mutable_values()[j * 4 + c] += 0.7;
        const auto out = attention(y, y, y, AttentionMask::causal(6));
        for (size_t r = 0; r < j; ++r)
            for (size_t c = 0; c < 4; ++c) ASSERT_EQ(out.at(r, c), base.at(r, c));
    }
}

TEST(Attention, AdditiveMaskRoundtrip) {
    const auto m = AttentionMask::block_diagonal(2, 3, true);
    const auto back = AttentionMask::from_additive(6, 6, m.to_additive(6));
    EXPECT_EQ(back.spans(), m.spans());
    std::vector<double> gap(4, 0.0);
    gap[1] = -INFINITY;
    EXPECT_THROW(AttentionMask::from_additive(1, 4, gap), std::domain_error);
}

TEST(Ffn, ZeroWeightsGiveBias) {
    std::mt19937_64 rng(7);
    auto x = random_tensor(3, 4, rng, false);
    auto b2 = Tensor::from_values(1, 2, {0.25, -4});
    const auto out = ffn(x, Tensor::zeros(4, 5), Tensor::zeros(1, 5), Tensor::zeros(5, 2), b2);
    for (size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(out.at(r, 0), 0.25);
        EXPECT_EQ(out.at(r, 1), -4);
    }
}

TEST(Ffn, IdentityOnNonNegativeInput) {
    std::mt19937_64 rng(8);
    auto x = random_tensor(3, 4, rng, false, 0, 2);
    std::vector<double> eye(16, 0.0);
    for (size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
    auto id = Tensor::from_values(4, 4, eye);
    const auto out = ffn(x, id, Tensor::zeros(1, 4), id, Tensor::zeros(1, 4));
    for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.values()[i], x.values()[i]);
}

TEST(Ffn, MatchesDenseOracleAndGradients) {
    std::mt19937_64 rng(9);
    auto x = random_tensor(6, 8, rng), w1 = random_tensor(8, 16, rng), b1 = random_tensor(1, 16, rng);
    auto w2 = random_tensor(16, 8, rng), b2 = random_tensor(1, 8, rng);
    const auto out = ffn(x, w1, b1, w2, b2);
    for (size_t r = 0; r < 6; ++r) {
        std::vector<double> h(16);
        for (size_t j = 0; j < 16; ++j) {
            double s = b1.at(0, j);
            for (size_t c = 0; c < 8; ++c) s += x.at(r, c) * w1.at(c, j);
            h[j] = std::max(0.0, s);
        }
        for (size_t c = 0; c < 8; ++c) {
            double s = b2.at(0, c);
            for (size_t j = 0; j < 16; ++j) s += h[j] * w2.at(j, c);
            EXPECT_NEAR(out.at(r, c), s, 1e-12);
        }
    }
    auto w = random_tensor(6, 8, rng, false);
    expect_gradients_match({x, w1, b1, w2, b2}, [&] { return sum(rowwise_dot(ffn(x, w1, b1, w2, b2), w)); });
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    auto x = Tensor::from_values(1, 4, {3, 3, 3, 3});
    const auto out = layer_norm(x, Tensor::from_values(1, 4, {1, 1, 1, 1}), Tensor::zeros(1, 4));
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
    auto x = Tensor::from_values(1, 2, {1, -1});
    const auto out = layer_norm(x, Tensor::from_values(1, 2, {1, 1}), Tensor::zeros(1, 2));
    EXPECT_NEAR(out.at(0, 0), 1 / std::sqrt(1 + 1e-5), 1e-15);
    EXPECT_NEAR(out.at(0, 1), -1 / std::sqrt(1 + 1e-5), 1e-15);
}

TEST(LayerNorm, NormalizesRows) {
    std::mt19937_64 rng(10);
    auto x = random_tensor(5, 50, rng, false, -3, 7);
    const auto ones = Tensor::from_values(1, 50, std::vector<double>(50, 1.0));
    const auto raw = layer_norm(x, ones, Tensor::zeros(1, 50), 0.0);
    const auto out = layer_norm(x, ones, Tensor::zeros(1, 50));
    auto moments = [](const Tensor& t, size_t r) {
        double mu = 0, var = 0;
        for (size_t c = 0; c < t.cols(); ++c) mu += t.at(r, c);
        mu /= static_cast<double>(t.cols());
        for (size_t c = 0; c < t.cols(); ++c) var += (t.at(r, c) - mu) * (t.at(r, c) - mu);
        return std::pair{mu, var / static_cast<double>(t.cols())};
    };
    for (size_t r = 0; r < 5; ++r) {
        const auto [mu, var] = moments(raw, r);
        EXPECT_LT(std::abs(mu), 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-6);
        const auto [_, in_var] = moments(x, r);
        const auto [mu_eps, var_eps] = moments(out, r);
        EXPECT_LT(std::abs(mu_eps), 1e-12);
        EXPECT_NEAR(var_eps, in_var / (in_var + 1e-5), 1e-12);
    }
}

TEST(LayerNorm, Gradients) {
    std::mt19937_64 rng(11);
    auto x = random_tensor(4, 6, rng), g = random_tensor(1, 6, rng), b = random_tensor(1, 6, rng);
    auto w = random_tensor(4, 6, rng, false);
    expect_gradients_match({x, g, b}, [&] { return sum(rowwise_dot(layer_norm(x, g, b), w)); });
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamSet ps;
    auto& w = ps.add("w", Tensor::from_values(1, 2, {1.0, -1.0}, true));
    Adam adam({.lr = 0.1, .weight_decay = 0.0});
    backward(sum(w));
    adam.step(ps);
    EXPECT_NEAR(w.values()[0], 0.9, 1e-8);
    EXPECT_NEAR(w.values()[1], -1.1, 1e-8);
    EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
    ParamSet ps;
    auto& w = ps.add("w", Tensor::from_values(1, 3, {2, -3, 1}, true));
    Adam adam({.lr = 0.05, .weight_decay = 0.0});
    for (int i = 0; i < 2000; ++i) {
        ps.zero_grad();
        backward(sum(rowwise_dot(w, w)));
        adam.step(ps);
    }
    for (double v : w.values()) EXPECT_LT(std::abs(v), 1e-2);
}

TEST(ParamSet, RejectsDuplicatesAndConstants) {
    ParamSet ps;
    ps.add("a", Tensor::zeros(1, 1, true));
    EXPECT_THROW(ps.add("a", Tensor::zeros(1, 1, true)), std::domain_error);
    EXPECT_THROW(ps.add("b", Tensor::zeros(1, 1, false)), std::domain_error);
    EXPECT_EQ(ps.scalar_count(), 1u);
}
