#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "cofill/conditional.hpp"
#include "cofill/gradcheck.hpp"
#include "test_util.hpp"

using namespace cofill;
using namespace cofill::testing;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CondFixture {
  CondModuleConfig cfg{4, 3, 2, 0.1};
  ParamStore store;
  std::mt19937_64 rng{21};
  CondModuleParams p = CondModuleParams::create(store, cfg, rng);
  NormalizedGraph g = normalize_adjacency(Graph::ring(3));
};

}  // namespace

TEST(InputProjection, ZeroInZeroOut) {
  auto w = Var::constant(Tensor({3, 1}, {1, 2, 3}));
  auto b = Var::constant(Tensor({3}));
  const Tensor y = input_projection(Tensor({2, 4}), w, b).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(InputProjection, AffinePerEntry) {
  auto w = Var::constant(Tensor({2, 1}, {2.0, -3.0}));
  auto b = Var::constant(Tensor({2}, {0.5, 1.0}));
  const Tensor x = Tensor::matrix(1, 2, {1.5, -1.0});
  const Tensor y = input_projection(x, w, b).value();
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 2.0 * 1.5 + 0.5);
  EXPECT_DOUBLE_EQ(y.at(1, 0, 0), -3.0 * 1.5 + 1.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0, 1), -3.0 * -1.0 + 1.0);
}

TEST(InputProjection, NodePermutationEquivariant) {
  std::mt19937_64 rng(1);
  auto w = Var::constant(random_tensor({3, 1}, rng));
  auto b = Var::constant(random_tensor({3}, rng));
  const Tensor x = random_tensor({3, 5}, rng);
  Tensor xp({3, 5});
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t l = 0; l < 5; ++l) xp.at(i, l) = x.at(perm[i], l);
  const Tensor y = input_projection(x, w, b).value(), yp = input_projection(xp, w, b).value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(yp.at(c, i, l), y.at(c, perm[i], l));
}

TEST(Tcn, ClosedGateIsResidual) {
  std::mt19937_64 rng(2);
  auto h = Var::constant(random_tensor({3, 2, 6}, rng));
  auto zk = Var::constant(Tensor({3, 3, 3}));
  auto zb = Var::constant(Tensor({3}));
  EXPECT_EQ(tcn_forward(h, zk, zb, zk, zb, 0.1, rng, true).value(), h.value());
}

TEST(Tcn, HandUnrolledKernelTwo) {
  std::mt19937_64 rng(3);
  const double p0 = 0.7, p1 = -0.4, q0 = 0.3, q1 = 0.9, bp = 0.1, bq = -0.2;
  auto h = Var::constant(Tensor({1, 1, 3}, {1, 2, 3}));
  auto kp = Var::constant(Tensor({1, 1, 2}, {p0, p1}));
  auto kq = Var::constant(Tensor({1, 1, 2}, {q0, q1}));
  const Tensor y = tcn_forward(h, kp, Var::constant(Tensor({1}, {bp})), kq,
                               Var::constant(Tensor({1}, {bq})), 0.5, rng, false)
                       .value();
  const double x[3] = {1, 2, 3};
  for (int l = 0; l < 3; ++l) {
    const double prev = l > 0 ? x[l - 1] : 0.0;
    const double P = p0 * x[l] + p1 * prev + bp;
    const double Q = q0 * x[l] + q1 * prev + bq;
    EXPECT_NEAR(y[l], P * sigm(Q) + x[l], 1e-14);
  }
}

TEST(Tcn, Causal) {
  CondFixture f;
  std::mt19937_64 rng(4);
  const Tensor h = random_tensor({4, 3, 10}, rng);
  auto run = [&](const Tensor& x) {
    return tcn_forward(Var::constant(x), f.p.tcn_p, f.p.tcn_p_b, f.p.tcn_q, f.p.tcn_q_b, 0.0, rng,
                       false)
        .value();
  };
  const Tensor y0 = run(h);
  for (std::size_t l = 0; l < 10; ++l) {
    Tensor hp = h;
    hp.at(2, 1, l) += 1.0;
    const Tensor y1 = run(hp);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t t = 0; t < l; ++t) EXPECT_EQ(y1.at(c, n, t), y0.at(c, n, t));
  }
}

TEST(Dct, ConstantSeries) {
  const double c = 2.5;
  const Tensor y = dct_forward(Var::constant(Tensor({1, 1, 4}, c)), DctNorm::none).value();
  EXPECT_NEAR(y[0], 4 * c, 1e-12);
  for (int m = 1; m < 4; ++m) EXPECT_NEAR(y[m], 0.0, 1e-12);
}

TEST(Dct, TwoPointDirectEvaluation) {
  const Tensor y = dct_forward(Var::constant(Tensor({1, 1, 2}, {1, 0})), DctNorm::none).value();
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], std::cos(std::numbers::pi / 4), 1e-15);
  EXPECT_NEAR(y[1], 0.70710678, 1e-8);
}

TEST(Dct, MatchesCosineSum) {
  std::mt19937_64 rng(5);
  const std::size_t len = 7;
  const Tensor x = random_tensor({1, 1, len}, rng);
  const Tensor y = dct_forward(Var::constant(x), DctNorm::none).value();
  for (std::size_t m = 0; m < len; ++m) {
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t)
      acc += x[t] * std::cos(std::numbers::pi / len * (t + 0.5) * m);
    EXPECT_NEAR(y[m], acc, 1e-12);
  }
  const Tensor yn = dct_forward(Var::constant(x), DctNorm::network).value();
  for (std::size_t m = 0; m < len; ++m) EXPECT_NEAR(yn[m], 2.0 / len * y[m], 1e-12);
}

TEST(Dct, OrthonormalRoundTrip) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 3, 24}, rng, -5, 5);
  const Var y = dct_forward(Var::constant(x), DctNorm::orthonormal);
  EXPECT_LT(max_abs_diff(dct_inverse_orthonormal(y).value(), x), 1e-9);
}

TEST(Dct, Linearity) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 2, 16}, rng), z = random_tensor({2, 2, 16}, rng);
  const double a = 1.7, b = -0.3;
  for (DctNorm norm : {DctNorm::none, DctNorm::orthonormal, DctNorm::network}) {
    Tensor comb(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) comb[i] = a * x[i] + b * z[i];
    const Tensor lhs = dct_forward(Var::constant(comb), norm).value();
    const Tensor dx = dct_forward(Var::constant(x), norm).value();
    const Tensor dz = dct_forward(Var::constant(z), norm).value();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(lhs[i], a * dx[i] + b * dz[i], 1e-9);
  }
}

TEST(Dct, BasisCosineConcentratesEnergy) {
  const std::size_t len = 24;
  for (std::size_t m0 : {0u, 1u, 5u, 23u}) {
    Tensor x({1, 1, len});
    for (std::size_t t = 0; t < len; ++t)
      x[t] = std::cos(std::numbers::pi / len * (t + 0.5) * m0);
    const Tensor y = dct_forward(Var::constant(x), DctNorm::orthonormal).value();
    for (std::size_t m = 0; m < len; ++m)
      if (m != m0) { EXPECT_LE(std::abs(y[m]), 1e-6 * std::abs(y[m0])); }
  }
}

TEST(CrossAttention, IdenticalKeysGiveUniformWeightsAndMeanValue) {
  std::mt19937_64 rng(8);
  const std::size_t d = 3, n = 2, len = 5;
  const Tensor ht = random_tensor({d, n, len}, rng);
  Tensor hh({d, n, len});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < len; ++l) hh.at(c, i, l) = 0.3 * c - 0.1 * i;  // same every step
  auto wq = Var::constant(random_tensor({d, d}, rng));
  auto wk = Var::constant(random_tensor({d, d}, rng));
  auto wv = Var::constant(random_tensor({d, d}, rng));
  const auto r = cross_attention_fuse(Var::constant(ht), Var::constant(hh), wq, wk, wv);
  for (double w : r.weights.value().data()) EXPECT_NEAR(w, 1.0 / len, 1e-14);
  const Tensor v = linear_along(Var::constant(hh), wv, 0).value();
  for (std::size_t i = 0; i < r.out.value().size(); ++i) EXPECT_NEAR(r.out.value()[i], v[i], 1e-14);
}

TEST(CrossAttention, SingleStepIsValueProjection) {
  std::mt19937_64 rng(9);
  const Tensor ht = random_tensor({2, 3, 1}, rng), hh = random_tensor({2, 3, 1}, rng);
  auto wq = Var::constant(random_tensor({2, 2}, rng));
  auto wk = Var::constant(random_tensor({2, 2}, rng));
  auto wv = Var::constant(random_tensor({2, 2}, rng));
  const auto r = cross_attention_fuse(Var::constant(ht), Var::constant(hh), wq, wk, wv);
  for (double w : r.weights.value().data()) EXPECT_DOUBLE_EQ(w, 1.0);
  EXPECT_LT(max_abs_diff(r.out.value(), linear_along(Var::constant(hh), wv, 0).value()), 1e-15);
}

TEST(CrossAttention, MatchesExplicitLoop) {
  std::mt19937_64 rng(10);
  const std::size_t d = 4, n = 2, len = 3;
  const Tensor ht = random_tensor({d, n, len}, rng), hh = random_tensor({d, n, len}, rng);
  const Tensor wq = random_tensor({d, d}, rng), wk = random_tensor({d, d}, rng),
               wv = random_tensor({d, d}, rng);
  const auto r = cross_attention_fuse(Var::constant(ht), Var::constant(hh), Var::constant(wq),
                                      Var::constant(wk), Var::constant(wv));
  auto proj = [&](const Tensor& w, const Tensor& x, std::size_t c, std::size_t i, std::size_t l) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += w.at(c, j) * x.at(j, i, l);
    return acc;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < len; ++l) {
      std::vector<double> logits(len);
      double mx = -1e300;
      for (std::size_t s = 0; s < len; ++s) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += proj(wq, ht, c, i, l) * proj(wk, hh, c, i, s);
        logits[s] = dot / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, logits[s]);
      }
      double z = 0.0;
      for (double& v : logits) z += (v = std::exp(v - mx));
      double row = 0.0;
      for (std::size_t s = 0; s < len; ++s) row += r.weights.value().at(i, l, s);
      EXPECT_NEAR(row, 1.0, 1e-12);
      for (std::size_t c = 0; c < d; ++c) {
        double out = 0.0;
        for (std::size_t s = 0; s < len; ++s) out += logits[s] / z * proj(wv, hh, c, i, s);
        EXPECT_NEAR(r.out.value().at(c, i, l), out, 1e-10);
      }
    }
}

TEST(BuildConditioning, AblationsMatchDefinitions) {
  CondFixture f;
  std::mt19937_64 rng(11);
  const Tensor x1 = random_tensor({3, 8}, rng);
  auto run = [&](Ablation a) {
    std::mt19937_64 r(5);
    return build_conditioning(x1, f.g, f.p, f.cfg, a, r, false);
  };
  const auto full = run(Ablation::full);
  const auto no_freq = run(Ablation::no_frequency);
  const auto no_temp = run(Ablation::no_temporal);
  const auto no_cross = run(Ablation::no_cross);
  EXPECT_EQ(no_freq.c_con.value(), full.h_tilde.value());
  EXPECT_EQ(no_temp.c_con.value(), full.h_hat.value());
  const Tensor sum = add(full.h_tilde, full.h_hat).value();
  EXPECT_EQ(no_cross.c_con.value(), sum);
  for (const Var* v : {&full.h_in, &full.h_bar, &full.h_tilde, &full.h_hat, &full.c_con})
    EXPECT_EQ(v->shape(), (Shape{4, 3, 8}));
  // Four pairwise-distinct outputs.
  const std::vector<Tensor> outs{full.c_con.value(), no_freq.c_con.value(), no_temp.c_con.value(),
                                 no_cross.c_con.value()};
  for (std::size_t a = 0; a < outs.size(); ++a)
    for (std::size_t b = a + 1; b < outs.size(); ++b) EXPECT_GT(max_abs_diff(outs[a], outs[b]), 1e-6);
}

TEST(BuildConditioning, DeterministicAndFinite) {
  CondFixture f;
  std::mt19937_64 rng(12);
  const Tensor x1 = random_tensor({3, 8}, rng);
  std::mt19937_64 a(1), b(1);
  const Tensor c1 = build_conditioning(x1, f.g, f.p, f.cfg, Ablation::full, a, true).c_con.value();
  const Tensor c2 = build_conditioning(x1, f.g, f.p, f.cfg, Ablation::full, b, true).c_con.value();
  EXPECT_EQ(c1, c2);
  EXPECT_TRUE(c1.all_finite());
}

TEST(BuildConditioning, BothStreamsOffIsConfigError) {
  CondFixture f;
  StreamFlags none{false, false, false};
  EXPECT_THROW(build_conditioning(Tensor({3, 4}), f.g, f.p, f.cfg, none, f.rng, false), ConfigError);
}

TEST(BuildConditioning, NodeMismatchIsDimensionError) {
  CondFixture f;
  EXPECT_THROW(build_conditioning(Tensor({2, 4}), f.g, f.p, f.cfg, Ablation::full, f.rng, false),
               DimensionError);
}

TEST(BuildConditioning, GradientsMatchFiniteDifferences) {
  CondFixture f;
  std::mt19937_64 rng(13);
  const Tensor x1 = random_tensor({3, 5}, rng);
  std::vector<Var> leaves;
  for (const auto& [_, v] : f.store.entries()) leaves.push_back(v);
  auto loss = [&] {
    std::mt19937_64 r(3);
    return probe(build_conditioning(x1, f.g, f.p, f.cfg, Ablation::full, r, true).c_con);
  };
  const auto res = grad_check(loss, leaves, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(Ablation, ParseListsValidNames) {
  EXPECT_EQ(parse_ablation("no_cross"), Ablation::no_cross);
  try {
    parse_ablation("bogus");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no_frequency"), std::string::npos);
  }
}
