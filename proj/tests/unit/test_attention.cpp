#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fpt/attention.hpp"
#include "fpt/ops.hpp"
#include "fpt/transformers.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace fpt;
using testing_support::evaluate;
using testing_support::random_tensor;

TEST(Similarity, DotProductExamples) {
  EXPECT_EQ(sim_dot(std::vector<double>{1, 2}, std::vector<double>{3, 4}), 11.0);
  EXPECT_EQ(sim_dot(std::vector<double>{1, 0}, std::vector<double>{0, 5}), 0.0);
  EXPECT_EQ(sim_dot(std::vector<double>{0, 0}, std::vector<double>{3, 4}), 0.0);
  EXPECT_THROW(sim_dot(std::vector<double>{1}, std::vector<double>{1, 2}), ShapeError);
}

TEST(Similarity, NegativeSquaredEuclideanExamples) {
  EXPECT_EQ(sim_eud(std::vector<double>{2, -1}, std::vector<double>{2, -1}), 0.0);
  EXPECT_EQ(sim_eud(std::vector<double>{1, 0}, std::vector<double>{0, 1}), -2.0);
  EXPECT_EQ(sim_eud(std::vector<double>{3, 4}, std::vector<double>{0, 0}), -25.0);
  EXPECT_THROW(sim_eud(std::vector<double>{1}, std::vector<double>{1, 2}), ShapeError);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> q(4), k(4);
    for (double& v : q) v = rng.uniform(-1, 1);
    for (double& v : k) v = rng.uniform(-1, 1);
    EXPECT_LT(sim_eud(q, k), 0.0);
  }
}

TEST(Projection, IdentityZeroAndPerPixelMatmul) {
  const Tensor x = random_tensor({2, 3, 4, 5}, 1);
  EXPECT_EQ(evaluate([&](Tape& t) { return project(t.parameter(x), ConvParams::identity(3, 1)); }), x);
  const Tensor zero = evaluate([&](Tape& t) { return project(t.parameter(x), ConvParams::zeros(4, 3, 1, 1)); });
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);

  ConvParams p = ConvParams::zeros(4, 3, 1, 1);
  p.weight = random_tensor({4, 3, 1, 1}, 2);
  p.bias = random_tensor({1, 4, 1, 1}, 3);
  const Tensor y = evaluate([&](Tape& t) { return project(t.parameter(x), p); });
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          double acc = p.bias[o];
          for (std::size_t c = 0; c < 3; ++c) acc += p.weight[o * 3 + c] * x.at(b, c, i, j);
          EXPECT_NEAR(y.at(b, o, i, j), acc, 1e-14);
        }
  EXPECT_THROW(evaluate([&](Tape& t) { return project(t.parameter(random_tensor({1, 2, 2, 2}, 4)), p); }),
               ShapeError);
}

TEST(MixtureWeights, UniformForZeroVectorsAndOneForSinglePart) {
  const Tensor keys = random_tensor({2, 8, 3, 3}, 1);
  const Tensor pi = evaluate([&](Tape& t) { return mixture_weights(t.parameter(keys), MosParams::zeros(4, 8)); });
  for (double v : pi.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const Tensor one = evaluate([&](Tape& t) {
    return mixture_weights(t.parameter(keys), MosParams::kaiming(1, 8, 5, "m"));
  });
  for (double v : one.data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(evaluate([&](Tape& t) { return mixture_weights(t.parameter(keys), MosParams::zeros(2, 6)); }),
               ShapeError);
}

TEST(MixtureWeights, MatchesSoftmaxOfHandComputedDots) {
  const Tensor keys = random_tensor({2, 6, 3, 2}, 1);
  MosParams mos = MosParams::kaiming(3, 6, 9, "mos");
  const Tensor pi = evaluate([&](Tape& t) { return mixture_weights(t.parameter(keys), mos); });
  ASSERT_EQ(pi.shape(), (Shape{2, 1, 1, 3}));
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> mean(6, 0.0);
    for (std::size_t c = 0; c < 6; ++c) {
      for (std::size_t p = 0; p < 6; ++p) mean[c] += keys[(b * 6 + c) * 6 + p];
      mean[c] /= 6.0;
    }
    std::vector<double> z(3, 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t c = 0; c < 6; ++c) z[n] += mos.mixture[n * 6 + c] * mean[c];
      total += std::exp(z[n]);
    }
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(pi[b * 3 + n], std::exp(z[n]) / total, 1e-14);
  }
}

TEST(MosNormalize, SinglePartIsExactlySoftmax) {
  const Tensor scores = random_tensor({2, 1, 5, 7}, 1, -4, 4);
  const Tensor w = evaluate([&](Tape& t) {
    return mos_normalize(t.parameter(scores), t.constant(Tensor::full({2, 1, 1, 1}, 1.0)));
  });
  for (std::size_t r = 0; r < 10; ++r) {
    const auto row = ops::softmax(scores.data().subspan(r * 7, 7));
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(w[r * 7 + j], row[j], 1e-12);
  }
}

TEST(MosNormalize, IdenticalPartsAndOneHotMixture) {
  Tensor scores = random_tensor({1, 2, 3, 4}, 2);
  for (std::size_t i = 0; i < 12; ++i) scores[12 + i] = scores[i];
  const Tensor half = Tensor::full({1, 1, 1, 2}, 0.5);
  const Tensor w = evaluate([&](Tape& t) { return mos_normalize(t.parameter(scores), t.constant(half)); });
  const Tensor one_hot({1, 1, 1, 2}, {1.0, 0.0});
  Tensor different = random_tensor({1, 2, 3, 4}, 3);
  const Tensor w2 = evaluate([&](Tape& t) { return mos_normalize(t.parameter(different), t.constant(one_hot)); });
  for (std::size_t r = 0; r < 3; ++r) {
    const auto row = ops::softmax(scores.data().subspan(r * 4, 4));
    const auto row0 = ops::softmax(different.data().subspan(r * 4, 4));
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(w[r * 4 + j], row[j], 1e-15);
      EXPECT_NEAR(w2[r * 4 + j], row0[j], 1e-15);
    }
  }
}

TEST(MosNormalize, RowsArePositiveAndSumToOne) {
  const Tensor scores = random_tensor({3, 4, 6, 9}, 4, -10, 10);
  const Tensor logits = random_tensor({3, 1, 1, 4}, 5);
  const Tensor w = evaluate([&](Tape& t) {
    return mos_normalize(t.parameter(scores), ops::softmax(t.parameter(logits)));
  });
  EXPECT_NO_THROW(require_normalized(w, 1e-12, "test"));
  for (double v : w.data()) EXPECT_GT(v, 0.0);
}

TEST(MosNormalize, RejectsUnnormalizedOrMismatchedMixture) {
  const Tensor scores = random_tensor({1, 2, 3, 4}, 1);
  EXPECT_THROW(evaluate([&](Tape& t) {
                 return mos_normalize(t.parameter(scores), t.constant(Tensor::full({1, 1, 1, 2}, 0.6)));
               }),
               ContractError);
  EXPECT_THROW(evaluate([&](Tape& t) {
                 return mos_normalize(t.parameter(scores), t.constant(Tensor::full({1, 1, 1, 3}, 1.0 / 3)));
               }),
               ShapeError);
}

// Exact arithmetic only: with dyadic logits and an integer shift every intermediate is
// representable, so the max-shifted softmax is bit-for-bit invariant.
TEST(Softmax, ShiftInvarianceIsExactForRepresentableShifts) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(6), shifted(6);
    const double c = std::floor(rng.uniform(-20, 20));
    for (std::size_t i = 0; i < 6; ++i) {
      x[i] = std::ldexp(std::floor(rng.uniform(-64, 64)), -3);
      shifted[i] = x[i] + c;
    }
    EXPECT_EQ(ops::softmax(x), ops::softmax(shifted));
  }
}

TEST(Aggregate, OneHotSelectsAndUniformAverages) {
  const Tensor v = random_tensor({1, 1, 4, 3}, 1);
  Tensor one_hot({1, 1, 2, 4}, {0, 0, 1, 0, 1, 0, 0, 0});
  const Tensor sel = evaluate([&](Tape& t) { return aggregate(t.constant(one_hot), t.parameter(v)); });
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(sel[c], v[2 * 3 + c]);
    EXPECT_EQ(sel[3 + c], v[c]);
  }
  const Tensor avg = evaluate([&](Tape& t) {
    return aggregate(t.constant(Tensor::full({1, 1, 1, 4}, 0.25)), t.parameter(v));
  });
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(avg[c], (v[c] + v[3 + c] + v[6 + c] + v[9 + c]) / 4.0, 1e-15);
  }
  EXPECT_THROW(evaluate([&](Tape& t) {
                 return aggregate(t.constant(Tensor::full({1, 1, 1, 4}, 0.3)), t.parameter(v));
               }),
               ContractError);
}

TEST(Aggregate, MatchesDoubleLoopAndStaysInConvexHull) {
  const Tensor logits = random_tensor({2, 1, 5, 6}, 1, -3, 3);
  const Tensor v = random_tensor({2, 1, 6, 4}, 2);
  Tensor w;
  const Tensor out = evaluate([&](Tape& t) {
    const Var wv = ops::softmax(t.parameter(logits));
    w = wv.value();
    return aggregate(wv, t.parameter(v));
  });
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = 0.0, lo = 1e9, hi = -1e9;
        for (std::size_t j = 0; j < 6; ++j) {
          const double vj = v[(b * 6 + j) * 4 + c];
          acc += w[(b * 5 + i) * 6 + j] * vj;
          lo = std::min(lo, vj);
          hi = std::max(hi, vj);
        }
        const double o = out[(b * 5 + i) * 4 + c];
        EXPECT_NEAR(o, acc, 1e-14);
        EXPECT_GE(o, lo - 1e-15);
        EXPECT_LE(o, hi + 1e-15);
      }
}

TEST(PartScores, SinglePartEqualsFullVectorSimilarity) {
  const Tensor q = random_tensor({1, 6, 2, 2}, 1);
  const Tensor k = random_tensor({1, 6, 3, 1}, 2);
  for (Similarity sim : {Similarity::dot, Similarity::euclidean}) {
    const Tensor s = evaluate([&](Tape& t) { return part_scores(t.parameter(q), t.parameter(k), 1, {sim}); });
    const Tensor s3 = evaluate([&](Tape& t) { return part_scores(t.parameter(q), t.parameter(k), 3, {sim}); });
    ASSERT_EQ(s.shape(), (Shape{1, 1, 4, 3}));
    ASSERT_EQ(s3.shape(), (Shape{1, 3, 4, 3}));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> qi(6), kj(6);
        for (std::size_t c = 0; c < 6; ++c) {
          qi[c] = q[c * 4 + i];
          kj[c] = k[c * 3 + j];
        }
        const double full = sim == Similarity::dot ? sim_dot(qi, kj) : sim_eud(qi, kj);
        EXPECT_NEAR(s[i * 3 + j], full, 1e-14);
        // per-part scores over contiguous channel slices add up to the full similarity
        double parts = 0.0;
        for (std::size_t n = 0; n < 3; ++n) parts += s3[(n * 4 + i) * 3 + j];
        EXPECT_NEAR(parts, full, 1e-14);
      }
  }
  EXPECT_THROW(evaluate([&](Tape& t) { return part_scores(t.parameter(q), t.parameter(k), 4, {}); }), ShapeError);
}

TEST(PartScores, OptionalDotScaling) {
  const Tensor q = random_tensor({1, 4, 2, 1}, 1);
  const Tensor k = random_tensor({1, 4, 2, 1}, 2);
  const Tensor plain = evaluate([&](Tape& t) { return part_scores(t.parameter(q), t.parameter(k), 1, {}); });
  const Tensor scaled = evaluate([&](Tape& t) {
    return part_scores(t.parameter(q), t.parameter(k), 1, {Similarity::dot, true});
  });
  for (std::size_t i = 0; i < plain.numel(); ++i) EXPECT_NEAR(scaled[i], plain[i] / 2.0, 1e-15);
}

// ---- transformers against the brute-force oracle ----

namespace {

template <class P>
P random_block(P p, std::uint64_t seed) {
  testing_support::randomize_block(p, seed);
  return p;
}

Tensor run_st(const Tensor& x, const StParams& p, const AttentionOptions& opt = {},
              AttentionProbe* probe = nullptr) {
  return evaluate([&](Tape& t) { return self_transformer(t.parameter(x), p, opt, probe); });
}

}  // namespace

TEST(SelfTransformer, MatchesOracleForBothSimilarities) {
  const Tensor x = random_tensor({2, 8, 3, 4}, 1);
  const StParams p = random_block(StParams::kaiming(8, 8, 2, 1, "st"), 2);
  for (Similarity sim : {Similarity::dot, Similarity::euclidean}) {
    for (bool scaled : {false, true}) {
      const Tensor got = run_st(x, p, {sim, scaled});
      const auto m = oracle::from_tensor<double>(x);
      const Tensor want = oracle::to_tensor(oracle::global_attention(m, m, p.proj, p.mos, sim, scaled));
      EXPECT_LT(max_abs_diff(got, want), 1e-12);
    }
  }
}

TEST(SelfTransformer, PermutationEquivariant) {
  const std::size_t c = 8, h = 4, w = 5, hw = h * w;
  const StParams p = random_block(StParams::kaiming(c, c, 2, 3, "st"), 4);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({1, c, h, w}, 100 + trial);
    std::vector<std::size_t> perm(hw);
    for (std::size_t i = 0; i < hw; ++i) perm[i] = i;
    for (std::size_t i = hw - 1; i > 0; --i) {
      std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1))]);
    }
    Tensor xp({1, c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) xp[ch * hw + i] = x[ch * hw + perm[i]];
    const Tensor y = run_st(x, p);
    const Tensor yp = run_st(xp, p);
    double worst = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) worst = std::max(worst, std::abs(yp[ch * hw + i] - y[ch * hw + perm[i]]));
    EXPECT_LT(worst, 1e-12) << "trial " << trial;
  }
}

TEST(SelfTransformer, ProbeRowsSumToOne) {
  AttentionProbe probe;
  run_st(random_tensor({2, 8, 4, 4}, 1, -3, 3), StParams::kaiming(8, 8, 2, 1, "st"), {}, &probe);
  ASSERT_EQ(probe.weights.shape(), (Shape{2, 1, 16, 16}));
  EXPECT_NO_THROW(require_normalized(probe.weights, 1e-12, "st"));
}

TEST(SelfTransformer, RejectsIndivisibleParts) {
  EXPECT_THROW(run_st(random_tensor({1, 6, 2, 2}, 1), StParams::kaiming(6, 6, 4, 1, "st")), ShapeError);
}

TEST(GroundingTransformer, MatchesOracleAndKeepsFineResolution) {
  const Tensor fine = random_tensor({2, 8, 4, 6}, 1);
  const Tensor coarse = random_tensor({2, 8, 2, 3}, 2);
  const GtParams p = random_block(GtParams::kaiming(8, 8, 4, 3, "gt"), 4);
  for (Similarity sim : {Similarity::euclidean, Similarity::dot}) {
    AttentionProbe probe;
    const Tensor got = evaluate([&](Tape& t) {
      return grounding_transformer(t.parameter(fine), t.parameter(coarse), p, {sim}, &probe);
    });
    ASSERT_EQ(got.shape(), fine.shape());
    EXPECT_EQ(probe.weights.shape(), (Shape{2, 1, 24, 6}));
    EXPECT_NO_THROW(require_normalized(probe.weights, 1e-12, "gt"));
    const Tensor want = oracle::to_tensor(oracle::global_attention(
        oracle::from_tensor<double>(fine), oracle::from_tensor<double>(coarse), p.proj, p.mos, sim));
    EXPECT_LT(max_abs_diff(got, want), 1e-12);
  }
}

TEST(GroundingTransformer, RejectsBatchOrWidthMismatch) {
  const GtParams p = GtParams::kaiming(8, 8, 4, 3, "gt");
  EXPECT_THROW(evaluate([&](Tape& t) {
                 return grounding_transformer(t.parameter(random_tensor({1, 8, 4, 4}, 1)),
                                              t.parameter(random_tensor({2, 8, 2, 2}, 2)), p);
               }),
               ShapeError);
  EXPECT_THROW(evaluate([&](Tape& t) {
                 return grounding_transformer(t.parameter(random_tensor({1, 8, 4, 4}, 1)),
                                              t.parameter(random_tensor({1, 4, 2, 2}, 2)), p);
               }),
               ShapeError);
}

namespace {

Tensor run_lgt(const Tensor& fine, const Tensor& coarse, const GtParams& p, AttentionProbe* probe = nullptr) {
  return evaluate([&](Tape& t) {
    return locality_grounding_transformer(t.parameter(fine), t.parameter(coarse), p, probe);
  });
}

GtParams window_params(std::size_t square, std::uint64_t seed) {
  GtParams p = random_block(GtParams::kaiming(8, 8, 4, seed, "lgt"), seed + 1);
  p.square_size = square;
  return p;
}

}  // namespace

TEST(LocalityGrounding, MatchesMaskedOracleOverSizes) {
  struct Case {
    std::size_t fh, fw, ch, cw, square;
  };
  const Case cases[] = {{4, 4, 4, 4, 3}, {8, 8, 4, 4, 3}, {8, 8, 4, 4, 5}, {8, 6, 4, 3, 3},
                        {6, 6, 2, 2, 1}, {8, 8, 2, 2, 5}, {5, 7, 5, 7, 3}, {8, 4, 4, 2, 7}};
  std::uint64_t seed = 1;
  for (const Case& c : cases) {
    const Tensor fine = random_tensor({2, 8, c.fh, c.fw}, seed++);
    const Tensor coarse = random_tensor({2, 8, c.ch, c.cw}, seed++);
    const GtParams p = window_params(c.square, seed++);
    AttentionProbe probe;
    const Tensor got = run_lgt(fine, coarse, p, &probe);
    ASSERT_EQ(got.shape(), fine.shape());
    EXPECT_EQ(probe.weights.shape(), (Shape{2, 1, c.fh * c.fw, c.square * c.square}));
    EXPECT_NO_THROW(require_normalized(probe.weights, 1e-12, "lgt"));
    const Tensor want = oracle::to_tensor(
        oracle::window_attention(oracle::from_tensor<double>(fine), oracle::from_tensor<double>(coarse), p));
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << c.fh << "x" << c.fw << " / " << c.ch << "x" << c.cw << " s=" << c.square;
  }
}

TEST(LocalityGrounding, UnitWindowCopiesTheValueUnderneath) {
  const Tensor fine = random_tensor({1, 8, 4, 4}, 1);
  const Tensor coarse = random_tensor({1, 8, 2, 2}, 2);
  const GtParams p = window_params(1, 3);
  const Tensor got = run_lgt(fine, coarse, p);
  const Tensor v = evaluate([&](Tape& t) { return project(t.parameter(coarse), p.proj.v); });
  for (std::size_t ch = 0; ch < 8; ++ch)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(got.at(0, ch, y, x), v.at(0, ch, y / 2, x / 2), 1e-14);
}

TEST(LocalityGrounding, RejectsMissingOrEvenWindow) {
  GtParams p = GtParams::kaiming(8, 8, 4, 1, "lgt");
  const Tensor fine = random_tensor({1, 8, 4, 4}, 1);
  const Tensor coarse = random_tensor({1, 8, 2, 2}, 2);
  EXPECT_THROW(run_lgt(fine, coarse, p), ConfigError);
  p.square_size = 4;
  EXPECT_THROW(run_lgt(fine, coarse, p), ConfigError);
  p.square_size = 3;
  EXPECT_NO_THROW(run_lgt(fine, coarse, p));
}
