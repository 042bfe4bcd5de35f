#include <gtest/gtest.h>

#include <cmath>

#include "cparr/inference.hpp"
#include "cparr/rng.hpp"

using namespace cparr;

namespace {

ScoredProposal scored(std::size_t index, double confidence, const Box& box) {
  ScoredProposal sp;
  sp.proposal_index = index;
  sp.confidence = confidence;
  sp.refined_box = box;
  return sp;
}

std::vector<ScoredProposal> make_candidates(Rng& rng, std::size_t n, std::size_t index_base) {
  std::vector<ScoredProposal> out;
  for (std::size_t i = 0; i < n; ++i) {
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    b.x_max = b.x_min + rng.uniform(5, 30);
    b.y_max = b.y_min + rng.uniform(5, 30);
    out.push_back(scored(index_base + i, rng.uniform(0.05, 0.95), b));
  }
  return out;
}

InferenceConfig config_for(InferenceMode mode, double tau = 0.5) {
  InferenceConfig c;
  c.mode = mode;
  c.tau_pred = tau;
  return c;
}

}  // namespace

TEST(CombinedScore, ProductWhenPredicateAboveThreshold) {
  EXPECT_NEAR(combined_score(0.8, 0.9, 0.7, 0.5), 0.504, 1e-12);
}

TEST(CombinedScore, PredicateZeroedBelowThreshold) {
  EXPECT_NEAR(combined_score(0.8, 0.9, 0.3, 0.5), 0.72, 1e-12);
}

TEST(CombinedScore, BoundaryIsInclusive) {
  EXPECT_NEAR(combined_score(0.8, 0.9, 0.5, 0.5), 0.8 * 0.9 * 0.5, 1e-12);
}

TEST(CombinedScore, RejectsOutOfRangeInputs) {
  EXPECT_THROW(combined_score(1.2, 0.5, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(combined_score(0.5, -0.1, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(combined_score(0.5, 0.5, std::nan(""), 0.5), std::invalid_argument);
}

TEST(CombinedScore, MonotoneWithinBranches) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double cs = rng.uniform(), co = rng.uniform(), tau = rng.uniform();
    double p1 = rng.uniform(), p2 = rng.uniform();
    if (p1 > p2) std::swap(p1, p2);
    // Same branch comparisons only.
    if ((p1 >= tau) == (p2 >= tau)) {
      EXPECT_LE(combined_score(cs, co, p1, tau), combined_score(cs, co, p2, tau) + 1e-15);
    }
    const double base = combined_score(cs, co, p1, tau);
    EXPECT_LE(combined_score(cs * 0.5, co, p1, tau), base + 1e-15);
    EXPECT_LE(combined_score(cs, co * 0.5, p1, tau), base + 1e-15);
  }
}

TEST(RankPairs, FullModeMatchesBruteForceOnRandomTables) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ns = 1 + rng.index(5), no = 1 + rng.index(5);
    const auto subjects = make_candidates(rng, ns, 0);
    const auto objects = make_candidates(rng, no, 100);
    std::vector<std::vector<double>> p(ns, std::vector<double>(no));
    for (auto& row : p) {
      for (double& v : row) v = rng.uniform();
    }
    const double tau = rng.uniform();
    InferenceConfig cfg = config_for(InferenceMode::kFull, tau);
    const auto ranked = rank_pairs(subjects, objects, p, cfg);
    ASSERT_EQ(ranked.size(), ns * no);

    // Brute force: maximize the combined product over the K x K grid.
    double best = -1.0;
    std::size_t best_s = 0, best_o = 0;
    for (std::size_t si = 0; si < ns; ++si) {
      for (std::size_t oi = 0; oi < no; ++oi) {
        const double cs = subjects[si].confidence, co = objects[oi].confidence;
        const double score = p[si][oi] >= tau ? cs * co * p[si][oi] : cs * co;
        if (score > best ||
            (score == best && (subjects[si].proposal_index < subjects[best_s].proposal_index ||
                               (subjects[si].proposal_index == subjects[best_s].proposal_index &&
                                objects[oi].proposal_index < objects[best_o].proposal_index)))) {
          best = score;
          best_s = si;
          best_o = oi;
        }
      }
    }
    EXPECT_EQ(ranked[0].subject.proposal_index, subjects[best_s].proposal_index);
    EXPECT_EQ(ranked[0].object.proposal_index, objects[best_o].proposal_index);
    EXPECT_DOUBLE_EQ(ranked[0].combined, best);
    for (std::size_t i = 1; i < ranked.size(); ++i) {
      EXPECT_GE(ranked[i - 1].combined, ranked[i].combined);
    }
  }
}

TEST(RankPairs, CpModeIgnoresPredicateScores) {
  Rng rng(3);
  const auto subjects = make_candidates(rng, 4, 0);
  const auto objects = make_candidates(rng, 4, 100);
  std::vector<std::vector<double>> pa(4, std::vector<double>(4));
  std::vector<std::vector<double>> pb(4, std::vector<double>(4));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      pa[i][j] = rng.uniform();
      pb[i][j] = rng.uniform();
    }
  }
  const InferenceConfig cfg = config_for(InferenceMode::kCp);
  const auto ra = rank_pairs(subjects, objects, pa, cfg);
  const auto rb = rank_pairs(subjects, objects, pb, cfg);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].subject.proposal_index, rb[i].subject.proposal_index);
    EXPECT_EQ(ra[i].object.proposal_index, rb[i].object.proposal_index);
    EXPECT_DOUBLE_EQ(ra[i].combined, rb[i].combined);
    EXPECT_TRUE(std::isnan(ra[i].predicate_confidence));
  }
  // cp ordering follows the product of role confidences
  EXPECT_DOUBLE_EQ(ra[0].combined, ra[0].subject.confidence * ra[0].object.confidence);
}

TEST(RankPairs, CpSingleCandidatePerRole) {
  const std::vector<ScoredProposal> subjects{scored(3, 0.2, {0, 0, 10, 10})};
  const std::vector<ScoredProposal> objects{scored(9, 0.4, {20, 0, 30, 10})};
  const auto ranked = rank_pairs(subjects, objects, {}, config_for(InferenceMode::kCp));
  ASSERT_EQ(ranked.size(), 1u);
  EXPECT_EQ(ranked[0].subject.proposal_index, 3u);
  EXPECT_EQ(ranked[0].object.proposal_index, 9u);
}

TEST(RankPairs, PaModeRanksByPredicateAlone) {
  Rng rng(4);
  const auto subjects = make_candidates(rng, 3, 0);
  const auto objects = make_candidates(rng, 3, 100);
  std::vector<std::vector<double>> p{{0.1, 0.2, 0.3}, {0.9, 0.05, 0.4}, {0.2, 0.6, 0.95}};
  const auto ranked = rank_pairs(subjects, objects, p, config_for(InferenceMode::kPa));
  EXPECT_DOUBLE_EQ(ranked[0].combined, 0.95);
  EXPECT_DOUBLE_EQ(ranked[1].combined, 0.9);
  EXPECT_EQ(ranked[0].subject.proposal_index, subjects[2].proposal_index);
}

TEST(RankPairs, FullRankingInvariantToCommonPredicateScaling) {
  Rng rng(5);
  const auto subjects = make_candidates(rng, 4, 0);
  const auto objects = make_candidates(rng, 4, 100);
  std::vector<std::vector<double>> p(4, std::vector<double>(4));
  for (auto& row : p) {
    for (double& v : row) v = rng.uniform(0.6, 1.0);
  }
  const double scale = 0.7;  // keeps every score above tau
  std::vector<std::vector<double>> scaled = p;
  for (auto& row : scaled) {
    for (double& v : row) v *= scale;
  }
  InferenceConfig cfg = config_for(InferenceMode::kFull, 0.3);
  const auto ra = rank_pairs(subjects, objects, p, cfg);
  const auto rb = rank_pairs(subjects, objects, scaled, cfg);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].subject.proposal_index, rb[i].subject.proposal_index);
    EXPECT_EQ(ra[i].object.proposal_index, rb[i].object.proposal_index);
  }
}

TEST(RankPairs, EmptySelectionThrows) {
  EXPECT_THROW(rank_pairs({}, {}, {}, config_for(InferenceMode::kFull)), std::runtime_error);
}

TEST(RankPairs, PairGridBounded) {
  Rng rng(6);
  const auto subjects = make_candidates(rng, 5, 0);
  const auto objects = make_candidates(rng, 5, 100);
  std::vector<std::vector<double>> p(5, std::vector<double>(5, 0.9));
  const auto ranked = rank_pairs(subjects, objects, p, config_for(InferenceMode::kFull));
  EXPECT_EQ(ranked.size(), 25u);
}

TEST(PredictTopBoxes, TopPairAndDeduplication) {
  std::vector<PairPrediction> ranked;
  PairPrediction a;
  a.subject = scored(1, 0.9, {0, 0, 10, 10});
  a.object = scored(2, 0.8, {20, 0, 30, 10});
  a.combined = 0.9;
  PairPrediction b;
  b.subject = scored(1, 0.9, {0, 0, 10, 10});  // duplicate subject
  b.object = scored(5, 0.6, {40, 0, 50, 10});
  b.combined = 0.8;
  PairPrediction c;
  c.subject = scored(7, 0.5, {60, 0, 70, 10});
  c.object = scored(2, 0.8, {20, 0, 30, 10});  // duplicate object
  c.combined = 0.7;
  ranked = {a, b, c};

  const auto [k1_subjects, k1_objects] = predict_top_boxes(ranked, 1);
  ASSERT_EQ(k1_subjects.size(), 1u);
  EXPECT_DOUBLE_EQ(k1_subjects[0].x_min, 0.0);
  ASSERT_EQ(k1_objects.size(), 1u);
  EXPECT_DOUBLE_EQ(k1_objects[0].x_min, 20.0);

  const auto [k2_subjects, k2_objects] = predict_top_boxes(ranked, 2);
  ASSERT_EQ(k2_subjects.size(), 2u);
  EXPECT_DOUBLE_EQ(k2_subjects[1].x_min, 60.0);  // next distinct subject
  ASSERT_EQ(k2_objects.size(), 2u);
  EXPECT_DOUBLE_EQ(k2_objects[1].x_min, 40.0);

  const auto [all_subjects, all_objects] = predict_top_boxes(ranked, 50);
  EXPECT_EQ(all_subjects.size(), 2u);  // only two distinct subjects exist
  EXPECT_EQ(all_objects.size(), 2u);
}

TEST(PredictTopBoxes, EmptyRankingThrows) {
  EXPECT_THROW(predict_top_boxes({}, 1), std::invalid_argument);
}
