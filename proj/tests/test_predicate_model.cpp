#include <gtest/gtest.h>

#include <cmath>

#include "cparr/dataset_io.hpp"
#include "cparr/gradcheck.hpp"
#include "cparr/pairing.hpp"
#include "cparr/predicate_model.hpp"

using namespace cparr;

namespace {

Tensor random_map(Rng& rng, std::size_t grid = 5) {
  Tensor t({grid, grid, static_cast<std::size_t>(kMapChannels)});
  for (double& v : t.data) v = rng.uniform();
  return t;
}

// Small labeled pair set from the geometry of the rule table: maps carry the
// members' coordinate channels, so the queried predicate is recoverable.
std::vector<PairSample> rule_based_samples(int count, int num_predicates, std::uint64_t seed,
                                           int grid = 5) {
  Rng rng(seed);
  std::vector<PairSample> out;
  Scene scene;
  while (static_cast<int>(out.size()) < count) {
    std::vector<Entity> es(2);
    for (Entity& e : es) {
      e.category_id = static_cast<int>(rng.index(4));
      e.color = category_base_color(e.category_id);
      e.shape_kind = category_shape_kind(e.category_id);
      e.box.x_min = rng.uniform(0, 60);
      e.box.y_min = rng.uniform(0, 60);
      e.box.x_max = e.box.x_min + rng.uniform(20, 36);
      e.box.y_max = e.box.y_min + rng.uniform(20, 36);
    }
    scene.entities = es;
    scene.raster = render_scene(es, 96, 96);
    scene.relations = derive_relations(es, 96, 96, num_predicates);
    const ScenePlanes planes(scene);
    Tensor m0, m1, v0, v1;
    planes.featurize(es[0].box, grid, m0, v0);
    planes.featurize(es[1].box, grid, m1, v1);

    PairSample s;
    s.subject_map = m0;
    s.object_map = m1;
    s.subject_vec = v0;
    s.object_vec = v1;
    s.subject_spatial = spatial_feature_of(es[0].box, 96, 96);
    s.object_spatial = spatial_feature_of(es[1].box, 96, 96);
    s.subject_category = es[0].category_id;
    s.object_category = es[1].category_id;
    s.label.assign(static_cast<std::size_t>(num_predicates) + 1, 0);
    std::vector<int> predicates;
    for (const Relation& r : scene.relations) {
      if (r.subject == 0 && r.object == 1) predicates.push_back(r.predicate);
    }
    if (predicates.empty()) {
      s.label.back() = 1;
      s.provenance = PairProvenance::kNegNoRelation;
      s.true_predicate = -1;
    } else {
      for (int p : predicates) s.label[static_cast<std::size_t>(p)] = 1;
      s.provenance = PairProvenance::kPositive;
      s.true_predicate = predicates[rng.index(predicates.size())];
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(StackPair, SelfStackDuplicatesChannels) {
  Rng rng(1);
  const Tensor m = random_map(rng);
  const Tensor s = stack_pair(m, m);
  EXPECT_EQ(s.shape[2], 2u * kMapChannels);
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 5; ++x) {
      for (std::size_t c = 0; c < kMapChannels; ++c) {
        EXPECT_DOUBLE_EQ(s.at(y, x, c), s.at(y, x, c + kMapChannels));
      }
    }
  }
}

TEST(StackPair, SubjectFirstOrderMatters) {
  Rng rng(2);
  const Tensor a = random_map(rng), b = random_map(rng);
  const Tensor ab = stack_pair(a, b), ba = stack_pair(b, a);
  EXPECT_NE(ab.data, ba.data);
  EXPECT_DOUBLE_EQ(ab.at(1, 1, 0), a.at(1, 1, 0));
  EXPECT_DOUBLE_EQ(ab.at(1, 1, kMapChannels), b.at(1, 1, 0));
}

TEST(StackPair, ShapeMismatchThrows) {
  Rng rng(3);
  const Tensor a = random_map(rng, 5), b = random_map(rng, 7);
  EXPECT_THROW(stack_pair(a, b), std::invalid_argument);
}

TEST(PredicateForward, ZeroHeadGivesHalfConfidences) {
  Rng rng(4);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 8, 5, rng);
  p.conv4.kernels.fill(0.0);
  p.conv4.bias.fill(0.0);
  const Tensor pair = stack_pair(random_map(rng), random_map(rng));
  const PredicateForward f = predicate_forward(p, pair);
  ASSERT_EQ(f.confidences.size(), 6u);
  for (double c : f.confidences.data) EXPECT_DOUBLE_EQ(c, 0.5);
}

TEST(PredicateForward, OutputLengthIsPredicatesPlusBackground) {
  Rng rng(5);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 8, 3, rng);
  const PredicateForward f = predicate_forward(p, stack_pair(random_map(rng), random_map(rng)));
  EXPECT_EQ(f.logits.size(), 4u);
  for (double c : f.confidences.data) {
    EXPECT_GT(c, 0.0);
    EXPECT_LT(c, 1.0);
  }
}

TEST(PredicateForward, SwapSensitive) {
  Rng rng(6);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 8, 3, rng);
  const Tensor a = random_map(rng), b = random_map(rng);
  const PredicateForward fab = predicate_forward(p, stack_pair(a, b));
  const PredicateForward fba = predicate_forward(p, stack_pair(b, a));
  EXPECT_NE(fab.logits.data, fba.logits.data);
}

TEST(PredicateForward, GradientCheckThroughConvStack) {
  Rng rng(7);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 6, 3, rng);
  Tensor pair = stack_pair(random_map(rng), random_map(rng));
  Tensor proj({4});
  init_uniform(proj, 1.0, rng);
  const auto loss = [&]() {
    PredicateForward f = predicate_forward(p, pair);
    double s = 0.0;
    for (std::size_t i = 0; i < f.logits.size(); ++i) s += f.logits.data[i] * proj.data[i];
    return s;
  };
  PredicateForward f = predicate_forward(p, pair);
  const std::vector<Tensor> grads = predicate_backward(p, f, proj);
  std::vector<const Tensor*> grad_ptrs;
  for (const Tensor& g : grads) grad_ptrs.push_back(&g);
  const double err = finite_diff_check(loss, p.parameters(), grad_ptrs, 1e-5, 48);
  EXPECT_LT(err, 1e-4);
}

TEST(PredicateTrain, InitialLossNearLogTwoWithZeroHead) {
  Rng rng(8);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 8, 4, rng);
  p.conv4.kernels.fill(0.0);
  p.conv4.bias.fill(0.0);
  const auto samples = rule_based_samples(8, 4, 9);
  PredicateTrainConfig cfg;
  cfg.max_iterations = 1;
  cfg.batch_size = 8;
  Rng train_rng(10);
  const auto curve = train_predicate(p, samples, cfg, train_rng);
  EXPECT_NEAR(curve[0], std::log(2.0), 1e-9);
}

TEST(PredicateTrain, ReproducibleLossCurves) {
  const auto samples = rule_based_samples(24, 4, 11);
  PredicateTrainConfig cfg;
  cfg.max_iterations = 25;
  cfg.batch_size = 8;
  Rng ia(12), ib(12);
  PredicateNetParams pa = PredicateNetParams::init(kMapChannels, 8, 4, ia);
  PredicateNetParams pb = PredicateNetParams::init(kMapChannels, 8, 4, ib);
  Rng ta(13), tb(13);
  const auto ca = train_predicate(pa, samples, cfg, ta);
  const auto cb = train_predicate(pb, samples, cfg, tb);
  EXPECT_EQ(ca, cb);
  EXPECT_EQ(pa.conv1.kernels.data, pb.conv1.kernels.data);
}

TEST(PredicateTrain, LearnsRulePredicatesAboveChance) {
  const int num_predicates = 5;
  const auto train_samples = rule_based_samples(220, num_predicates, 14);
  const auto eval_samples = rule_based_samples(120, num_predicates, 15);
  Rng init_rng(16);
  PredicateNetParams p = PredicateNetParams::init(kMapChannels, 12, num_predicates, init_rng);
  PredicateTrainConfig cfg;
  cfg.max_iterations = 700;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;  // desk-scale test budget
  Rng train_rng(17);
  train_predicate(p, train_samples, cfg, train_rng);

  int total = 0, hits = 0;
  for (const PairSample& s : eval_samples) {
    if (s.true_predicate < 0) continue;
    ++total;
    const PredicateForward f = predicate_forward(p, stack_pair(s.subject_map, s.object_map));
    hits += class_in_top_k(f.confidences, s.true_predicate, 1);
  }
  ASSERT_GT(total, 30);
  const double r1 = static_cast<double>(hits) / total;
  EXPECT_GE(r1, 3.0 / num_predicates);
}

TEST(LabelPair, GtPairIsPositiveWithPredicateBits) {
  Scene scene;
  Entity a, b;
  a.category_id = 1;
  a.box = {5, 5, 30, 30};
  b.category_id = 2;
  b.box = {38, 5, 63, 30};  // left_of and near both hold for (a, b)
  scene.entities = {a, b};
  scene.relations = derive_relations(scene.entities, 96, 96, 5);
  Query q;
  q.subject_category = 1;
  q.predicate_id = 0;  // left_of holds for (a, b)
  q.object_category = 2;
  q.gt_subject_boxes = {a.box};
  q.gt_object_boxes = {b.box};
  const auto inst = query_relation_instances(scene, q);
  ASSERT_EQ(inst.instances.size(), 1u);
  const PairLabel label = label_pair(q, inst, a.box, b.box, 0.5);
  EXPECT_TRUE(label.positive);
  const auto bits = label_bits(label, 5);
  EXPECT_EQ(bits[0], 1);  // left_of
  EXPECT_EQ(bits[5], 0);  // background clear
  // near also holds for these boxes; multi-label bits stay consistent.
  EXPECT_EQ(bits[3], 1);
}

TEST(LabelPair, WrongEntityAndNoRelationKinds) {
  Scene scene;
  Entity a, b, c;
  a.category_id = 1;
  a.box = {5, 5, 30, 30};
  b.category_id = 2;
  b.box = {60, 5, 85, 30};
  c.category_id = 3;
  c.box = {5, 60, 30, 85};
  scene.entities = {a, b, c};
  scene.relations = derive_relations(scene.entities, 96, 96, 5);
  Query q;
  q.subject_category = 1;
  q.predicate_id = 0;
  q.object_category = 2;
  q.gt_subject_boxes = {a.box};
  q.gt_object_boxes = {b.box};
  const auto inst = query_relation_instances(scene, q);

  // Subject box far from any gt subject: wrong-entity negative.
  const PairLabel wrong = label_pair(q, inst, c.box, b.box, 0.5);
  EXPECT_FALSE(wrong.positive);
  EXPECT_EQ(wrong.provenance, PairProvenance::kNegWrongEntity);
  EXPECT_EQ(label_bits(wrong, 5)[5], 1);

  // Both members fine individually but paired across instances that do not
  // form the queried relation: no-relation negative. Here subject==a matched
  // and object==b matched is positive, so shift the object box so it stays
  // above the IoU bar while matching the same entity.
  Box near_b = b.box;
  near_b.x_min += 3;
  const PairLabel pos = label_pair(q, inst, a.box, near_b, 0.5);
  EXPECT_TRUE(pos.positive);
}

TEST(BuildGtPairs, BalancedAndStratified) {
  DatasetSpec spec;
  spec.image_width = 96;
  spec.image_height = 96;
  spec.num_object_categories = 4;
  spec.num_predicates = 5;
  spec.entities_per_scene_min = 3;
  spec.entities_per_scene_max = 4;
  spec.proposal_count = 8;
  spec.seed = 5;
  std::vector<SceneData> scenes;
  for (int i = 0; i < 10; ++i) {
    SceneData sd;
    sd.scene = generate_scene(spec, static_cast<std::uint64_t>(i));
    sd.queries = derive_queries(sd.scene);
    scenes.push_back(std::move(sd));
  }
  std::vector<const SceneData*> view;
  for (const auto& sd : scenes) view.push_back(&sd);
  PairBuildConfig cfg;
  cfg.max_samples = 60;
  cfg.seed = 6;
  const auto samples = build_gt_pairs(view, spec, FeatureConfig{5}, cfg);
  ASSERT_FALSE(samples.empty());
  std::size_t pos = 0, neg = 0;
  for (const auto& s : samples) {
    if (s.provenance == PairProvenance::kPositive) {
      ++pos;
      EXPECT_EQ(s.label.back(), 0);
      EXPECT_GE(s.true_predicate, 0);
    } else {
      ++neg;
      EXPECT_EQ(s.label.back(), 1);
      for (std::size_t c = 0; c + 1 < s.label.size(); ++c) EXPECT_EQ(s.label[c], 0);
    }
  }
  EXPECT_LE(pos > neg ? pos - neg : neg - pos, 1u);
  EXPECT_LE(samples.size(), 60u);
}

TEST(VectorVariant, InputDimensionBookkeeping) {
  EXPECT_EQ(vector_input_dim(VectorInputMode::kVec, kMapChannels, 16), 2u * kMapChannels);
  EXPECT_EQ(vector_input_dim(VectorInputMode::kVecSpatial, kMapChannels, 16),
            2u * kMapChannels + 10u);
  EXPECT_EQ(vector_input_dim(VectorInputMode::kVecPhrase, kMapChannels, 16),
            2u * kMapChannels + 32u);
  EXPECT_EQ(vector_input_dim(VectorInputMode::kVecSpatialPhrase, kMapChannels, 16),
            2u * kMapChannels + 42u);
}

TEST(VectorVariant, ZeroNetworkGivesHalfEverywhere) {
  Rng rng(20);
  VectorPredicateParams p =
      VectorPredicateParams::init(VectorInputMode::kVecSpatialPhrase, kMapChannels, 8, 4, 5, rng);
  for (Tensor* t : p.parameters()) t->fill(0.0);
  const auto samples = rule_based_samples(1, 5, 21);
  const VectorForward f = vector_variant_forward(p, samples[0]);
  for (std::size_t c = 0; c < f.confidences.size(); ++c) {
    EXPECT_DOUBLE_EQ(f.confidences.data[c], 0.5);
  }
}

TEST(VectorVariant, GradientCheck) {
  Rng rng(22);
  VectorPredicateParams p =
      VectorPredicateParams::init(VectorInputMode::kVecSpatialPhrase, kMapChannels, 6, 4, 3, rng);
  const auto samples = rule_based_samples(2, 3, 23);
  std::vector<const PairSample*> refs{&samples[0], &samples[1]};
  Tensor proj({2, 4});
  init_uniform(proj, 1.0, rng);
  const auto loss = [&]() {
    VectorForward f = vector_variant_forward(p, assemble_vector_inputs(p, refs));
    double s = 0.0;
    for (std::size_t i = 0; i < f.logits.size(); ++i) s += f.logits.data[i] * proj.data[i];
    return s;
  };
  VectorForward f = vector_variant_forward(p, assemble_vector_inputs(p, refs));
  const std::vector<Tensor> grads = vector_variant_backward(p, f, proj, refs);
  std::vector<const Tensor*> grad_ptrs;
  for (const Tensor& g : grads) grad_ptrs.push_back(&g);
  EXPECT_LT(finite_diff_check(loss, p.parameters(), grad_ptrs, 1e-5, 48), 1e-4);
}

TEST(VectorVariant, TrainingReducesLoss) {
  const auto samples = rule_based_samples(160, 5, 24);
  Rng init_rng(25);
  VectorPredicateParams p =
      VectorPredicateParams::init(VectorInputMode::kVecSpatial, kMapChannels, 8, 4, 5, init_rng);
  PredicateTrainConfig cfg;
  cfg.max_iterations = 250;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  Rng train_rng(26);
  const auto curve = train_vector_variant(p, samples, cfg, train_rng);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += curve[static_cast<std::size_t>(i)];
    tail += curve[curve.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
}
