#include <gtest/gtest.h>

#include <cmath>

#include "cparr/features.hpp"
#include "cparr/gradcheck.hpp"
#include "cparr/proposal_model.hpp"
#include "cparr/scene.hpp"

using namespace cparr;

namespace {

Proposal make_proposal(const Box& box, double fill, double image_w = 96, double image_h = 96) {
  Proposal p;
  p.box = box;
  p.feature_vector = Tensor({static_cast<std::size_t>(kMapChannels)});
  p.feature_vector.fill(fill);
  p.spatial_feature = spatial_feature_of(box, image_w, image_h);
  return p;
}

void zero_params(ProposalModuleParams& p) {
  for (Tensor* t : p.parameters()) t->fill(0.0);
}

// In-memory training set around one scene: a handful of jittered copies of
// each entity plus background boxes.
struct TinyTask {
  std::vector<Proposal> proposals;
  std::vector<Box> gt_boxes;
  std::vector<ProposalTrainQuery> queries;
  int category;

  TinyTask(double jitter, std::uint64_t seed, int category_in = 2) : category(category_in) {
    Rng rng(seed);
    const std::vector<Box> entities{{10, 10, 34, 34}, {50, 40, 80, 78}};
    gt_boxes = entities;
    for (const Box& e : entities) {
      for (int c = 0; c < 4; ++c) {
        const double jx = jitter * e.width(), jy = jitter * e.height();
        Box b{e.x_min + rng.uniform(-jx, jx), e.y_min + rng.uniform(-jy, jy),
              e.x_max + rng.uniform(-jx, jx), e.y_max + rng.uniform(-jy, jy)};
        proposals.push_back(make_proposal(clip_box(b, 96, 96), 0.9));
      }
    }
    for (int i = 0; i < 8; ++i) {
      Box b{rng.uniform(0, 60), rng.uniform(0, 60), 0, 0};
      b.x_max = b.x_min + rng.uniform(6, 30);
      b.y_max = b.y_min + rng.uniform(6, 30);
      b = clip_box(b, 96, 96);
      if (box_iou(b, entities[0]) < 0.3 && box_iou(b, entities[1]) < 0.3) {
        proposals.push_back(make_proposal(b, 0.1));
      }
    }
    ProposalTrainQuery q;
    q.category = category;
    q.proposals = &proposals;
    q.gt_boxes = &gt_boxes;
    queries.push_back(q);
  }
};

}  // namespace

TEST(ProposalForward, ZeroNetworkGivesHalfConfidenceZeroOffsets) {
  Rng rng(1);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 16, 6, rng);
  zero_params(p);
  const Proposal prop = make_proposal({10, 10, 40, 40}, 0.5);
  const auto [confidence, offsets] = score_proposal(p, prop, 3);
  EXPECT_DOUBLE_EQ(confidence, 0.5);
  for (double t : offsets) EXPECT_DOUBLE_EQ(t, 0.0);
}

TEST(ProposalForward, HeadWidthIsFive) {
  Rng rng(2);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 16, 6, rng);
  EXPECT_EQ(p.head.out_dim(), 5u);
  const Proposal prop = make_proposal({10, 10, 40, 40}, 0.5);
  ProposalForward f = proposal_forward(p, assemble_proposal_inputs(p, {&prop}, 0));
  EXPECT_EQ(f.out.shape, (std::vector<std::size_t>{1, 5}));
}

TEST(ProposalForward, DeterministicAndPhraseSensitive) {
  Rng rng(3);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 16, 6, rng);
  const Proposal prop = make_proposal({10, 10, 40, 40}, 0.5);
  const auto a = score_proposal(p, prop, 1);
  const auto b = score_proposal(p, prop, 1);
  EXPECT_DOUBLE_EQ(a.first, b.first);
  const auto c = score_proposal(p, prop, 2);
  EXPECT_NE(a.first, c.first);
}

TEST(ProposalForward, GradientCheckThroughFullModule) {
  Rng rng(4);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 8, 4, rng);
  const std::vector<Proposal> props{make_proposal({10, 10, 40, 40}, 0.7),
                                    make_proposal({30, 20, 80, 66}, 0.2)};
  const int category = 1;
  Tensor proj({2, 5});
  init_uniform(proj, 1.0, rng);

  const auto loss = [&]() {
    std::vector<const Proposal*> refs{&props[0], &props[1]};
    ProposalForward f = proposal_forward(p, assemble_proposal_inputs(p, refs, category));
    double s = 0.0;
    for (std::size_t i = 0; i < f.out.size(); ++i) s += f.out.data[i] * proj.data[i];
    return s;
  };
  std::vector<const Proposal*> refs{&props[0], &props[1]};
  ProposalForward f = proposal_forward(p, assemble_proposal_inputs(p, refs, category));
  const std::vector<Tensor> grads = proposal_backward(p, f, proj, category);
  std::vector<const Tensor*> grad_ptrs;
  for (const Tensor& g : grads) grad_ptrs.push_back(&g);
  const double err = finite_diff_check(loss, p.parameters(), grad_ptrs, 1e-5, 48);
  EXPECT_LT(err, 1e-4);
}

TEST(AssignLabels, IdenticalAndDisjointAndBoundary) {
  const std::vector<Box> gts{{0, 0, 10, 10}};
  const std::vector<Box> props{
      {0, 0, 10, 10},    // identical -> positive
      {50, 50, 60, 60},  // disjoint -> negative
      {0, 0, 10, 5},     // IoU exactly 0.5 -> positive at tau=0.5
  };
  EXPECT_DOUBLE_EQ(box_iou(props[2], gts[0]), 0.5);
  const LabelAssignment a = assign_labels(props, gts, 0.5);
  EXPECT_EQ(a.labels[0], 1);
  EXPECT_EQ(a.labels[1], 0);
  EXPECT_EQ(a.labels[2], 1);
  EXPECT_EQ(a.matched_gt[0], 0);
  EXPECT_EQ(a.matched_gt[1], -1);
}

TEST(AssignLabels, ArgmaxMatchingWithTieToLowestIndex) {
  const std::vector<Box> gts{{0, 0, 10, 10}, {0, 0, 10, 10}, {20, 0, 30, 10}};
  const std::vector<Box> props{{0, 0, 10, 10}, {20, 0, 30, 10}};
  const LabelAssignment a = assign_labels(props, gts, 0.5);
  EXPECT_EQ(a.matched_gt[0], 0);  // ties with gt 1, lowest index wins
  EXPECT_EQ(a.matched_gt[1], 2);
}

TEST(AssignLabels, PermutationEquivariantAndGtOrderInvariant) {
  Rng rng(5);
  std::vector<Box> props, gts;
  for (int i = 0; i < 12; ++i) {
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    b.x_max = b.x_min + rng.uniform(4, 30);
    b.y_max = b.y_min + rng.uniform(4, 30);
    props.push_back(b);
  }
  gts = {props[0], props[5]};
  const LabelAssignment base = assign_labels(props, gts, 0.5);
  std::vector<Box> reversed_props(props.rbegin(), props.rend());
  const LabelAssignment rev = assign_labels(reversed_props, gts, 0.5);
  for (std::size_t i = 0; i < props.size(); ++i) {
    EXPECT_EQ(base.labels[i], rev.labels[props.size() - 1 - i]);
  }
  const std::vector<Box> gts_swapped{gts[1], gts[0]};
  const LabelAssignment swapped = assign_labels(props, gts_swapped, 0.5);
  EXPECT_EQ(base.labels, swapped.labels);
}

TEST(AssignLabels, EmptyGroundTruthThrows) {
  EXPECT_THROW(assign_labels({{0, 0, 1, 1}}, {}, 0.5), std::invalid_argument);
}

TEST(RankAndSelect, AllSurvivorsSortedWhenKLarge) {
  Rng rng(6);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 8, 4, rng);
  std::vector<Proposal> props{make_proposal({0, 0, 10, 10}, 0.1),
                              make_proposal({30, 0, 40, 10}, 0.9),
                              make_proposal({60, 0, 70, 10}, 0.4)};
  const auto sel = rank_and_select(p, props, 0, 10, 0.5, 96, 96);
  ASSERT_EQ(sel.size(), 3u);
  EXPECT_GE(sel[0].confidence, sel[1].confidence);
  EXPECT_GE(sel[1].confidence, sel[2].confidence);
}

TEST(RankAndSelect, NmsDropsDuplicateBox) {
  Rng rng(7);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 8, 4, rng);
  std::vector<Proposal> props{make_proposal({10, 10, 30, 30}, 0.5),
                              make_proposal({10, 10, 30, 30}, 0.5),
                              make_proposal({60, 60, 80, 80}, 0.2)};
  const auto sel = rank_and_select(p, props, 0, 10, 0.5, 96, 96);
  EXPECT_EQ(sel.size(), 2u);
}

TEST(RankAndSelect, SurvivorsRespectNmsBoundAndRefinement) {
  Rng rng(8);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 8, 4, rng);
  std::vector<Proposal> props;
  for (int i = 0; i < 20; ++i) {
    Box b{rng.uniform(0, 60), rng.uniform(0, 60), 0, 0};
    b.x_max = b.x_min + rng.uniform(5, 36);
    b.y_max = b.y_min + rng.uniform(5, 36);
    props.push_back(make_proposal(b, rng.uniform()));
  }
  const auto sel = rank_and_select(p, props, 2, 5, 0.5, 96, 96);
  ASSERT_LE(sel.size(), 5u);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    for (std::size_t j = i + 1; j < sel.size(); ++j) {
      EXPECT_LE(box_iou(props[sel[i].proposal_index].box, props[sel[j].proposal_index].box), 0.5);
    }
    const Box expected =
        decode_offsets_clipped(props[sel[i].proposal_index].box, sel[i].offsets, 96, 96);
    EXPECT_DOUBLE_EQ(sel[i].refined_box.x_min, expected.x_min);
    EXPECT_DOUBLE_EQ(sel[i].refined_box.x_max, expected.x_max);
  }
}

TEST(Train, ClassificationLossTrendsDownAcrossSeeds) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyTask task(0.08, 100 + seed);
    Rng init_rng(200 + seed);
    ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 16, 5, init_rng);
    TrainConfig cfg;
    cfg.max_iterations = 100;
    Rng train_rng(300 + seed);
    const ProposalTrainResult r = train_proposal_module(p, task.queries, cfg, train_rng);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
      head += r.cls_curve[static_cast<std::size_t>(i)];
      tail += r.cls_curve[r.cls_curve.size() - 1 - static_cast<std::size_t>(i)];
    }
    improved += tail < head;
  }
  EXPECT_GE(improved, 9);
}

TEST(Train, RegressionConvergesOnZeroJitterPositives) {
  TinyTask task(0.0, 55);
  Rng init_rng(56);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 16, 5, init_rng);
  TrainConfig cfg;
  cfg.max_iterations = 4000;
  Rng train_rng(57);
  const ProposalTrainResult r = train_proposal_module(p, task.queries, cfg, train_rng);
  double tail = 0.0;
  for (int i = 0; i < 50; ++i) tail += r.reg_curve[r.reg_curve.size() - 1 - i];
  EXPECT_LT(tail / 50.0, 1e-3);
}

TEST(Train, NoPositivesAnywhereAborts) {
  std::vector<Proposal> props{make_proposal({0, 0, 8, 8}, 0.1)};
  std::vector<Box> gts{{60, 60, 90, 90}};
  ProposalTrainQuery q;
  q.category = 0;
  q.proposals = &props;
  q.gt_boxes = &gts;
  Rng init_rng(58);
  ProposalModuleParams p = ProposalModuleParams::init(kMapChannels, 8, 4, init_rng);
  TrainConfig cfg;
  cfg.max_iterations = 10;
  Rng train_rng(59);
  EXPECT_THROW(train_proposal_module(p, {q}, cfg, train_rng), std::runtime_error);
}

TEST(Train, ReproducibleCurvesAndDistinctModules) {
  TinyTask task(0.08, 77);
  TrainConfig cfg;
  cfg.max_iterations = 60;

  Rng init_a(400), init_b(400);
  ProposalModuleParams pa = ProposalModuleParams::init(kMapChannels, 16, 5, init_a);
  ProposalModuleParams pb = ProposalModuleParams::init(kMapChannels, 16, 5, init_b);
  Rng train_a(401), train_b(401);
  const ProposalTrainResult ra = train_proposal_module(pa, task.queries, cfg, train_a);
  const ProposalTrainResult rb = train_proposal_module(pb, task.queries, cfg, train_b);
  EXPECT_EQ(ra.cls_curve, rb.cls_curve);
  EXPECT_EQ(pa.head.weights.data, pb.head.weights.data);

  // A module initialized from a different stream ends up with different
  // parameters (subject/object modules never share weights).
  Rng init_c(402);
  ProposalModuleParams pc = ProposalModuleParams::init(kMapChannels, 16, 5, init_c);
  Rng train_c(403);
  train_proposal_module(pc, task.queries, cfg, train_c);
  EXPECT_NE(pa.head.weights.data, pc.head.weights.data);
}
