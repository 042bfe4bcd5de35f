#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/features.hpp"
#include "cparr/geometry.hpp"
#include "cparr/nn.hpp"
#include "cparr/rng.hpp"
#include "cparr/tensor.hpp"

namespace cparr {

inline constexpr std::size_t kMultimodalDim = 128;
inline constexpr std::size_t kProposalHeadDim = 5;  // confidence logit || 4 offsets

// Five-layer MLP scoring proposals for one entity category: a multimodal
// projection of (visual || spatial || phrase) followed by three hidden layers
// and a 5-D head. Owns its phrase embedding table; subject and object modules
// are two independent instances.
struct ProposalModuleParams {
  EmbeddingTable embed;
  DenseParams multimodal;
  DenseParams hidden1, hidden2, hidden3;
  DenseParams head;

  std::size_t visual_dim() const {
    return multimodal.in_dim() - 5 - embed.dim();
  }

  static ProposalModuleParams init(std::size_t visual_dim, std::size_t embed_dim,
                                   std::size_t vocabulary, Rng& rng) {
    ProposalModuleParams p;
    p.embed = EmbeddingTable::init(vocabulary, embed_dim, rng);
    p.multimodal = DenseParams::init(visual_dim + 5 + embed_dim, kMultimodalDim, rng);
    p.hidden1 = DenseParams::init(kMultimodalDim, kMultimodalDim, rng);
    p.hidden2 = DenseParams::init(kMultimodalDim, kMultimodalDim, rng);
    p.hidden3 = DenseParams::init(kMultimodalDim, kMultimodalDim, rng);
    p.head = DenseParams::init(kMultimodalDim, kProposalHeadDim, rng);
    return p;
  }

  std::vector<Tensor*> parameters() {
    return {&embed.table,      &multimodal.weights, &multimodal.bias, &hidden1.weights,
            &hidden1.bias,     &hidden2.weights,    &hidden2.bias,    &hidden3.weights,
            &hidden3.bias,     &head.weights,       &head.bias};
  }

  std::vector<std::string> parameter_names(const std::string& prefix) const {
    return {prefix + "embed",          prefix + "multimodal.weight", prefix + "multimodal.bias",
            prefix + "hidden1.weight", prefix + "hidden1.bias",      prefix + "hidden2.weight",
            prefix + "hidden2.bias",   prefix + "hidden3.weight",    prefix + "hidden3.bias",
            prefix + "head.weight",    prefix + "head.bias"};
  }
};

// Forward cache for backprop through the MLP.
struct ProposalForward {
  Tensor input;                 // {n, visual+5+embed}
  Tensor z1, a1, z2, a2, z3, a3, z4, a4;
  Tensor out;                   // {n, 5}
};

// Rows are [feature_vector || spatial_feature || phrase embedding].
inline Tensor assemble_proposal_inputs(const ProposalModuleParams& p,
                                       const std::vector<const Proposal*>& proposals,
                                       int category_id) {
  const std::size_t dv = p.visual_dim();
  const std::size_t e = p.embed.dim();
  const double* phrase = p.embed.row(category_id);
  Tensor x({proposals.size(), dv + 5 + e});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Proposal& pr = *proposals[i];
    if (pr.feature_vector.size() != dv) {
      throw std::invalid_argument("proposal feature dim mismatch");
    }
    double* row = &x.data[i * x.shape[1]];
    std::copy(pr.feature_vector.data.begin(), pr.feature_vector.data.end(), row);
    std::copy(pr.spatial_feature.begin(), pr.spatial_feature.end(), row + dv);
    std::copy(phrase, phrase + e, row + dv + 5);
  }
  return x;
}

inline ProposalForward proposal_forward(const ProposalModuleParams& p, Tensor input) {
  ProposalForward f;
  f.input = std::move(input);
  f.z1 = dense_apply(p.multimodal, f.input);
  f.a1 = relu(f.z1);
  f.z2 = dense_apply(p.hidden1, f.a1);
  f.a2 = relu(f.z2);
  f.z3 = dense_apply(p.hidden2, f.a2);
  f.a3 = relu(f.z3);
  f.z4 = dense_apply(p.hidden3, f.a3);
  f.a4 = relu(f.z4);
  f.out = dense_apply(p.head, f.a4);
  return f;
}

// Gradients in parameters() order. The phrase embedding row receives the sum
// of the input-gradient rows over its slice.
inline std::vector<Tensor> proposal_backward(const ProposalModuleParams& p,
                                             const ProposalForward& f, const Tensor& d_out,
                                             int category_id) {
  DenseGrads g5 = dense_grad(p.head, f.a4, d_out);
  Tensor d4 = relu_grad(f.z4, g5.d_input);
  DenseGrads g4 = dense_grad(p.hidden3, f.a3, d4);
  Tensor d3 = relu_grad(f.z3, g4.d_input);
  DenseGrads g3 = dense_grad(p.hidden2, f.a2, d3);
  Tensor d2 = relu_grad(f.z2, g3.d_input);
  DenseGrads g2 = dense_grad(p.hidden1, f.a1, d2);
  Tensor d1 = relu_grad(f.z1, g2.d_input);
  DenseGrads g1 = dense_grad(p.multimodal, f.input, d1);

  Tensor d_embed(p.embed.table.shape);
  const std::size_t e = p.embed.dim();
  const std::size_t in_dim = f.input.shape[1];
  double* row = &d_embed.data[static_cast<std::size_t>(category_id) * e];
  for (std::size_t i = 0; i < f.input.shape[0]; ++i) {
    const double* din = &g1.d_input.data[i * in_dim + (in_dim - e)];
    for (std::size_t j = 0; j < e; ++j) row[j] += din[j];
  }

  std::vector<Tensor> grads;
  grads.reserve(11);
  grads.push_back(std::move(d_embed));
  grads.push_back(std::move(g1.d_weights));
  grads.push_back(std::move(g1.d_bias));
  grads.push_back(std::move(g2.d_weights));
  grads.push_back(std::move(g2.d_bias));
  grads.push_back(std::move(g3.d_weights));
  grads.push_back(std::move(g3.d_bias));
  grads.push_back(std::move(g4.d_weights));
  grads.push_back(std::move(g4.d_bias));
  grads.push_back(std::move(g5.d_weights));
  grads.push_back(std::move(g5.d_bias));
  return grads;
}

// Single-proposal convenience: returns (confidence, offsets).
inline std::pair<double, std::array<double, 4>> score_proposal(const ProposalModuleParams& p,
                                                               const Proposal& proposal,
                                                               int category_id) {
  ProposalForward f =
      proposal_forward(p, assemble_proposal_inputs(p, {&proposal}, category_id));
  std::array<double, 4> offsets{f.out.at(0, 1), f.out.at(0, 2), f.out.at(0, 3), f.out.at(0, 4)};
  return {sigmoid_scalar(f.out.at(0, 0)), offsets};
}

// ---------------------------------------------------------------------------
// Label assignment
// ---------------------------------------------------------------------------

struct LabelAssignment {
  std::vector<std::uint8_t> labels;  // 1 = positive
  std::vector<int> matched_gt;       // argmax gt index for positives, -1 otherwise
};

// Positive iff max IoU against the ground-truth set reaches tau (inclusive);
// ties on the argmax go to the lowest ground-truth index.
inline LabelAssignment assign_labels(const std::vector<Box>& proposals,
                                     const std::vector<Box>& gt_boxes, double tau) {
  if (gt_boxes.empty()) throw std::invalid_argument("assign_labels: empty ground truth");
  LabelAssignment out;
  out.labels.assign(proposals.size(), 0);
  out.matched_gt.assign(proposals.size(), -1);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double iou = box_iou(proposals[i], gt_boxes[g]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= tau) {
      out.labels[i] = 1;
      out.matched_gt[i] = best_gt;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranked selection
// ---------------------------------------------------------------------------

struct ScoredProposal {
  std::size_t proposal_index = 0;
  double confidence = 0.0;
  std::array<double, 4> offsets{};
  Box refined_box;
};

// Scores every proposal, applies NMS on the raw boxes in confidence order,
// keeps the top-K survivors and regresses their boxes.
inline std::vector<ScoredProposal> rank_and_select(const ProposalModuleParams& p,
                                                   const std::vector<Proposal>& proposals,
                                                   int category_id, int k, double nms_threshold,
                                                   double image_w, double image_h) {
  if (k < 1) throw std::invalid_argument("rank_and_select: K must be >= 1");
  std::vector<const Proposal*> refs;
  refs.reserve(proposals.size());
  for (const Proposal& pr : proposals) refs.push_back(&pr);
  ProposalForward f = proposal_forward(p, assemble_proposal_inputs(p, refs, category_id));

  std::vector<Box> boxes(proposals.size());
  std::vector<double> confidences(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    boxes[i] = proposals[i].box;
    confidences[i] = sigmoid_scalar(f.out.at(i, 0));
  }
  const std::vector<std::size_t> kept = greedy_nms(boxes, confidences, nms_threshold);

  std::vector<ScoredProposal> out;
  for (std::size_t r = 0; r < kept.size() && r < static_cast<std::size_t>(k); ++r) {
    const std::size_t i = kept[r];
    ScoredProposal sp;
    sp.proposal_index = i;
    sp.confidence = confidences[i];
    sp.offsets = {f.out.at(i, 1), f.out.at(i, 2), f.out.at(i, 3), f.out.at(i, 4)};
    sp.refined_box = decode_offsets_clipped(proposals[i].box, sp.offsets, image_w, image_h);
    out.push_back(sp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double pos_iou_threshold = 0.5;
  int max_iterations = 2000;
  int batch_size = 32;
  double learning_rate = 1e-4;
};

// One training query: the scene's proposals plus the ground-truth boxes for
// the module's role (subject or object) under the queried category.
struct ProposalTrainQuery {
  int category = 0;
  const std::vector<Proposal>* proposals = nullptr;
  const std::vector<Box>* gt_boxes = nullptr;
};

struct ProposalTrainResult {
  std::vector<double> cls_curve;
  std::vector<double> reg_curve;
};

inline constexpr int kNegativesPerPositive = 3;

// Per-iteration batch: one query's positives (capped at a quarter of the
// batch) plus up to 3x as many sampled negatives. Classification loss covers
// the whole batch, the regression loss only positive rows.
inline ProposalTrainResult train_proposal_module(ProposalModuleParams& params,
                                                 const std::vector<ProposalTrainQuery>& queries,
                                                 const TrainConfig& config, Rng& rng) {
  if (queries.empty()) throw std::runtime_error("train_proposal_module: no training queries");

  struct QueryLabels {
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::vector<int> matched_gt;
  };
  std::vector<QueryLabels> labels(queries.size());
  std::size_t total_positives = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<Box> boxes;
    boxes.reserve(queries[q].proposals->size());
    for (const Proposal& pr : *queries[q].proposals) boxes.push_back(pr.box);
    LabelAssignment asg = assign_labels(boxes, *queries[q].gt_boxes, config.pos_iou_threshold);
    labels[q].matched_gt = asg.matched_gt;
    for (std::size_t i = 0; i < asg.labels.size(); ++i) {
      (asg.labels[i] ? labels[q].positives : labels[q].negatives).push_back(i);
    }
    total_positives += labels[q].positives.size();
  }
  if (total_positives == 0) {
    throw std::runtime_error("train_proposal_module: dataset has no positive proposals");
  }

  std::vector<Tensor*> param_list = params.parameters();
  AdamState adam = AdamState::create(param_list, config.learning_rate);
  ProposalTrainResult result;
  result.cls_curve.reserve(static_cast<std::size_t>(config.max_iterations));
  result.reg_curve.reserve(static_cast<std::size_t>(config.max_iterations));

  const std::size_t pos_cap = std::max<std::size_t>(1, static_cast<std::size_t>(config.batch_size) / 4);
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const std::size_t q = rng.index(queries.size());
    const ProposalTrainQuery& query = queries[q];
    const QueryLabels& ql = labels[q];
    if (ql.positives.empty()) {
      // Queries can lose all positives only under extreme jitter; skip them.
      result.cls_curve.push_back(result.cls_curve.empty() ? 0.0 : result.cls_curve.back());
      result.reg_curve.push_back(result.reg_curve.empty() ? 0.0 : result.reg_curve.back());
      continue;
    }

    std::vector<std::size_t> batch_pos = ql.positives;
    if (batch_pos.size() > pos_cap) {
      rng.shuffle(batch_pos);
      batch_pos.resize(pos_cap);
    }
    const std::size_t neg_want = std::min(
        {batch_pos.size() * kNegativesPerPositive, ql.negatives.size(),
         static_cast<std::size_t>(config.batch_size) - batch_pos.size()});
    std::vector<std::size_t> batch_neg;
    batch_neg.reserve(neg_want);
    for (std::size_t i = 0; i < neg_want; ++i) {
      batch_neg.push_back(ql.negatives[rng.index(ql.negatives.size())]);
    }

    std::vector<const Proposal*> batch;
    Tensor cls_targets({batch_pos.size() + batch_neg.size()});
    for (std::size_t i = 0; i < batch_pos.size(); ++i) {
      batch.push_back(&(*query.proposals)[batch_pos[i]]);
      cls_targets.data[i] = 1.0;
    }
    for (std::size_t i = 0; i < batch_neg.size(); ++i) {
      batch.push_back(&(*query.proposals)[batch_neg[i]]);
    }

    ProposalForward f =
        proposal_forward(params, assemble_proposal_inputs(params, batch, query.category));

    Tensor logits({batch.size()});
    for (std::size_t i = 0; i < batch.size(); ++i) logits.data[i] = f.out.at(i, 0);
    LossResult cls = sigmoid_ce_loss(logits, cls_targets);

    Tensor reg_pred({batch_pos.size(), 4});
    Tensor reg_target({batch_pos.size(), 4});
    for (std::size_t i = 0; i < batch_pos.size(); ++i) {
      const Proposal& pr = (*query.proposals)[batch_pos[i]];
      const Box& gt = (*query.gt_boxes)[static_cast<std::size_t>(ql.matched_gt[batch_pos[i]])];
      const std::array<double, 4> t = encode_offsets(pr.box, gt);
      for (std::size_t j = 0; j < 4; ++j) {
        reg_pred.at(i, j) = f.out.at(i, j + 1);
        reg_target.at(i, j) = t[j];
      }
    }
    LossResult reg = smooth_l1_loss(reg_pred, reg_target);

    Tensor d_out({batch.size(), kProposalHeadDim});
    for (std::size_t i = 0; i < batch.size(); ++i) d_out.at(i, 0) = cls.grad.data[i];
    for (std::size_t i = 0; i < batch_pos.size(); ++i) {
      for (std::size_t j = 0; j < 4; ++j) d_out.at(i, j + 1) = reg.grad.at(i, j);
    }

    std::vector<Tensor> grads = proposal_backward(params, f, d_out, query.category);
    adam_step(adam, param_list, grads);
    result.cls_curve.push_back(cls.value);
    result.reg_curve.push_back(reg.value);
  }
  return result;
}

}  // namespace cparr
