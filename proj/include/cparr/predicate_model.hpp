#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/features.hpp"
#include "cparr/nn.hpp"
#include "cparr/rng.hpp"
#include "cparr/tensor.hpp"

namespace cparr {

// Depth-wise concatenation of the subject and object feature maps; subject
// channels come first and the order is load-bearing.
inline Tensor stack_pair(const Tensor& subject_map, const Tensor& object_map) {
  if (subject_map.shape.size() != 3 || !subject_map.same_shape(object_map)) {
    throw std::invalid_argument("stack_pair: maps must share W x H x D shape");
  }
  const std::size_t h = subject_map.shape[0], w = subject_map.shape[1], d = subject_map.shape[2];
  Tensor out({h, w, 2 * d});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = (y * w + x) * d;
      const std::size_t dst = (y * w + x) * 2 * d;
      for (std::size_t c = 0; c < d; ++c) {
        out.data[dst + c] = subject_map.data[src + c];
        out.data[dst + d + c] = object_map.data[src + c];
      }
    }
  }
  return out;
}

// Conv stack over the stacked pair tensor: three 3x3 layers, a 1x1 projection
// to P+1 classes and a spatial global average; each class gets an independent
// sigmoid (background is the last index).
struct PredicateNetParams {
  ConvParams conv1, conv2, conv3;  // 3x3
  ConvParams conv4;                // 1x1 -> P+1

  std::size_t num_classes() const { return conv4.out_ch(); }
  std::size_t map_channels() const { return conv1.in_ch() / 2; }

  static PredicateNetParams init(std::size_t map_channels, std::size_t width,
                                 std::size_t num_predicates, Rng& rng) {
    PredicateNetParams p;
    p.conv1 = ConvParams::init(3, 2 * map_channels, width, rng);
    p.conv2 = ConvParams::init(3, width, width, rng);
    p.conv3 = ConvParams::init(3, width, width, rng);
    p.conv4 = ConvParams::init(1, width, num_predicates + 1, rng);
    return p;
  }

  std::vector<Tensor*> parameters() {
    return {&conv1.kernels, &conv1.bias, &conv2.kernels, &conv2.bias,
            &conv3.kernels, &conv3.bias, &conv4.kernels, &conv4.bias};
  }

  std::vector<std::string> parameter_names(const std::string& prefix) const {
    return {prefix + "conv1.kernels", prefix + "conv1.bias", prefix + "conv2.kernels",
            prefix + "conv2.bias",    prefix + "conv3.kernels", prefix + "conv3.bias",
            prefix + "conv4.kernels", prefix + "conv4.bias"};
  }
};

struct PredicateForward {
  Tensor input;  // {H, W, 2D}
  Tensor z1, a1, z2, a2, z3, a3, z4;
  Tensor logits;       // {P+1}
  Tensor confidences;  // sigmoid(logits)
};

inline PredicateForward predicate_forward(const PredicateNetParams& p, Tensor pair_tensor) {
  if (pair_tensor.shape.size() != 3 || pair_tensor.shape[2] != p.conv1.in_ch()) {
    throw std::invalid_argument("predicate_forward: pair tensor channel mismatch");
  }
  PredicateForward f;
  f.input = std::move(pair_tensor);
  f.z1 = conv2d_apply(p.conv1, f.input);
  f.a1 = relu(f.z1);
  f.z2 = conv2d_apply(p.conv2, f.a1);
  f.a2 = relu(f.z2);
  f.z3 = conv2d_apply(p.conv3, f.a2);
  f.a3 = relu(f.z3);
  f.z4 = conv2d_apply(p.conv4, f.a3);
  const std::size_t h = f.z4.shape[0], w = f.z4.shape[1], classes = f.z4.shape[2];
  f.logits = Tensor({classes});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < classes; ++c) f.logits.data[c] += f.z4.at(y, x, c);
    }
  }
  const double inv = 1.0 / static_cast<double>(h * w);
  for (double& v : f.logits.data) v *= inv;
  f.confidences = sigmoid(f.logits);
  return f;
}

// Gradients in parameters() order given d loss / d logits.
inline std::vector<Tensor> predicate_backward(const PredicateNetParams& p,
                                              const PredicateForward& f, const Tensor& d_logits) {
  const std::size_t h = f.z4.shape[0], w = f.z4.shape[1], classes = f.z4.shape[2];
  Tensor d_z4({h, w, classes});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < classes; ++c) d_z4.at(y, x, c) = d_logits.data[c] * inv;
    }
  }
  ConvGrads g4 = conv2d_grad(p.conv4, f.a3, d_z4);
  Tensor d3 = relu_grad(f.z3, g4.d_input);
  ConvGrads g3 = conv2d_grad(p.conv3, f.a2, d3);
  Tensor d2 = relu_grad(f.z2, g3.d_input);
  ConvGrads g2 = conv2d_grad(p.conv2, f.a1, d2);
  Tensor d1 = relu_grad(f.z1, g2.d_input);
  ConvGrads g1 = conv2d_grad(p.conv1, f.input, d1);

  std::vector<Tensor> grads;
  grads.reserve(8);
  grads.push_back(std::move(g1.d_kernels));
  grads.push_back(std::move(g1.d_bias));
  grads.push_back(std::move(g2.d_kernels));
  grads.push_back(std::move(g2.d_bias));
  grads.push_back(std::move(g3.d_kernels));
  grads.push_back(std::move(g3.d_bias));
  grads.push_back(std::move(g4.d_kernels));
  grads.push_back(std::move(g4.d_bias));
  return grads;
}

// ---------------------------------------------------------------------------
// Pair samples
// ---------------------------------------------------------------------------

enum class PairProvenance { kPositive = 0, kNegWrongEntity = 1, kNegNoRelation = 2 };

inline const char* pair_provenance_name(PairProvenance p) {
  switch (p) {
    case PairProvenance::kPositive: return "positive";
    case PairProvenance::kNegWrongEntity: return "neg_wrong_entity";
    case PairProvenance::kNegNoRelation: return "neg_no_relation";
  }
  return "positive";
}

struct PairSample {
  Tensor subject_map, object_map;     // {grid, grid, kMapChannels}
  std::vector<std::uint8_t> label;    // P+1 bits; background = last index
  PairProvenance provenance = PairProvenance::kPositive;
  // Per-member vector features for the flat-input model variants.
  Tensor subject_vec, object_vec;     // {kMapChannels}
  std::array<double, 5> subject_spatial{}, object_spatial{};
  int subject_category = 0;
  int object_category = 0;
  int true_predicate = -1;  // queried predicate for positives, -1 for negatives
};

// ---------------------------------------------------------------------------
// Conv-model training
// ---------------------------------------------------------------------------

struct PredicateTrainConfig {
  int max_iterations = 1500;
  int batch_size = 32;
  double learning_rate = 1e-4;
};

inline std::vector<double> train_predicate(PredicateNetParams& params,
                                           const std::vector<PairSample>& samples,
                                           const PredicateTrainConfig& config, Rng& rng) {
  if (samples.empty()) throw std::runtime_error("train_predicate: empty sample set");
  std::vector<Tensor*> param_list = params.parameters();
  AdamState adam = AdamState::create(param_list, config.learning_rate);
  const std::size_t classes = params.num_classes();
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(config.max_iterations));

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), samples.size());
    std::vector<Tensor> grads;
    for (Tensor* t : param_list) grads.push_back(Tensor(t->shape));
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const PairSample& s = samples[rng.index(samples.size())];
      PredicateForward f =
          predicate_forward(params, stack_pair(s.subject_map, s.object_map));
      Tensor targets({classes});
      for (std::size_t c = 0; c < classes; ++c) targets.data[c] = s.label[c];
      LossResult ce = sigmoid_ce_loss(f.logits, targets);
      loss += ce.value / static_cast<double>(batch);
      for (double& g : ce.grad.data) g /= static_cast<double>(batch);
      std::vector<Tensor> sample_grads = predicate_backward(params, f, ce.grad);
      for (std::size_t g = 0; g < grads.size(); ++g) accumulate(grads[g], sample_grads[g]);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("train_predicate: non-finite loss");
    adam_step(adam, param_list, grads);
    curve.push_back(loss);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Flat-vector model variants (feature-input ablation)
// ---------------------------------------------------------------------------

enum class VectorInputMode { kVec = 0, kVecSpatial = 1, kVecPhrase = 2, kVecSpatialPhrase = 3 };

inline const char* vector_input_mode_name(VectorInputMode m) {
  switch (m) {
    case VectorInputMode::kVec: return "vec";
    case VectorInputMode::kVecSpatial: return "vec_spatial";
    case VectorInputMode::kVecPhrase: return "vec_phrase";
    case VectorInputMode::kVecSpatialPhrase: return "vec_spatial_phrase";
  }
  return "vec";
}

inline bool mode_uses_spatial(VectorInputMode m) {
  return m == VectorInputMode::kVecSpatial || m == VectorInputMode::kVecSpatialPhrase;
}
inline bool mode_uses_phrase(VectorInputMode m) {
  return m == VectorInputMode::kVecPhrase || m == VectorInputMode::kVecSpatialPhrase;
}

inline std::size_t vector_input_dim(VectorInputMode mode, std::size_t visual_dim,
                                    std::size_t embed_dim) {
  std::size_t d = 2 * visual_dim;
  if (mode_uses_spatial(mode)) d += 10;
  if (mode_uses_phrase(mode)) d += 2 * embed_dim;
  return d;
}

// MLP head replacing the conv stack: three 128-wide hidden layers, sigmoid
// outputs over P+1 classes. Input is the concatenation of both members'
// feature vectors, optionally their spatial features and phrase embeddings.
struct VectorPredicateParams {
  VectorInputMode mode = VectorInputMode::kVecSpatialPhrase;
  EmbeddingTable embed;
  DenseParams l1, l2, l3, head;

  static VectorPredicateParams init(VectorInputMode mode, std::size_t visual_dim,
                                    std::size_t embed_dim, std::size_t vocabulary,
                                    std::size_t num_predicates, Rng& rng) {
    VectorPredicateParams p;
    p.mode = mode;
    p.embed = EmbeddingTable::init(vocabulary, embed_dim, rng);
    p.l1 = DenseParams::init(vector_input_dim(mode, visual_dim, embed_dim), 128, rng);
    p.l2 = DenseParams::init(128, 128, rng);
    p.l3 = DenseParams::init(128, 128, rng);
    p.head = DenseParams::init(128, num_predicates + 1, rng);
    return p;
  }

  std::size_t visual_dim() const {
    std::size_t d = l1.in_dim();
    if (mode_uses_spatial(mode)) d -= 10;
    if (mode_uses_phrase(mode)) d -= 2 * embed.dim();
    return d / 2;
  }

  std::vector<Tensor*> parameters() {
    return {&embed.table, &l1.weights,   &l1.bias, &l2.weights, &l2.bias,
            &l3.weights,  &l3.bias,      &head.weights, &head.bias};
  }
};

inline Tensor assemble_vector_inputs(const VectorPredicateParams& p,
                                     const std::vector<const PairSample*>& samples) {
  const std::size_t dv = p.visual_dim();
  const std::size_t e = p.embed.dim();
  Tensor x({samples.size(), p.l1.in_dim()});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PairSample& s = *samples[i];
    double* row = &x.data[i * x.shape[1]];
    std::size_t off = 0;
    std::copy(s.subject_vec.data.begin(), s.subject_vec.data.end(), row + off);
    off += dv;
    std::copy(s.object_vec.data.begin(), s.object_vec.data.end(), row + off);
    off += dv;
    if (mode_uses_spatial(p.mode)) {
      std::copy(s.subject_spatial.begin(), s.subject_spatial.end(), row + off);
      off += 5;
      std::copy(s.object_spatial.begin(), s.object_spatial.end(), row + off);
      off += 5;
    }
    if (mode_uses_phrase(p.mode)) {
      const double* es = p.embed.row(s.subject_category);
      std::copy(es, es + e, row + off);
      off += e;
      const double* eo = p.embed.row(s.object_category);
      std::copy(eo, eo + e, row + off);
      off += e;
    }
  }
  return x;
}

struct VectorForward {
  Tensor input;
  Tensor z1, a1, z2, a2, z3, a3;
  Tensor logits;       // {n, P+1}
  Tensor confidences;
};

inline VectorForward vector_variant_forward(const VectorPredicateParams& p, Tensor input) {
  VectorForward f;
  f.input = std::move(input);
  f.z1 = dense_apply(p.l1, f.input);
  f.a1 = relu(f.z1);
  f.z2 = dense_apply(p.l2, f.a1);
  f.a2 = relu(f.z2);
  f.z3 = dense_apply(p.l3, f.a2);
  f.a3 = relu(f.z3);
  f.logits = dense_apply(p.head, f.a3);
  f.confidences = sigmoid(f.logits);
  return f;
}

inline VectorForward vector_variant_forward(const VectorPredicateParams& p,
                                            const PairSample& sample) {
  return vector_variant_forward(p, assemble_vector_inputs(p, {&sample}));
}

inline std::vector<Tensor> vector_variant_backward(const VectorPredicateParams& p,
                                                   const VectorForward& f, const Tensor& d_logits,
                                                   const std::vector<const PairSample*>& samples) {
  DenseGrads g4 = dense_grad(p.head, f.a3, d_logits);
  Tensor d3 = relu_grad(f.z3, g4.d_input);
  DenseGrads g3 = dense_grad(p.l3, f.a2, d3);
  Tensor d2 = relu_grad(f.z2, g3.d_input);
  DenseGrads g2 = dense_grad(p.l2, f.a1, d2);
  Tensor d1 = relu_grad(f.z1, g2.d_input);
  DenseGrads g1 = dense_grad(p.l1, f.input, d1);

  Tensor d_embed(p.embed.table.shape);
  if (mode_uses_phrase(p.mode)) {
    const std::size_t e = p.embed.dim();
    const std::size_t in_dim = f.input.shape[1];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double* din = &g1.d_input.data[i * in_dim + (in_dim - 2 * e)];
      double* rs = &d_embed.data[static_cast<std::size_t>(samples[i]->subject_category) * e];
      double* ro = &d_embed.data[static_cast<std::size_t>(samples[i]->object_category) * e];
      for (std::size_t j = 0; j < e; ++j) {
        rs[j] += din[j];
        ro[j] += din[e + j];
      }
    }
  }

  std::vector<Tensor> grads;
  grads.reserve(9);
  grads.push_back(std::move(d_embed));
  grads.push_back(std::move(g1.d_weights));
  grads.push_back(std::move(g1.d_bias));
  grads.push_back(std::move(g2.d_weights));
  grads.push_back(std::move(g2.d_bias));
  grads.push_back(std::move(g3.d_weights));
  grads.push_back(std::move(g3.d_bias));
  grads.push_back(std::move(g4.d_weights));
  grads.push_back(std::move(g4.d_bias));
  return grads;
}

inline std::vector<double> train_vector_variant(VectorPredicateParams& params,
                                                const std::vector<PairSample>& samples,
                                                const PredicateTrainConfig& config, Rng& rng) {
  if (samples.empty()) throw std::runtime_error("train_vector_variant: empty sample set");
  std::vector<Tensor*> param_list = params.parameters();
  AdamState adam = AdamState::create(param_list, config.learning_rate);
  const std::size_t classes = params.head.out_dim();
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(config.max_iterations));
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), samples.size());
    std::vector<const PairSample*> picked;
    picked.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) picked.push_back(&samples[rng.index(samples.size())]);
    VectorForward f = vector_variant_forward(params, assemble_vector_inputs(params, picked));
    Tensor targets({batch, classes});
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t c = 0; c < classes; ++c) targets.at(i, c) = picked[i]->label[c];
    }
    LossResult ce = sigmoid_ce_loss(f.logits, targets);
    if (!std::isfinite(ce.value)) throw std::runtime_error("train_vector_variant: non-finite loss");
    std::vector<Tensor> grads = vector_variant_backward(params, f, ce.grad, picked);
    adam_step(adam, param_list, grads);
    curve.push_back(ce.value);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Predicate recall
// ---------------------------------------------------------------------------

// True when `true_class` appears among the k highest of the P+1 scores
// (ties resolved toward lower class index).
inline bool class_in_top_k(const Tensor& scores, int true_class, int k) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.data[a] != scores.data[b]) return scores.data[a] > scores.data[b];
    return a < b;
  });
  for (int i = 0; i < k && i < static_cast<int>(order.size()); ++i) {
    if (static_cast<int>(order[static_cast<std::size_t>(i)]) == true_class) return true;
  }
  return false;
}

}  // namespace cparr
