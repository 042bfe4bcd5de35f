#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/features.hpp"
#include "cparr/predicate_model.hpp"
#include "cparr/proposal_model.hpp"
#include "cparr/scene.hpp"

namespace cparr {

enum class InferenceMode { kFull = 0, kCp = 1, kPa = 2 };

inline const char* inference_mode_name(InferenceMode m) {
  switch (m) {
    case InferenceMode::kFull: return "full";
    case InferenceMode::kCp: return "cp";
    case InferenceMode::kPa: return "pa";
  }
  return "full";
}

inline InferenceMode inference_mode_from_name(const std::string& s) {
  if (s == "full") return InferenceMode::kFull;
  if (s == "cp") return InferenceMode::kCp;
  if (s == "pa") return InferenceMode::kPa;
  throw std::invalid_argument("unknown inference mode: " + s);
}

struct InferenceConfig {
  int k_sub = 5;
  int k_obj = 5;
  double tau_pred = 0.5;
  double nms_threshold = 0.5;
  // Exponent applied to the predicate confidence inside the product; 1.0
  // gives the plain probability product.
  double predicate_weight = 1.0;
  InferenceMode mode = InferenceMode::kFull;

  void validate() const {
    if (k_sub < 1 || k_obj < 1) throw std::invalid_argument("InferenceConfig: K must be >= 1");
    if (tau_pred < 0.0 || tau_pred > 1.0) {
      throw std::invalid_argument("InferenceConfig: tau_pred in [0,1]");
    }
  }
};

// c_s * c_o * p^weight when the predicate confidence reaches tau_pred
// (boundary inclusive); the predicate term is dropped below the threshold.
inline double combined_score(double c_s, double c_o, double p, double tau_pred,
                             double weight = 1.0) {
  for (double v : {c_s, c_o, p, tau_pred}) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("combined_score: inputs must lie in [0,1]");
    }
  }
  if (p >= tau_pred) return c_s * c_o * std::pow(p, weight);
  return c_s * c_o;
}

struct PairPrediction {
  ScoredProposal subject;
  ScoredProposal object;
  double predicate_confidence = std::numeric_limits<double>::quiet_NaN();
  double combined = 0.0;
};

// Scores and ranks the K_sub x K_obj pair grid for one mode.
//   full: combined_score ranking;
//   cp:   category confidences only (the predicate net is never consulted);
//   pa:   predicate confidence alone.
// Ties break on (subject proposal index, object proposal index).
inline std::vector<PairPrediction> rank_pairs(
    const std::vector<ScoredProposal>& subjects, const std::vector<ScoredProposal>& objects,
    const std::vector<std::vector<double>>& predicate_scores, const InferenceConfig& config) {
  if (subjects.empty() || objects.empty()) {
    throw std::runtime_error("rank_pairs: empty candidate selection");
  }
  std::vector<PairPrediction> pairs;
  pairs.reserve(subjects.size() * objects.size());
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    for (std::size_t oi = 0; oi < objects.size(); ++oi) {
      PairPrediction pp;
      pp.subject = subjects[si];
      pp.object = objects[oi];
      switch (config.mode) {
        case InferenceMode::kFull: {
          pp.predicate_confidence = predicate_scores.at(si).at(oi);
          pp.combined = combined_score(pp.subject.confidence, pp.object.confidence,
                                       pp.predicate_confidence, config.tau_pred,
                                       config.predicate_weight);
          break;
        }
        case InferenceMode::kCp: {
          pp.combined = pp.subject.confidence * pp.object.confidence;
          break;
        }
        case InferenceMode::kPa: {
          pp.predicate_confidence = predicate_scores.at(si).at(oi);
          pp.combined = pp.predicate_confidence;
          break;
        }
      }
      pairs.push_back(pp);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const PairPrediction& a, const PairPrediction& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    if (a.subject.proposal_index != b.subject.proposal_index) {
      return a.subject.proposal_index < b.subject.proposal_index;
    }
    return a.object.proposal_index < b.object.proposal_index;
  });
  return pairs;
}

// Full per-query inference: top-K selection per role, predicate scoring of
// the pair grid on the refined boxes (unless mode cp), then pair ranking.
inline std::vector<PairPrediction> infer(const Query& query,
                                         const std::vector<Proposal>& proposals,
                                         const ScenePlanes& planes,
                                         const ProposalModuleParams& m_sub,
                                         const ProposalModuleParams& m_obj,
                                         const PredicateNetParams& m_pred,
                                         const FeatureConfig& features,
                                         const InferenceConfig& config) {
  config.validate();
  const double w = planes.width(), h = planes.height();
  const auto subjects = rank_and_select(m_sub, proposals, query.subject_category, config.k_sub,
                                        config.nms_threshold, w, h);
  const auto objects = rank_and_select(m_obj, proposals, query.object_category, config.k_obj,
                                       config.nms_threshold, w, h);
  if (subjects.empty() || objects.empty()) {
    throw std::runtime_error("infer: empty candidate selection");
  }

  std::vector<std::vector<double>> predicate_scores;
  if (config.mode != InferenceMode::kCp) {
    std::vector<Tensor> subject_maps(subjects.size()), object_maps(objects.size());
    Tensor vec;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      planes.featurize(subjects[i].refined_box, features.grid, subject_maps[i], vec);
    }
    for (std::size_t i = 0; i < objects.size(); ++i) {
      planes.featurize(objects[i].refined_box, features.grid, object_maps[i], vec);
    }
    predicate_scores.assign(subjects.size(), std::vector<double>(objects.size(), 0.0));
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      for (std::size_t oi = 0; oi < objects.size(); ++oi) {
        PredicateForward f =
            predicate_forward(m_pred, stack_pair(subject_maps[si], object_maps[oi]));
        predicate_scores[si][oi] =
            f.confidences.data[static_cast<std::size_t>(query.predicate_id)];
      }
    }
  }
  return rank_pairs(subjects, objects, predicate_scores, config);
}

// First k distinct boxes per role in rank order (deduplicated by proposal
// index), for role-separate recall evaluation.
inline std::pair<std::vector<Box>, std::vector<Box>> predict_top_boxes(
    const std::vector<PairPrediction>& ranked, int k) {
  if (ranked.empty()) throw std::invalid_argument("predict_top_boxes: empty ranking");
  std::vector<Box> subjects, objects;
  std::vector<std::size_t> seen_subjects, seen_objects;
  for (const PairPrediction& pp : ranked) {
    if (static_cast<int>(subjects.size()) < k &&
        std::find(seen_subjects.begin(), seen_subjects.end(), pp.subject.proposal_index) ==
            seen_subjects.end()) {
      seen_subjects.push_back(pp.subject.proposal_index);
      subjects.push_back(pp.subject.refined_box);
    }
    if (static_cast<int>(objects.size()) < k &&
        std::find(seen_objects.begin(), seen_objects.end(), pp.object.proposal_index) ==
            seen_objects.end()) {
      seen_objects.push_back(pp.object.proposal_index);
      objects.push_back(pp.object.refined_box);
    }
    if (static_cast<int>(subjects.size()) >= k && static_cast<int>(objects.size()) >= k) break;
  }
  return {subjects, objects};
}

}  // namespace cparr
