#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cparr/dataset_io.hpp"
#include "cparr/features.hpp"
#include "cparr/predicate_model.hpp"
#include "cparr/proposal_model.hpp"
#include "cparr/scene.hpp"

namespace cparr {

// ---------------------------------------------------------------------------
// Pair labeling against ground truth
// ---------------------------------------------------------------------------

// Relation instances backing one query: the entity pairs that participate in
// the queried (S, P, O) relation, with every predicate those two entities
// exhibit (positives are labeled with the full predicate set of the matched
// pair so repeated queries over one pair stay consistent).
struct QueryRelationInstances {
  struct Instance {
    int subject_entity = 0;
    int object_entity = 0;
    Box subject_box, object_box;
    std::vector<int> predicates;
  };
  std::vector<Instance> instances;
};

inline QueryRelationInstances query_relation_instances(const Scene& scene, const Query& query) {
  QueryRelationInstances out;
  for (const Relation& rel : scene.relations) {
    if (rel.predicate != query.predicate_id) continue;
    const Entity& se = scene.entities[static_cast<std::size_t>(rel.subject)];
    const Entity& oe = scene.entities[static_cast<std::size_t>(rel.object)];
    if (se.category_id != query.subject_category || oe.category_id != query.object_category) {
      continue;
    }
    QueryRelationInstances::Instance inst;
    inst.subject_entity = rel.subject;
    inst.object_entity = rel.object;
    inst.subject_box = se.box;
    inst.object_box = oe.box;
    for (const Relation& other : scene.relations) {
      if (other.subject == rel.subject && other.object == rel.object) {
        inst.predicates.push_back(other.predicate);
      }
    }
    out.instances.push_back(std::move(inst));
  }
  return out;
}

struct PairLabel {
  bool positive = false;
  PairProvenance provenance = PairProvenance::kNegNoRelation;
  std::vector<int> predicates;  // set bits for positives
};

// A pair is positive when both boxes reach IoU >= iou_thr against the same
// relation instance (best instance by min member IoU). Negatives split into
// the wrong-entity kind (a member matches no ground-truth box of its role)
// and the no-relation kind (members are fine individually but no instance is
// matched jointly).
inline PairLabel label_pair(const Query& query, const QueryRelationInstances& instances,
                            const Box& subject_box, const Box& object_box, double iou_thr) {
  PairLabel label;
  double best = -1.0;
  const QueryRelationInstances::Instance* best_inst = nullptr;
  for (const auto& inst : instances.instances) {
    const double ious = box_iou(subject_box, inst.subject_box);
    const double iouo = box_iou(object_box, inst.object_box);
    if (ious >= iou_thr && iouo >= iou_thr && std::min(ious, iouo) > best) {
      best = std::min(ious, iouo);
      best_inst = &inst;
    }
  }
  if (best_inst != nullptr) {
    label.positive = true;
    label.provenance = PairProvenance::kPositive;
    label.predicates = best_inst->predicates;
    return label;
  }
  auto member_ok = [&](const Box& b, const std::vector<Box>& gts) {
    for (const Box& gt : gts) {
      if (box_iou(b, gt) >= iou_thr) return true;
    }
    return false;
  };
  const bool subject_ok = member_ok(subject_box, query.gt_subject_boxes);
  const bool object_ok = member_ok(object_box, query.gt_object_boxes);
  label.provenance = (!subject_ok || !object_ok) ? PairProvenance::kNegWrongEntity
                                                 : PairProvenance::kNegNoRelation;
  return label;
}

inline std::vector<std::uint8_t> label_bits(const PairLabel& label, int num_predicates) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(num_predicates) + 1, 0);
  if (label.positive) {
    for (int p : label.predicates) bits[static_cast<std::size_t>(p)] = 1;
  } else {
    bits.back() = 1;  // background
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Pair sample construction
// ---------------------------------------------------------------------------

struct PairBuildConfig {
  int k = 5;
  double nms_threshold = 0.5;
  double iou_threshold = 0.5;
  std::size_t max_samples = 20000;  // balanced cache cap (positives + negatives)
  std::uint64_t seed = 1;
};

namespace pairdetail {

struct Part {
  Tensor map, vec;
  std::array<double, 5> spatial{};
};

inline Part featurize_part(const ScenePlanes& planes, const Box& box, int grid) {
  Part part;
  planes.featurize(box, grid, part.map, part.vec);
  part.spatial = spatial_feature_of(box, planes.width(), planes.height());
  return part;
}

inline PairSample make_sample(const Query& query, const PairLabel& label, int num_predicates,
                              Part subject, Part object) {
  PairSample s;
  s.subject_map = std::move(subject.map);
  s.object_map = std::move(object.map);
  s.subject_vec = std::move(subject.vec);
  s.object_vec = std::move(object.vec);
  s.subject_spatial = subject.spatial;
  s.object_spatial = object.spatial;
  s.subject_category = query.subject_category;
  s.object_category = query.object_category;
  s.label = label_bits(label, num_predicates);
  s.provenance = label.provenance;
  s.true_predicate = label.positive ? query.predicate_id : -1;
  return s;
}

// Balance to a 1:1 positive:negative ratio under the cache cap, stratifying
// negatives across both kinds when both are present.
inline std::vector<PairSample> balance_samples(std::vector<PairSample> positives,
                                               std::vector<PairSample> neg_wrong,
                                               std::vector<PairSample> neg_norel,
                                               std::size_t max_samples, Rng& rng) {
  const std::size_t neg_available = neg_wrong.size() + neg_norel.size();
  std::size_t per_side = std::min(positives.size(), neg_available);
  per_side = std::min(per_side, max_samples / 2);
  if (per_side == 0) throw std::runtime_error("build pairs: no usable positive/negative samples");

  rng.shuffle(positives);
  rng.shuffle(neg_wrong);
  rng.shuffle(neg_norel);
  positives.resize(per_side);

  std::vector<PairSample> negatives;
  negatives.reserve(per_side);
  const std::size_t want_wrong = std::min(neg_wrong.size(), per_side / 2);
  for (std::size_t i = 0; i < want_wrong; ++i) negatives.push_back(std::move(neg_wrong[i]));
  for (std::size_t i = 0; i < neg_norel.size() && negatives.size() < per_side; ++i) {
    negatives.push_back(std::move(neg_norel[i]));
  }
  for (std::size_t i = want_wrong; i < neg_wrong.size() && negatives.size() < per_side; ++i) {
    negatives.push_back(std::move(neg_wrong[i]));
  }

  std::vector<PairSample> out;
  out.reserve(positives.size() + negatives.size());
  for (auto& s : positives) out.push_back(std::move(s));
  for (auto& s : negatives) out.push_back(std::move(s));
  rng.shuffle(out);
  return out;
}

}  // namespace pairdetail

// Enumerates K x K pairs of top-K subject/object selections for every query,
// labels them against the query's relation instances (on the refined boxes
// the predicate net will see) and returns a balanced sample set.
inline std::vector<PairSample> build_training_pairs(
    const std::vector<const SceneData*>& scenes, const ProposalModuleParams& m_sub,
    const ProposalModuleParams& m_obj, const DatasetSpec& spec, const FeatureConfig& features,
    const PairBuildConfig& config) {
  std::vector<PairSample> positives, neg_wrong, neg_norel;
  Rng rng(mix_seed(config.seed, 0x70616972ULL));  // "pair"
  const double w = spec.image_width, h = spec.image_height;

  for (const SceneData* sd : scenes) {
    if (sd->queries.empty()) continue;
    const ScenePlanes planes(sd->scene.raster, sd->scene.entities);
    for (const Query& query : sd->queries) {
      const auto subjects = rank_and_select(m_sub, sd->proposals, query.subject_category,
                                            config.k, config.nms_threshold, w, h);
      const auto objects = rank_and_select(m_obj, sd->proposals, query.object_category, config.k,
                                           config.nms_threshold, w, h);
      if (subjects.empty() || objects.empty()) continue;
      const QueryRelationInstances instances = query_relation_instances(sd->scene, query);

      std::vector<pairdetail::Part> subject_parts, object_parts;
      for (const auto& s : subjects) {
        subject_parts.push_back(pairdetail::featurize_part(planes, s.refined_box, features.grid));
      }
      for (const auto& o : objects) {
        object_parts.push_back(pairdetail::featurize_part(planes, o.refined_box, features.grid));
      }
      for (std::size_t si = 0; si < subjects.size(); ++si) {
        for (std::size_t oi = 0; oi < objects.size(); ++oi) {
          const PairLabel label = label_pair(query, instances, subjects[si].refined_box,
                                             objects[oi].refined_box, config.iou_threshold);
          PairSample sample = pairdetail::make_sample(query, label, spec.num_predicates,
                                                      subject_parts[si], object_parts[oi]);
          switch (label.provenance) {
            case PairProvenance::kPositive: positives.push_back(std::move(sample)); break;
            case PairProvenance::kNegWrongEntity: neg_wrong.push_back(std::move(sample)); break;
            case PairProvenance::kNegNoRelation: neg_norel.push_back(std::move(sample)); break;
          }
        }
      }
    }
  }
  if (positives.empty()) {
    throw std::runtime_error("build_training_pairs: proposal stage produced no positive pairs");
  }
  return pairdetail::balance_samples(std::move(positives), std::move(neg_wrong),
                                     std::move(neg_norel), config.max_samples, rng);
}

// Ground-truth-box pair set: positives are the annotated relation pairs;
// wrong-entity negatives swap one member for an unrelated entity's box and
// no-relation negatives pair entities without any relation.
inline std::vector<PairSample> build_gt_pairs(const std::vector<const SceneData*>& scenes,
                                              const DatasetSpec& spec,
                                              const FeatureConfig& features,
                                              const PairBuildConfig& config) {
  std::vector<PairSample> positives, neg_wrong, neg_norel;
  Rng rng(mix_seed(config.seed, 0x67747072ULL));  // "gtpr"

  for (const SceneData* sd : scenes) {
    if (sd->queries.empty()) continue;
    const ScenePlanes planes(sd->scene.raster, sd->scene.entities);
    std::vector<pairdetail::Part> entity_parts;
    for (const Entity& e : sd->scene.entities) {
      entity_parts.push_back(pairdetail::featurize_part(planes, e.box, features.grid));
    }
    for (const Query& query : sd->queries) {
      const QueryRelationInstances instances = query_relation_instances(sd->scene, query);
      for (const auto& inst : instances.instances) {
        PairLabel label;
        label.positive = true;
        label.provenance = PairProvenance::kPositive;
        label.predicates = inst.predicates;
        positives.push_back(pairdetail::make_sample(
            query, label, spec.num_predicates,
            entity_parts[static_cast<std::size_t>(inst.subject_entity)],
            entity_parts[static_cast<std::size_t>(inst.object_entity)]));
      }
      // One wrong-entity negative per query when a substitute entity exists.
      if (!instances.instances.empty() && sd->scene.entities.size() >= 2) {
        const auto& inst = instances.instances[0];
        for (int attempt = 0; attempt < 8; ++attempt) {
          const int other = static_cast<int>(rng.index(sd->scene.entities.size()));
          const Box& other_box = sd->scene.entities[static_cast<std::size_t>(other)].box;
          const PairLabel label =
              label_pair(query, instances, other_box, inst.object_box, config.iou_threshold);
          if (label.provenance == PairProvenance::kNegWrongEntity) {
            neg_wrong.push_back(pairdetail::make_sample(
                query, label, spec.num_predicates,
                entity_parts[static_cast<std::size_t>(other)],
                entity_parts[static_cast<std::size_t>(inst.object_entity)]));
            break;
          }
        }
      }
    }
    // No-relation negatives: ordered entity pairs without any relation.
    auto related = [&](int a, int b) {
      for (const Relation& r : sd->scene.relations) {
        if (r.subject == a && r.object == b) return true;
      }
      return false;
    };
    for (int a = 0; a < static_cast<int>(sd->scene.entities.size()); ++a) {
      for (int b = 0; b < static_cast<int>(sd->scene.entities.size()); ++b) {
        if (a == b || related(a, b) || sd->queries.empty()) continue;
        PairLabel label;
        label.positive = false;
        label.provenance = PairProvenance::kNegNoRelation;
        PairSample sample = pairdetail::make_sample(sd->queries[0], label, spec.num_predicates,
                                                    entity_parts[static_cast<std::size_t>(a)],
                                                    entity_parts[static_cast<std::size_t>(b)]);
        sample.subject_category = sd->scene.entities[static_cast<std::size_t>(a)].category_id;
        sample.object_category = sd->scene.entities[static_cast<std::size_t>(b)].category_id;
        neg_norel.push_back(std::move(sample));
      }
    }
  }
  if (positives.empty()) throw std::runtime_error("build_gt_pairs: dataset has no relations");
  return pairdetail::balance_samples(std::move(positives), std::move(neg_wrong),
                                     std::move(neg_norel), config.max_samples, rng);
}

// ---------------------------------------------------------------------------
// Evaluation pairs for predicate recall
// ---------------------------------------------------------------------------

// One evaluation pair per query; `found` is false when the regime offers no
// positive pair for the query (counts as a recall miss).
struct PredicateEvalPair {
  bool found = false;
  PairSample sample;
};

inline std::vector<PredicateEvalPair> build_gt_eval_pairs(
    const std::vector<const SceneData*>& scenes, const DatasetSpec& spec,
    const FeatureConfig& features) {
  std::vector<PredicateEvalPair> out;
  for (const SceneData* sd : scenes) {
    if (sd->queries.empty()) continue;
    const ScenePlanes planes(sd->scene.raster, sd->scene.entities);
    for (const Query& query : sd->queries) {
      const QueryRelationInstances instances = query_relation_instances(sd->scene, query);
      PredicateEvalPair ep;
      if (!instances.instances.empty()) {
        const auto& inst = instances.instances[0];
        PairLabel label;
        label.positive = true;
        label.provenance = PairProvenance::kPositive;
        label.predicates = inst.predicates;
        ep.found = true;
        ep.sample = pairdetail::make_sample(
            query, label, spec.num_predicates,
            pairdetail::featurize_part(planes, inst.subject_box, features.grid),
            pairdetail::featurize_part(planes, inst.object_box, features.grid));
        ep.sample.true_predicate = query.predicate_id;
      }
      out.push_back(std::move(ep));
    }
  }
  return out;
}

inline std::vector<PredicateEvalPair> build_topk_eval_pairs(
    const std::vector<const SceneData*>& scenes, const ProposalModuleParams& m_sub,
    const ProposalModuleParams& m_obj, const DatasetSpec& spec, const FeatureConfig& features,
    const PairBuildConfig& config) {
  std::vector<PredicateEvalPair> out;
  const double w = spec.image_width, h = spec.image_height;
  for (const SceneData* sd : scenes) {
    if (sd->queries.empty()) continue;
    const ScenePlanes planes(sd->scene.raster, sd->scene.entities);
    for (const Query& query : sd->queries) {
      const auto subjects = rank_and_select(m_sub, sd->proposals, query.subject_category,
                                            config.k, config.nms_threshold, w, h);
      const auto objects = rank_and_select(m_obj, sd->proposals, query.object_category, config.k,
                                           config.nms_threshold, w, h);
      const QueryRelationInstances instances = query_relation_instances(sd->scene, query);
      PredicateEvalPair ep;
      double best = -1.0;
      std::size_t best_si = 0, best_oi = 0;
      PairLabel best_label;
      for (std::size_t si = 0; si < subjects.size(); ++si) {
        for (std::size_t oi = 0; oi < objects.size(); ++oi) {
          const PairLabel label = label_pair(query, instances, subjects[si].refined_box,
                                             objects[oi].refined_box, config.iou_threshold);
          if (!label.positive) continue;
          // Rank candidate positive pairs by joint member IoU.
          double joint = 0.0;
          for (const auto& inst : instances.instances) {
            const double ms = box_iou(subjects[si].refined_box, inst.subject_box);
            const double mo = box_iou(objects[oi].refined_box, inst.object_box);
            joint = std::max(joint, std::min(ms, mo));
          }
          if (joint > best) {
            best = joint;
            best_si = si;
            best_oi = oi;
            best_label = label;
          }
        }
      }
      if (best >= 0.0) {
        ep.found = true;
        ep.sample = pairdetail::make_sample(
            query, best_label, spec.num_predicates,
            pairdetail::featurize_part(planes, subjects[best_si].refined_box, features.grid),
            pairdetail::featurize_part(planes, objects[best_oi].refined_box, features.grid));
        ep.sample.true_predicate = query.predicate_id;
      }
      out.push_back(std::move(ep));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair-sample cache file (JSONL index + float32 sidecar)
// ---------------------------------------------------------------------------

inline std::size_t pair_record_floats(int grid, int num_predicates) {
  const std::size_t map_floats = static_cast<std::size_t>(grid) * grid * kMapChannels;
  return 2 * map_floats + 2 * kMapChannels + 10 +
         static_cast<std::size_t>(num_predicates) + 1;
}

inline void save_pair_cache(const std::filesystem::path& base,
                            const std::vector<PairSample>& samples, int grid,
                            int num_predicates) {
  std::string blob;
  json index;
  index["format_version"] = 1;
  index["grid"] = grid;
  index["num_predicates"] = num_predicates;
  index["count"] = samples.size();
  json entries = json::array();
  for (const PairSample& s : samples) {
    entries.push_back(json{{"provenance", pair_provenance_name(s.provenance)},
                           {"subject_category", s.subject_category},
                           {"object_category", s.object_category},
                           {"true_predicate", s.true_predicate}});
    for (double v : s.subject_map.data) append_f32(blob, v);
    for (double v : s.object_map.data) append_f32(blob, v);
    for (double v : s.subject_vec.data) append_f32(blob, v);
    for (double v : s.object_vec.data) append_f32(blob, v);
    for (double v : s.subject_spatial) append_f32(blob, v);
    for (double v : s.object_spatial) append_f32(blob, v);
    for (std::uint8_t b : s.label) append_f32(blob, b);
  }
  index["samples"] = std::move(entries);
  std::filesystem::create_directories(base.parent_path());
  write_file_atomic(base.string() + ".idx.json", index.dump() + "\n");
  write_file_atomic(base.string() + ".bin", blob);
}

inline std::vector<PairSample> load_pair_cache(const std::filesystem::path& base) {
  std::ifstream idx(base.string() + ".idx.json");
  if (!idx) throw std::runtime_error("missing pair cache index: " + base.string());
  json index = json::parse(idx);
  const int grid = index.at("grid").get<int>();
  const int num_predicates = index.at("num_predicates").get<int>();
  const std::size_t count = index.at("count").get<std::size_t>();
  std::ifstream bin(base.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("missing pair cache blob: " + base.string());

  const std::size_t rec_floats = pair_record_floats(grid, num_predicates);
  std::vector<char> rec(rec_floats * sizeof(float));
  std::vector<PairSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    bin.read(rec.data(), static_cast<std::streamsize>(rec.size()));
    if (!bin) throw std::runtime_error("truncated pair cache blob: " + base.string());
    const json& meta = index.at("samples").at(i);
    PairSample s;
    const char* cur = rec.data();
    auto take = [&cur](Tensor& t, std::vector<std::size_t> shape) {
      t = Tensor(std::move(shape));
      for (double& v : t.data) {
        v = read_f32(cur);
        cur += sizeof(float);
      }
    };
    const auto g = static_cast<std::size_t>(grid);
    take(s.subject_map, {g, g, static_cast<std::size_t>(kMapChannels)});
    take(s.object_map, {g, g, static_cast<std::size_t>(kMapChannels)});
    take(s.subject_vec, {static_cast<std::size_t>(kMapChannels)});
    take(s.object_vec, {static_cast<std::size_t>(kMapChannels)});
    for (double& v : s.subject_spatial) {
      v = read_f32(cur);
      cur += sizeof(float);
    }
    for (double& v : s.object_spatial) {
      v = read_f32(cur);
      cur += sizeof(float);
    }
    s.label.resize(static_cast<std::size_t>(num_predicates) + 1);
    for (std::uint8_t& b : s.label) {
      b = static_cast<std::uint8_t>(read_f32(cur));
      cur += sizeof(float);
    }
    const std::string prov = meta.at("provenance").get<std::string>();
    s.provenance = prov == "positive" ? PairProvenance::kPositive
                   : prov == "neg_wrong_entity" ? PairProvenance::kNegWrongEntity
                                                : PairProvenance::kNegNoRelation;
    s.subject_category = meta.at("subject_category").get<int>();
    s.object_category = meta.at("object_category").get<int>();
    s.true_predicate = meta.at("true_predicate").get<int>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cparr
