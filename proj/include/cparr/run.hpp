#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cparr/checkpoint.hpp"
#include "cparr/dataset_io.hpp"
#include "cparr/inference.hpp"
#include "cparr/metrics.hpp"
#include "cparr/pairing.hpp"
#include "cparr/ppm.hpp"
#include "cparr/predicate_model.hpp"
#include "cparr/proposal_model.hpp"
#include "cparr/version.hpp"

namespace cparr {

// Error categories surfaced by the CLI as machine-parsable tokens.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PrerequisiteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  DatasetSpec dataset;
  int train_scenes = 2000;
  int test_scenes = 400;
  FeatureConfig features;
  int embed_dim = 32;
  TrainConfig proposal_train;
  PredicateTrainConfig predicate_train;
  int predicate_conv_width = 32;
  std::size_t max_pair_samples = 20000;
  InferenceConfig inference;
  MetricsConfig metrics;

  int total_scenes() const { return train_scenes + test_scenes; }

  std::filesystem::path out() const { return out_dir; }
  std::filesystem::path dataset_dir() const { return out() / "dataset"; }
  std::filesystem::path checkpoint_base(const std::string& name) const {
    return out() / "checkpoints" / name;
  }
  std::filesystem::path pair_cache_base(const std::string& name) const {
    return out() / "pairs" / name;
  }
  std::filesystem::path record_path() const { return out() / "run_record.json"; }
};

namespace cfgdetail {

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("unknown config key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace cfgdetail

// Parses a partial config JSON over the defaults; unknown keys are errors.
inline RunConfig run_config_from_json(const json& j) {
  using cfgdetail::check_keys;
  using cfgdetail::maybe;
  RunConfig c;
  check_keys(j,
             {"seed", "out_dir", "dataset", "train_scenes", "test_scenes", "proposal_train",
              "predicate_train", "inference", "metrics"},
             "config");
  maybe(j, "seed", c.seed);
  maybe(j, "out_dir", c.out_dir);
  maybe(j, "train_scenes", c.train_scenes);
  maybe(j, "test_scenes", c.test_scenes);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"image_width", "image_height", "num_object_categories", "num_predicates",
                "entities_per_scene_min", "entities_per_scene_max", "proposal_count",
                "jitter_fraction", "feature_grid", "embed_dim"},
               "config.dataset");
    maybe(d, "image_width", c.dataset.image_width);
    maybe(d, "image_height", c.dataset.image_height);
    maybe(d, "num_object_categories", c.dataset.num_object_categories);
    maybe(d, "num_predicates", c.dataset.num_predicates);
    maybe(d, "entities_per_scene_min", c.dataset.entities_per_scene_min);
    maybe(d, "entities_per_scene_max", c.dataset.entities_per_scene_max);
    maybe(d, "proposal_count", c.dataset.proposal_count);
    maybe(d, "jitter_fraction", c.dataset.jitter_fraction);
    maybe(d, "feature_grid", c.features.grid);
    maybe(d, "embed_dim", c.embed_dim);
  }
  if (j.contains("proposal_train")) {
    const json& t = j.at("proposal_train");
    check_keys(t, {"pos_iou_threshold", "max_iterations", "batch_size", "learning_rate"},
               "config.proposal_train");
    maybe(t, "pos_iou_threshold", c.proposal_train.pos_iou_threshold);
    maybe(t, "max_iterations", c.proposal_train.max_iterations);
    maybe(t, "batch_size", c.proposal_train.batch_size);
    maybe(t, "learning_rate", c.proposal_train.learning_rate);
  }
  if (j.contains("predicate_train")) {
    const json& t = j.at("predicate_train");
    check_keys(t,
               {"max_iterations", "batch_size", "learning_rate", "conv_width",
                "max_pair_samples"},
               "config.predicate_train");
    maybe(t, "max_iterations", c.predicate_train.max_iterations);
    maybe(t, "batch_size", c.predicate_train.batch_size);
    maybe(t, "learning_rate", c.predicate_train.learning_rate);
    maybe(t, "conv_width", c.predicate_conv_width);
    maybe(t, "max_pair_samples", c.max_pair_samples);
  }
  if (j.contains("inference")) {
    const json& t = j.at("inference");
    check_keys(t, {"k_sub", "k_obj", "tau_pred", "nms_threshold", "predicate_weight"},
               "config.inference");
    maybe(t, "k_sub", c.inference.k_sub);
    maybe(t, "k_obj", c.inference.k_obj);
    maybe(t, "tau_pred", c.inference.tau_pred);
    maybe(t, "nms_threshold", c.inference.nms_threshold);
    maybe(t, "predicate_weight", c.inference.predicate_weight);
  }
  if (j.contains("metrics")) {
    const json& t = j.at("metrics");
    check_keys(t, {"heatmap_size", "recall_iou_threshold", "recall_ranks"}, "config.metrics");
    maybe(t, "heatmap_size", c.metrics.heatmap_size);
    maybe(t, "recall_iou_threshold", c.metrics.recall_iou_threshold);
    maybe(t, "recall_ranks", c.metrics.recall_ranks);
  }
  c.dataset.seed = c.seed;
  try {
    c.dataset.validate();
    c.inference.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.train_scenes < 1 || c.test_scenes < 1) {
    throw ConfigError("train_scenes and test_scenes must be positive");
  }
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  json d = spec_to_json(c.dataset);
  d.erase("seed");
  d["feature_grid"] = c.features.grid;
  d["embed_dim"] = c.embed_dim;
  return json{
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"train_scenes", c.train_scenes},
      {"test_scenes", c.test_scenes},
      {"dataset", d},
      {"proposal_train",
       {{"pos_iou_threshold", c.proposal_train.pos_iou_threshold},
        {"max_iterations", c.proposal_train.max_iterations},
        {"batch_size", c.proposal_train.batch_size},
        {"learning_rate", c.proposal_train.learning_rate}}},
      {"predicate_train",
       {{"max_iterations", c.predicate_train.max_iterations},
        {"batch_size", c.predicate_train.batch_size},
        {"learning_rate", c.predicate_train.learning_rate},
        {"conv_width", c.predicate_conv_width},
        {"max_pair_samples", c.max_pair_samples}}},
      {"inference",
       {{"k_sub", c.inference.k_sub},
        {"k_obj", c.inference.k_obj},
        {"tau_pred", c.inference.tau_pred},
        {"nms_threshold", c.inference.nms_threshold},
        {"predicate_weight", c.inference.predicate_weight}}},
      {"metrics",
       {{"heatmap_size", c.metrics.heatmap_size},
        {"recall_iou_threshold", c.metrics.recall_iou_threshold},
        {"recall_ranks", c.metrics.recall_ranks}}}};
}

inline RunConfig load_run_config(const std::string& config_path, std::uint64_t seed_override,
                                 bool has_seed_override, const std::string& out_override) {
  json j = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file: " + config_path);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  if (has_seed_override) j["seed"] = seed_override;
  if (!out_override.empty()) j["out_dir"] = out_override;
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

inline json load_run_record(const RunConfig& config) {
  std::ifstream in(config.record_path());
  if (!in) {
    return json{{"schema_version", 1},
                {"code_version", kVersion},
                {"seed", config.seed},
                {"config", run_config_to_json(config)},
                {"stages", json::object()},
                {"metrics", json::object()},
                {"timings", json::object()}};
  }
  return json::parse(in);
}

inline void store_run_record(const RunConfig& config, const json& record) {
  std::filesystem::create_directories(config.out());
  write_file_atomic(config.record_path(), record.dump(2) + "\n");
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kSplitSalt = 0x73706c69ULL;  // "spli"

// Scene ids ordered by a seeded hash; the first train_count become the train
// split, the next test_count the test split.
inline std::pair<std::vector<int>, std::vector<int>> split_scene_ids(int scene_count,
                                                                     int train_count,
                                                                     int test_count,
                                                                     std::uint64_t seed) {
  if (train_count + test_count != scene_count) {
    throw DataError("split: train+test must equal the dataset scene count");
  }
  std::vector<int> ids(static_cast<std::size_t>(scene_count));
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [seed](int a, int b) {
    const std::uint64_t ha = mix_seed(seed, static_cast<std::uint64_t>(a), kSplitSalt);
    const std::uint64_t hb = mix_seed(seed, static_cast<std::uint64_t>(b), kSplitSalt);
    if (ha != hb) return ha < hb;
    return a < b;
  });
  std::vector<int> train(ids.begin(), ids.begin() + train_count);
  std::vector<int> test(ids.begin() + train_count, ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline std::vector<const SceneData*> scene_view(const LoadedDataset& ds,
                                                const std::vector<int>& ids) {
  std::vector<const SceneData*> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(&ds.scenes.at(static_cast<std::size_t>(id)));
  return out;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

inline DatasetStats run_gen(const RunConfig& config) {
  StageTimer timer;
  std::filesystem::create_directories(config.dataset_dir());
  const DatasetStats stats = write_dataset(config.dataset_dir(), config.dataset, config.features,
                                           config.total_scenes());
  json record = load_run_record(config);
  record["config"] = run_config_to_json(config);
  record["seed"] = config.seed;
  record["dataset_stats"] = {{"scene_count", stats.scene_count},
                             {"query_count", stats.query_count},
                             {"ambiguity_rate", stats.ambiguity_rate}};
  record["timings"]["gen_seconds"] = timer.seconds();
  store_run_record(config, record);
  return stats;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kSubInitSalt = 0x6d737562ULL;    // "msub"
inline constexpr std::uint64_t kObjInitSalt = 0x6d6f626aULL;    // "mobj"
inline constexpr std::uint64_t kPredInitSalt = 0x6d707264ULL;   // "mprd"
inline constexpr std::uint64_t kTrainSalt = 0x7472616eULL;      // "tran"
inline constexpr std::uint64_t kVariantInitSalt = 0x76617269ULL;  // "vari"

inline LoadedDataset load_dataset_checked(const RunConfig& config) {
  if (!std::filesystem::exists(config.dataset_dir() / "spec.json")) {
    throw PrerequisiteError("dataset not generated; run the gen command first");
  }
  LoadedDataset ds = load_dataset(config.dataset_dir());
  if (static_cast<int>(ds.scenes.size()) != config.total_scenes()) {
    throw DataError("dataset scene count does not match config");
  }
  return ds;
}

inline std::vector<ProposalTrainQuery> proposal_queries_for_role(
    const std::vector<const SceneData*>& scenes, bool subject_role) {
  std::vector<ProposalTrainQuery> out;
  for (const SceneData* sd : scenes) {
    for (const Query& q : sd->queries) {
      ProposalTrainQuery tq;
      tq.category = subject_role ? q.subject_category : q.object_category;
      tq.proposals = &sd->proposals;
      tq.gt_boxes = subject_role ? &q.gt_subject_boxes : &q.gt_object_boxes;
      out.push_back(tq);
    }
  }
  return out;
}

inline void save_proposal_checkpoint(const RunConfig& config, const std::string& name,
                                     ProposalModuleParams& params) {
  const std::vector<std::string> names = params.parameter_names(name + ".");
  std::vector<Tensor*> tensors = params.parameters();
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < tensors.size(); ++i) named.push_back({names[i], tensors[i]});
  save_checkpoint(config.checkpoint_base(name), named);
}

inline ProposalModuleParams load_proposal_checkpoint(const RunConfig& config,
                                                     const std::string& name) {
  if (!checkpoint_exists(config.checkpoint_base(name))) {
    throw PrerequisiteError("missing checkpoint '" + name + "'; run train --stage proposals");
  }
  Rng rng(0);
  ProposalModuleParams params = ProposalModuleParams::init(
      kMapChannels, static_cast<std::size_t>(config.embed_dim),
      static_cast<std::size_t>(config.dataset.num_object_categories), rng);
  const std::vector<std::string> names = params.parameter_names(name + ".");
  std::vector<Tensor*> tensors = params.parameters();
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < tensors.size(); ++i) named.push_back({names[i], tensors[i]});
  load_checkpoint(config.checkpoint_base(name), named);
  return params;
}

inline void save_predicate_checkpoint(const RunConfig& config, const std::string& name,
                                      PredicateNetParams& params) {
  const std::vector<std::string> names = params.parameter_names(name + ".");
  std::vector<Tensor*> tensors = params.parameters();
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < tensors.size(); ++i) named.push_back({names[i], tensors[i]});
  save_checkpoint(config.checkpoint_base(name), named);
}

inline PredicateNetParams load_predicate_checkpoint(const RunConfig& config,
                                                    const std::string& name) {
  if (!checkpoint_exists(config.checkpoint_base(name))) {
    throw PrerequisiteError("missing checkpoint '" + name + "'; run train --stage predicate");
  }
  Rng rng(0);
  PredicateNetParams params = PredicateNetParams::init(
      kMapChannels, static_cast<std::size_t>(config.predicate_conv_width),
      static_cast<std::size_t>(config.dataset.num_predicates), rng);
  const std::vector<std::string> names = params.parameter_names(name + ".");
  std::vector<Tensor*> tensors = params.parameters();
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < tensors.size(); ++i) named.push_back({names[i], tensors[i]});
  load_checkpoint(config.checkpoint_base(name), named);
  return params;
}

inline void run_train_proposals(const RunConfig& config) {
  StageTimer timer;
  const LoadedDataset ds = load_dataset_checked(config);
  const auto [train_ids, test_ids] =
      split_scene_ids(config.total_scenes(), config.train_scenes, config.test_scenes, config.seed);
  const auto train = scene_view(ds, train_ids);

  json stage;
  for (const bool subject_role : {true, false}) {
    const std::string name = subject_role ? "m_sub" : "m_obj";
    Rng init_rng(mix_seed(config.seed, subject_role ? kSubInitSalt : kObjInitSalt));
    ProposalModuleParams params = ProposalModuleParams::init(
        kMapChannels, static_cast<std::size_t>(config.embed_dim),
        static_cast<std::size_t>(config.dataset.num_object_categories), init_rng);
    const std::vector<ProposalTrainQuery> queries = proposal_queries_for_role(train, subject_role);
    if (queries.empty()) throw DataError("no training queries in the train split");
    Rng train_rng(mix_seed(config.seed, subject_role ? kSubInitSalt : kObjInitSalt, kTrainSalt));
    ProposalTrainResult result;
    try {
      result = train_proposal_module(params, queries, config.proposal_train, train_rng);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    save_proposal_checkpoint(config, name, params);
    stage[name] = {{"cls_curve", result.cls_curve}, {"reg_curve", result.reg_curve}};
  }
  stage["wall_seconds"] = timer.seconds();
  stage["train_queries"] = proposal_queries_for_role(train, true).size();

  json record = load_run_record(config);
  record["stages"]["proposals"] = stage;
  record["timings"]["train_proposals_seconds"] = timer.seconds();
  store_run_record(config, record);
}

inline void run_train_predicate(const RunConfig& config) {
  StageTimer timer;
  const LoadedDataset ds = load_dataset_checked(config);
  const ProposalModuleParams m_sub = load_proposal_checkpoint(config, "m_sub");
  const ProposalModuleParams m_obj = load_proposal_checkpoint(config, "m_obj");
  const auto [train_ids, test_ids] =
      split_scene_ids(config.total_scenes(), config.train_scenes, config.test_scenes, config.seed);
  const auto train = scene_view(ds, train_ids);

  PairBuildConfig pair_cfg;
  pair_cfg.k = config.inference.k_sub;
  pair_cfg.nms_threshold = config.inference.nms_threshold;
  pair_cfg.iou_threshold = config.proposal_train.pos_iou_threshold;
  pair_cfg.max_samples = config.max_pair_samples;
  pair_cfg.seed = config.seed;
  std::vector<PairSample> samples;
  try {
    samples = build_training_pairs(train, m_sub, m_obj, ds.spec, ds.features, pair_cfg);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  save_pair_cache(config.pair_cache_base("topk"), samples, ds.features.grid,
                  ds.spec.num_predicates);
  samples = load_pair_cache(config.pair_cache_base("topk"));

  Rng init_rng(mix_seed(config.seed, kPredInitSalt));
  PredicateNetParams params = PredicateNetParams::init(
      kMapChannels, static_cast<std::size_t>(config.predicate_conv_width),
      static_cast<std::size_t>(ds.spec.num_predicates), init_rng);
  Rng train_rng(mix_seed(config.seed, kPredInitSalt, kTrainSalt));
  const std::vector<double> curve =
      train_predicate(params, samples, config.predicate_train, train_rng);
  save_predicate_checkpoint(config, "m_pred", params);

  std::size_t positives = 0;
  for (const PairSample& s : samples) positives += (s.provenance == PairProvenance::kPositive);
  json record = load_run_record(config);
  record["stages"]["predicate"] = {{"loss_curve", curve},
                                   {"pair_samples", samples.size()},
                                   {"pair_positives", positives},
                                   {"wall_seconds", timer.seconds()}};
  record["timings"]["train_predicate_seconds"] = timer.seconds();
  store_run_record(config, record);
}

inline void run_train(const RunConfig& config, const std::string& stage) {
  if (stage == "proposals") {
    run_train_proposals(config);
  } else if (stage == "predicate") {
    run_train_predicate(config);
  } else {
    throw ConfigError("unknown training stage: " + stage);
  }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline json metrics_report(const MetricsConfig& metrics, InferenceMode mode,
                           std::size_t query_count,
                           const std::vector<std::vector<Box>>& subject_preds,
                           const std::vector<std::vector<Box>>& object_preds,
                           const std::vector<std::vector<Box>>& subject_gts,
                           const std::vector<std::vector<Box>>& object_gts, double image_w,
                           double image_h) {
  json report{{"schema_version", 1},
              {"mode", inference_mode_name(mode)},
              {"query_count", query_count}};
  for (const bool subject_role : {true, false}) {
    const auto& preds = subject_role ? subject_preds : object_preds;
    const auto& gts = subject_role ? subject_gts : object_gts;
    json role;
    std::vector<Box> top1;
    top1.reserve(preds.size());
    for (const auto& p : preds) top1.push_back(p.at(0));
    role["mean_iou"] = mean_heatmap_iou(top1, gts, image_w, image_h, metrics.heatmap_size);
    for (int k : metrics.recall_ranks) {
      role["r@" + std::to_string(k)] = recall_at_k(preds, gts, k, metrics.recall_iou_threshold);
    }
    report[subject_role ? "subject" : "object"] = role;
  }
  return report;
}

inline json run_eval(const RunConfig& config, InferenceMode mode) {
  StageTimer timer;
  const LoadedDataset ds = load_dataset_checked(config);
  const ProposalModuleParams m_sub = load_proposal_checkpoint(config, "m_sub");
  const ProposalModuleParams m_obj = load_proposal_checkpoint(config, "m_obj");
  const PredicateNetParams m_pred = load_predicate_checkpoint(config, "m_pred");
  const auto [train_ids, test_ids] =
      split_scene_ids(config.total_scenes(), config.train_scenes, config.test_scenes, config.seed);
  const auto test = scene_view(ds, test_ids);

  InferenceConfig inf = config.inference;
  inf.mode = mode;
  const int max_rank =
      *std::max_element(config.metrics.recall_ranks.begin(), config.metrics.recall_ranks.end());

  std::filesystem::create_directories(config.out());
  const std::string mode_name = inference_mode_name(mode);
  std::ofstream pred_out(config.out() / ("predictions_" + mode_name + ".jsonl"),
                         std::ios::trunc);
  std::ofstream sel_out(config.out() / "selections.jsonl", std::ios::trunc);
  if (!pred_out || !sel_out) throw IoError("cannot write outputs under " + config.out().string());

  std::vector<std::vector<Box>> subject_preds, object_preds, subject_gts, object_gts;
  std::size_t query_index = 0;
  for (const SceneData* sd : test) {
    const ScenePlanes planes(sd->scene.raster, sd->scene.entities);
    for (const Query& query : sd->queries) {
      std::vector<PairPrediction> ranked;
      try {
        ranked = infer(query, sd->proposals, planes, m_sub, m_obj, m_pred, ds.features, inf);
      } catch (const std::runtime_error& e) {
        throw DataError(e.what());
      }
      const auto [subj_boxes, obj_boxes] = predict_top_boxes(ranked, max_rank);
      subject_preds.push_back(subj_boxes);
      object_preds.push_back(obj_boxes);
      subject_gts.push_back(query.gt_subject_boxes);
      object_gts.push_back(query.gt_object_boxes);

      // Selection dump: distinct role candidates with their confidences.
      for (const bool subject_role : {true, false}) {
        json boxes = json::array();
        std::vector<std::size_t> seen;
        for (const PairPrediction& pp : ranked) {
          const ScoredProposal& sp = subject_role ? pp.subject : pp.object;
          if (std::find(seen.begin(), seen.end(), sp.proposal_index) != seen.end()) continue;
          seen.push_back(sp.proposal_index);
          boxes.push_back(json{{"proposal_index", sp.proposal_index},
                               {"box", box_to_json(sp.refined_box)},
                               {"confidence", sp.confidence}});
        }
        sel_out << json{{"query_index", query_index},
                        {"scene_id", query.scene_id},
                        {"role", subject_role ? "subject" : "object"},
                        {"candidates", boxes}}
                       .dump()
                << "\n";
      }

      json jq{{"query_index", query_index},
              {"scene_id", query.scene_id},
              {"subject_category", query.subject_category},
              {"predicate_id", query.predicate_id},
              {"object_category", query.object_category},
              {"mode", mode_name}};
      json subjects = json::array(), objects = json::array();
      {
        std::vector<std::size_t> seen_s, seen_o;
        for (const PairPrediction& pp : ranked) {
          if (std::find(seen_s.begin(), seen_s.end(), pp.subject.proposal_index) == seen_s.end()) {
            seen_s.push_back(pp.subject.proposal_index);
            subjects.push_back(json{
                {"box", box_to_json(pp.subject.refined_box)},
                {"score", mode == InferenceMode::kCp ? pp.subject.confidence : pp.combined}});
          }
          if (std::find(seen_o.begin(), seen_o.end(), pp.object.proposal_index) == seen_o.end()) {
            seen_o.push_back(pp.object.proposal_index);
            objects.push_back(json{
                {"box", box_to_json(pp.object.refined_box)},
                {"score", mode == InferenceMode::kCp ? pp.object.confidence : pp.combined}});
          }
        }
      }
      jq["subjects"] = subjects;
      jq["objects"] = objects;
      if (mode != InferenceMode::kCp) {
        json pairs = json::array();
        for (std::size_t i = 0; i < ranked.size() && i < 5; ++i) {
          pairs.push_back(json{{"subject_index", ranked[i].subject.proposal_index},
                               {"object_index", ranked[i].object.proposal_index},
                               {"predicate_confidence", ranked[i].predicate_confidence},
                               {"combined_score", ranked[i].combined}});
        }
        jq["pairs"] = pairs;
      }
      pred_out << jq.dump() << "\n";
      ++query_index;
    }
  }

  const json report =
      metrics_report(config.metrics, mode, query_index, subject_preds, object_preds, subject_gts,
                     object_gts, ds.spec.image_width, ds.spec.image_height);
  write_file_atomic(config.out() / ("metrics_" + mode_name + ".json"), report.dump(2) + "\n");

  json record = load_run_record(config);
  record["metrics"][mode_name] = report;
  record["timings"]["eval_" + mode_name + "_seconds"] = timer.seconds();
  store_run_record(config, record);
  return report;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

inline double predicate_recall_conv(const PredicateNetParams& params,
                                    const std::vector<PredicateEvalPair>& pairs, int k) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PredicateEvalPair& ep : pairs) {
    if (!ep.found) continue;
    PredicateForward f =
        predicate_forward(params, stack_pair(ep.sample.subject_map, ep.sample.object_map));
    if (class_in_top_k(f.confidences, ep.sample.true_predicate, k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

inline double predicate_recall_vector(const VectorPredicateParams& params,
                                      const std::vector<PredicateEvalPair>& pairs, int k) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PredicateEvalPair& ep : pairs) {
    if (!ep.found) continue;
    VectorForward f = vector_variant_forward(params, ep.sample);
    Tensor scores({f.confidences.shape[1]});
    for (std::size_t c = 0; c < scores.size(); ++c) scores.data[c] = f.confidences.at(0, c);
    if (class_in_top_k(scores, ep.sample.true_predicate, k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// Trains and evaluates the predicate-stage variants under a shared budget:
// the map-input model on ground-truth pairs and on top-K pairs, plus the
// three flat-vector input variants on top-K pairs.
inline json run_ablate(const RunConfig& config) {
  StageTimer timer;
  const LoadedDataset ds = load_dataset_checked(config);
  const ProposalModuleParams m_sub = load_proposal_checkpoint(config, "m_sub");
  const ProposalModuleParams m_obj = load_proposal_checkpoint(config, "m_obj");
  const auto [train_ids, test_ids] =
      split_scene_ids(config.total_scenes(), config.train_scenes, config.test_scenes, config.seed);
  const auto train = scene_view(ds, train_ids);
  const auto test = scene_view(ds, test_ids);

  PairBuildConfig pair_cfg;
  pair_cfg.k = config.inference.k_sub;
  pair_cfg.nms_threshold = config.inference.nms_threshold;
  pair_cfg.iou_threshold = config.proposal_train.pos_iou_threshold;
  pair_cfg.max_samples = config.max_pair_samples;
  pair_cfg.seed = config.seed;

  // Top-K pair cache (reused from the train stage when present).
  std::vector<PairSample> topk_samples;
  if (checkpoint_exists(config.checkpoint_base("m_pred")) &&
      std::filesystem::exists(config.pair_cache_base("topk").string() + ".idx.json")) {
    topk_samples = load_pair_cache(config.pair_cache_base("topk"));
  } else {
    topk_samples = build_training_pairs(train, m_sub, m_obj, ds.spec, ds.features, pair_cfg);
    save_pair_cache(config.pair_cache_base("topk"), topk_samples, ds.features.grid,
                    ds.spec.num_predicates);
    topk_samples = load_pair_cache(config.pair_cache_base("topk"));
  }
  std::vector<PairSample> gt_samples =
      build_gt_pairs(train, ds.spec, ds.features, pair_cfg);
  save_pair_cache(config.pair_cache_base("gt"), gt_samples, ds.features.grid,
                  ds.spec.num_predicates);
  gt_samples = load_pair_cache(config.pair_cache_base("gt"));

  const auto gt_eval = build_gt_eval_pairs(test, ds.spec, ds.features);
  const auto topk_eval = build_topk_eval_pairs(test, m_sub, m_obj, ds.spec, ds.features, pair_cfg);

  // Map-input model trained on top-K pairs: reuse the main checkpoint when
  // available, otherwise train one here.
  PredicateNetParams map_topk = [&]() {
    if (checkpoint_exists(config.checkpoint_base("m_pred"))) {
      return load_predicate_checkpoint(config, "m_pred");
    }
    Rng init_rng(mix_seed(config.seed, kPredInitSalt));
    PredicateNetParams p = PredicateNetParams::init(
        kMapChannels, static_cast<std::size_t>(config.predicate_conv_width),
        static_cast<std::size_t>(ds.spec.num_predicates), init_rng);
    Rng train_rng(mix_seed(config.seed, kPredInitSalt, kTrainSalt));
    train_predicate(p, topk_samples, config.predicate_train, train_rng);
    return p;
  }();

  Rng gt_init(mix_seed(config.seed, kPredInitSalt, 0x6774ULL));
  PredicateNetParams map_gt = PredicateNetParams::init(
      kMapChannels, static_cast<std::size_t>(config.predicate_conv_width),
      static_cast<std::size_t>(ds.spec.num_predicates), gt_init);
  {
    Rng train_rng(mix_seed(config.seed, kPredInitSalt, 0x67747261ULL));
    train_predicate(map_gt, gt_samples, config.predicate_train, train_rng);
  }

  json table4 = json::array();
  table4.push_back(json{{"row", "gt_proposals"},
                        {"r@1", predicate_recall_conv(map_gt, gt_eval, 1)},
                        {"r@5", predicate_recall_conv(map_gt, gt_eval, 5)}});
  table4.push_back(json{{"row", "topk_proposals"},
                        {"r@1", predicate_recall_conv(map_topk, topk_eval, 1)},
                        {"r@5", predicate_recall_conv(map_topk, topk_eval, 5)}});

  json table5 = json::array();
  table5.push_back(json{{"row", "vis_map"},
                        {"r@1", predicate_recall_conv(map_topk, topk_eval, 1)},
                        {"r@5", predicate_recall_conv(map_topk, topk_eval, 5)}});
  for (const VectorInputMode mode : {VectorInputMode::kVecSpatialPhrase,
                                     VectorInputMode::kVecSpatial, VectorInputMode::kVecPhrase}) {
    Rng init_rng(mix_seed(config.seed, kVariantInitSalt, static_cast<std::uint64_t>(mode)));
    VectorPredicateParams variant = VectorPredicateParams::init(
        mode, kMapChannels, static_cast<std::size_t>(config.embed_dim),
        static_cast<std::size_t>(ds.spec.num_object_categories),
        static_cast<std::size_t>(ds.spec.num_predicates), init_rng);
    Rng train_rng(
        mix_seed(config.seed, kVariantInitSalt, 0x100ULL + static_cast<std::uint64_t>(mode)));
    train_vector_variant(variant, topk_samples, config.predicate_train, train_rng);
    table5.push_back(json{{"row", vector_input_mode_name(mode)},
                          {"r@1", predicate_recall_vector(variant, topk_eval, 1)},
                          {"r@5", predicate_recall_vector(variant, topk_eval, 5)}});
  }

  json ablation{{"schema_version", 1},
                {"seed", config.seed},
                {"table4", table4},
                {"table5", table5}};
  write_file_atomic(config.out() / "ablation.json", ablation.dump(2) + "\n");

  json record = load_run_record(config);
  record["metrics"]["ablation"] = ablation;
  record["timings"]["ablate_seconds"] = timer.seconds();
  store_run_record(config, record);
  return ablation;
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

inline constexpr std::array<std::uint8_t, 3> kGtColor{40, 90, 255};
inline constexpr std::array<std::uint8_t, 3> kPredColor{40, 220, 60};

// Renders the first n prediction records of the given mode: subject panel on
// the left, object panel on the right, ground truth in blue and the top-1
// prediction in green, with the query triplet as a caption strip.
inline int run_visualize(const RunConfig& config, InferenceMode mode, int n) {
  const std::string mode_name = inference_mode_name(mode);
  const std::filesystem::path pred_path =
      config.out() / ("predictions_" + mode_name + ".jsonl");
  std::ifstream pred_in(pred_path);
  if (!pred_in) {
    throw PrerequisiteError("missing predictions for mode " + mode_name + "; run eval first");
  }
  const LoadedDataset ds = load_dataset_checked(config);
  const std::filesystem::path out_dir = config.out() / "viz";
  std::filesystem::create_directories(out_dir);

  int rendered = 0;
  std::string line;
  while (rendered < n && std::getline(pred_in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const auto scene_id = j.at("scene_id").get<std::size_t>();
    const Scene& scene = ds.scenes.at(scene_id).scene;
    const Query q = [&]() {
      Query out;
      out.subject_category = j.at("subject_category").get<int>();
      out.predicate_id = j.at("predicate_id").get<int>();
      out.object_category = j.at("object_category").get<int>();
      for (const auto& qq : ds.scenes.at(scene_id).queries) {
        if (qq.subject_category == out.subject_category &&
            qq.predicate_id == out.predicate_id && qq.object_category == out.object_category) {
          return qq;
        }
      }
      throw DataError("prediction references an unknown query");
    }();

    const int w = scene.raster.width, h = scene.raster.height;
    const int caption_h = 11;
    Image8 canvas = Image8::filled(2 * w + 1, h + caption_h, {0, 0, 0});
    const Image8 base = quantize_raster(scene.raster);
    for (const bool subject_role : {true, false}) {
      const int x_off = subject_role ? 0 : w + 1;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t src = (static_cast<std::size_t>(y) * w + x) * 3;
          canvas.set(x_off + x, caption_h + y, {base.rgb[src], base.rgb[src + 1], base.rgb[src + 2]});
        }
      }
      const auto& gts = subject_role ? q.gt_subject_boxes : q.gt_object_boxes;
      const json& preds = j.at(subject_role ? "subjects" : "objects");
      for (const Box& gt : gts) {
        Box shifted{gt.x_min + x_off, gt.y_min + caption_h, gt.x_max + x_off,
                    gt.y_max + caption_h};
        draw_box_outline(canvas, shifted, kGtColor);
      }
      if (!preds.empty()) {
        const Box top1 = box_from_json(preds.at(0).at("box"));
        Box shifted{top1.x_min + x_off, top1.y_min + caption_h, top1.x_max + x_off,
                    top1.y_max + caption_h};
        draw_box_outline(canvas, shifted, kPredColor);
      }
    }
    const std::string caption = "<cat" + std::to_string(q.subject_category) + "," +
                                predicate_name(q.predicate_id) + ",cat" +
                                std::to_string(q.object_category) + "> s|o";
    render_text(canvas, 2, 2, caption, {255, 255, 255});

    char name[64];
    std::snprintf(name, sizeof(name), "%s_q%06zu.ppm", mode_name.c_str(),
                  j.at("query_index").get<std::size_t>());
    write_ppm(out_dir / name, canvas);
    ++rendered;
  }
  return rendered;
}

}  // namespace cparr
