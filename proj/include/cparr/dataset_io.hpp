#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cparr/checkpoint.hpp"
#include "cparr/features.hpp"
#include "cparr/ppm.hpp"
#include "cparr/rng.hpp"
#include "cparr/scene.hpp"

namespace cparr {

using nlohmann::json;

inline constexpr std::uint64_t kProposalSeedSalt = 0x70726f70ULL;  // "prop"

// ---------------------------------------------------------------------------
// JSON conversions
// ---------------------------------------------------------------------------

inline json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

inline Box box_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

inline json spec_to_json(const DatasetSpec& s) {
  return json{{"image_width", s.image_width},
              {"image_height", s.image_height},
              {"num_object_categories", s.num_object_categories},
              {"num_predicates", s.num_predicates},
              {"entities_per_scene_min", s.entities_per_scene_min},
              {"entities_per_scene_max", s.entities_per_scene_max},
              {"proposal_count", s.proposal_count},
              {"jitter_fraction", s.jitter_fraction},
              {"seed", s.seed}};
}

inline DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.image_width = j.at("image_width").get<int>();
  s.image_height = j.at("image_height").get<int>();
  s.num_object_categories = j.at("num_object_categories").get<int>();
  s.num_predicates = j.at("num_predicates").get<int>();
  s.entities_per_scene_min = j.at("entities_per_scene_min").get<int>();
  s.entities_per_scene_max = j.at("entities_per_scene_max").get<int>();
  s.proposal_count = j.at("proposal_count").get<int>();
  s.jitter_fraction = j.at("jitter_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline json query_to_json(const Query& q) {
  json subj = json::array(), obj = json::array();
  for (const Box& b : q.gt_subject_boxes) subj.push_back(box_to_json(b));
  for (const Box& b : q.gt_object_boxes) obj.push_back(box_to_json(b));
  return json{{"scene_id", q.scene_id},
              {"subject_category", q.subject_category},
              {"predicate_id", q.predicate_id},
              {"object_category", q.object_category},
              {"gt_subject_boxes", subj},
              {"gt_object_boxes", obj}};
}

inline Query query_from_json(const json& j) {
  Query q;
  q.scene_id = j.at("scene_id").get<std::int64_t>();
  q.subject_category = j.at("subject_category").get<int>();
  q.predicate_id = j.at("predicate_id").get<int>();
  q.object_category = j.at("object_category").get<int>();
  for (const auto& b : j.at("gt_subject_boxes")) q.gt_subject_boxes.push_back(box_from_json(b));
  for (const auto& b : j.at("gt_object_boxes")) q.gt_object_boxes.push_back(box_from_json(b));
  return q;
}

inline json scene_to_json(const Scene& s, const std::string& raster_path) {
  json entities = json::array();
  for (const Entity& e : s.entities) {
    entities.push_back(json{{"category_id", e.category_id},
                            {"box", box_to_json(e.box)},
                            {"color", json::array({e.color[0], e.color[1], e.color[2]})},
                            {"shape", shape_kind_name(e.shape_kind)}});
  }
  json relations = json::array();
  for (const Relation& r : s.relations) {
    relations.push_back(json::array({r.subject, r.predicate, r.object}));
  }
  return json{{"id", s.id}, {"entities", entities}, {"relations", relations},
              {"raster", raster_path}};
}

// Scene record without the raster pixels; the caller loads the referenced ppm.
inline Scene scene_from_json(const json& j) {
  Scene s;
  s.id = j.at("id").get<std::int64_t>();
  for (const auto& ej : j.at("entities")) {
    Entity e;
    e.category_id = ej.at("category_id").get<int>();
    e.box = box_from_json(ej.at("box"));
    e.color = {ej.at("color").at(0).get<double>(), ej.at("color").at(1).get<double>(),
               ej.at("color").at(2).get<double>()};
    e.shape_kind = shape_kind_from_name(ej.at("shape").get<std::string>());
    s.entities.push_back(e);
  }
  for (const auto& rj : j.at("relations")) {
    s.relations.push_back({rj.at(0).get<int>(), rj.at(1).get<int>(), rj.at(2).get<int>()});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Float32 sidecar helpers
// ---------------------------------------------------------------------------

inline void append_f32(std::string& buf, double v) {
  const float f = static_cast<float>(v);
  char raw[sizeof(float)];
  std::memcpy(raw, &f, sizeof(float));
  buf.append(raw, sizeof(float));
}

inline float read_f32(const char* p) {
  float f;
  std::memcpy(&f, p, sizeof(float));
  return f;
}

// Proposal record layout in proposals.bin, all little-endian float32:
// box(4) || spatial(5) || feature_vector(D_v) || feature_map(grid*grid*D).
inline std::size_t proposal_record_floats(int grid) {
  return 4 + 5 + kMapChannels + static_cast<std::size_t>(grid) * grid * kMapChannels;
}

// ---------------------------------------------------------------------------
// Dataset directory
// ---------------------------------------------------------------------------

struct DatasetStats {
  std::size_t scene_count = 0;
  std::size_t query_count = 0;
  double ambiguity_rate = 0.0;  // queries whose subject or object category is duplicated
};

struct SceneData {
  Scene scene;  // raster holds the quantized (8-bit round-tripped) pixels
  std::vector<Query> queries;
  std::vector<Proposal> proposals;
};

struct LoadedDataset {
  DatasetSpec spec;
  FeatureConfig features;
  std::vector<SceneData> scenes;
};

// Writes spec.json, scenes.jsonl, queries.jsonl, proposals.idx.jsonl,
// proposals.bin, rasters/*.ppm and stats.json under dir. Scene ids are
// 0..scene_count-1; everything is a pure function of (spec, scene id).
// Features are computed from the quantized raster so that the sidecar is
// exactly reproducible from the stored ppm files.
inline DatasetStats write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                                  const FeatureConfig& features, int scene_count) {
  spec.validate();
  std::filesystem::create_directories(dir / "rasters");
  std::ofstream scenes_out(dir / "scenes.jsonl", std::ios::trunc);
  std::ofstream queries_out(dir / "queries.jsonl", std::ios::trunc);
  std::ofstream index_out(dir / "proposals.idx.jsonl", std::ios::trunc);
  std::ofstream bin_out(dir / "proposals.bin", std::ios::binary | std::ios::trunc);
  if (!scenes_out || !queries_out || !index_out || !bin_out) {
    throw std::runtime_error("write_dataset: cannot open output files under " + dir.string());
  }

  DatasetStats stats;
  stats.scene_count = static_cast<std::size_t>(scene_count);
  std::size_t ambiguous = 0;
  std::size_t byte_offset = 0;
  for (int id = 0; id < scene_count; ++id) {
    Scene scene = generate_scene(spec, static_cast<std::uint64_t>(id));
    char raster_name[64];
    std::snprintf(raster_name, sizeof(raster_name), "rasters/scene_%06d.ppm", id);
    const Image8 img = quantize_raster(scene.raster);
    write_ppm(dir / raster_name, img);
    scene.raster = raster_from_image(img);

    scenes_out << scene_to_json(scene, raster_name).dump() << "\n";

    const std::vector<Query> queries = derive_queries(scene);
    for (const Query& q : queries) {
      queries_out << query_to_json(q).dump() << "\n";
      auto count_category = [&](int cat) {
        int c = 0;
        for (const Entity& e : scene.entities) c += (e.category_id == cat);
        return c;
      };
      if (count_category(q.subject_category) > 1 || count_category(q.object_category) > 1) {
        ++ambiguous;
      }
    }
    stats.query_count += queries.size();

    const ScenePlanes planes(scene);
    const std::vector<Proposal> proposals = generate_proposals(
        scene, spec, mix_seed(spec.seed, static_cast<std::uint64_t>(id), kProposalSeedSalt),
        planes, features.grid);
    std::string buf;
    buf.reserve(proposals.size() * proposal_record_floats(features.grid) * sizeof(float));
    for (const Proposal& p : proposals) {
      append_f32(buf, p.box.x_min);
      append_f32(buf, p.box.y_min);
      append_f32(buf, p.box.x_max);
      append_f32(buf, p.box.y_max);
      for (double v : p.spatial_feature) append_f32(buf, v);
      for (double v : p.feature_vector.data) append_f32(buf, v);
      for (double v : p.feature_map.data) append_f32(buf, v);
    }
    bin_out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    index_out << json{{"scene_id", id}, {"offset", byte_offset}, {"count", proposals.size()}}
                     .dump()
              << "\n";
    byte_offset += buf.size();
  }

  stats.ambiguity_rate =
      stats.query_count == 0 ? 0.0 : static_cast<double>(ambiguous) / stats.query_count;

  json spec_file = spec_to_json(spec);
  spec_file["feature_grid"] = features.grid;
  spec_file["feature_channels"] = kMapChannels;
  spec_file["scene_count"] = scene_count;
  write_file_atomic(dir / "spec.json", spec_file.dump(2) + "\n");
  write_file_atomic(dir / "stats.json",
                    json{{"scene_count", stats.scene_count},
                         {"query_count", stats.query_count},
                         {"ambiguity_rate", stats.ambiguity_rate}}
                            .dump(2) +
                        "\n");
  return stats;
}

// Loads the full dataset. Feature maps are skipped unless with_maps is set
// (the training pipeline refetches maps from rasters for the boxes it needs,
// so the bulk of the sidecar is usually left on disk).
inline LoadedDataset load_dataset(const std::filesystem::path& dir, bool with_maps = false) {
  LoadedDataset ds;
  {
    std::ifstream in(dir / "spec.json");
    if (!in) throw std::runtime_error("load_dataset: missing spec.json in " + dir.string());
    json j = json::parse(in);
    ds.spec = spec_from_json(j);
    ds.features.grid = j.at("feature_grid").get<int>();
    if (j.at("feature_channels").get<int>() != kMapChannels) {
      throw std::runtime_error("load_dataset: unsupported feature channel count");
    }
    ds.scenes.resize(j.at("scene_count").get<std::size_t>());
  }
  {
    std::ifstream in(dir / "scenes.jsonl");
    if (!in) throw std::runtime_error("load_dataset: missing scenes.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      Scene scene = scene_from_json(j);
      const Image8 img = read_ppm(dir / j.at("raster").get<std::string>());
      scene.raster = raster_from_image(img);
      const auto id = static_cast<std::size_t>(scene.id);
      if (id >= ds.scenes.size()) throw std::runtime_error("load_dataset: scene id out of range");
      ds.scenes[id].scene = std::move(scene);
    }
  }
  {
    std::ifstream in(dir / "queries.jsonl");
    if (!in) throw std::runtime_error("load_dataset: missing queries.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Query q = query_from_json(json::parse(line));
      ds.scenes.at(static_cast<std::size_t>(q.scene_id)).queries.push_back(std::move(q));
    }
  }
  {
    std::ifstream idx(dir / "proposals.idx.jsonl");
    std::ifstream bin(dir / "proposals.bin", std::ios::binary);
    if (!idx || !bin) throw std::runtime_error("load_dataset: missing proposal files");
    const int grid = ds.features.grid;
    const std::size_t rec_floats = proposal_record_floats(grid);
    std::string line;
    std::vector<char> rec(rec_floats * sizeof(float));
    while (std::getline(idx, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      const auto scene_id = j.at("scene_id").get<std::size_t>();
      const auto offset = j.at("offset").get<std::uint64_t>();
      const auto count = j.at("count").get<std::size_t>();
      bin.seekg(static_cast<std::streamoff>(offset));
      SceneData& sd = ds.scenes.at(scene_id);
      sd.proposals.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        bin.read(rec.data(), static_cast<std::streamsize>(rec.size()));
        if (!bin) throw std::runtime_error("load_dataset: truncated proposals.bin");
        Proposal p;
        const char* cur = rec.data();
        double vals[4];
        for (double& v : vals) {
          v = read_f32(cur);
          cur += sizeof(float);
        }
        p.box = {vals[0], vals[1], vals[2], vals[3]};
        for (double& v : p.spatial_feature) {
          v = read_f32(cur);
          cur += sizeof(float);
        }
        p.feature_vector = Tensor({static_cast<std::size_t>(kMapChannels)});
        for (double& v : p.feature_vector.data) {
          v = read_f32(cur);
          cur += sizeof(float);
        }
        if (with_maps) {
          p.feature_map = Tensor({static_cast<std::size_t>(grid), static_cast<std::size_t>(grid),
                                  static_cast<std::size_t>(kMapChannels)});
          for (double& v : p.feature_map.data) {
            v = read_f32(cur);
            cur += sizeof(float);
          }
        }
        sd.proposals.push_back(std::move(p));
      }
    }
  }
  return ds;
}

}  // namespace cparr
