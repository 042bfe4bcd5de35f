#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/geometry.hpp"
#include "cparr/rng.hpp"
#include "cparr/tensor.hpp"

namespace cparr {

// ---------------------------------------------------------------------------
// Dataset configuration and scene types
// ---------------------------------------------------------------------------

struct DatasetSpec {
  int image_width = 96;
  int image_height = 96;
  int num_object_categories = 6;
  int num_predicates = 5;
  int entities_per_scene_min = 2;
  int entities_per_scene_max = 5;
  int proposal_count = 48;
  double jitter_fraction = 0.10;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_width <= 0 || image_height <= 0) {
      throw std::invalid_argument("DatasetSpec: image dims must be positive");
    }
    if (num_predicates < 1) throw std::invalid_argument("DatasetSpec: num_predicates >= 1");
    if (num_object_categories < 1) {
      throw std::invalid_argument("DatasetSpec: num_object_categories >= 1");
    }
    if (entities_per_scene_min < 1 || entities_per_scene_max < entities_per_scene_min) {
      throw std::invalid_argument("DatasetSpec: invalid entities_per_scene range");
    }
    if (proposal_count < entities_per_scene_max) {
      throw std::invalid_argument("DatasetSpec: proposal_count must cover entities_per_scene_max");
    }
    if (jitter_fraction < 0.0 || jitter_fraction > 1.0) {
      throw std::invalid_argument("DatasetSpec: jitter_fraction in [0,1]");
    }
  }
};

enum class ShapeKind { kRectangle = 0, kEllipse = 1, kTriangle = 2 };

inline const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "rectangle";
}

inline ShapeKind shape_kind_from_name(const std::string& s) {
  if (s == "rectangle") return ShapeKind::kRectangle;
  if (s == "ellipse") return ShapeKind::kEllipse;
  if (s == "triangle") return ShapeKind::kTriangle;
  throw std::invalid_argument("unknown shape kind: " + s);
}

struct Entity {
  int category_id = 0;
  Box box;
  std::array<double, 3> color{0.0, 0.0, 0.0};
  ShapeKind shape_kind = ShapeKind::kRectangle;
};

struct Relation {
  int subject = 0;
  int predicate = 0;
  int object = 0;

  bool operator==(const Relation&) const = default;
};

// Rendered image, row-major H x W x 3, values in [0,1].
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct Scene {
  std::int64_t id = 0;
  std::vector<Entity> entities;
  std::vector<Relation> relations;
  Raster raster;
};

struct Query {
  std::int64_t scene_id = 0;
  int subject_category = 0;
  int predicate_id = 0;
  int object_category = 0;
  std::vector<Box> gt_subject_boxes;
  std::vector<Box> gt_object_boxes;
};

// ---------------------------------------------------------------------------
// Predicate rules (crisp geometric ground truth)
// ---------------------------------------------------------------------------

struct PredicateRule {
  const char* name;
  bool (*holds)(const Box& s, const Box& o, double image_w, double image_h);
};

namespace rules {
inline bool left_of(const Box& s, const Box& o, double, double) {
  return s.center_x() < o.center_x() - 10.0;
}
inline bool above(const Box& s, const Box& o, double, double) {
  return s.center_y() < o.center_y() - 10.0;
}
inline bool inside(const Box& s, const Box& o, double, double) {
  return s.x_min > o.x_min && s.y_min > o.y_min && s.x_max < o.x_max && s.y_max < o.y_max;
}
inline bool near(const Box& s, const Box& o, double w, double h) {
  const double dx = s.center_x() - o.center_x();
  const double dy = s.center_y() - o.center_y();
  return std::sqrt(dx * dx + dy * dy) < 0.25 * std::sqrt(w * w + h * h);
}
inline bool larger_than(const Box& s, const Box& o, double, double) {
  return s.area() > 1.5 * o.area();
}
inline bool right_of(const Box& s, const Box& o, double, double) {
  return s.center_x() > o.center_x() + 10.0;
}
inline bool below(const Box& s, const Box& o, double, double) {
  return s.center_y() > o.center_y() + 10.0;
}
inline bool overlaps(const Box& s, const Box& o, double, double) {
  return box_iou(s, o) > 0.10;
}
inline bool smaller_than(const Box& s, const Box& o, double, double) {
  return 1.5 * s.area() < o.area();
}
inline bool taller_than(const Box& s, const Box& o, double, double) {
  return s.height() > 1.2 * o.height();
}
}  // namespace rules

inline const std::vector<PredicateRule>& predicate_rules() {
  static const std::vector<PredicateRule> kRules = {
      {"left_of", &rules::left_of},       {"above", &rules::above},
      {"inside", &rules::inside},         {"near", &rules::near},
      {"larger_than", &rules::larger_than}, {"right_of", &rules::right_of},
      {"below", &rules::below},           {"overlaps", &rules::overlaps},
      {"smaller_than", &rules::smaller_than}, {"taller_than", &rules::taller_than},
  };
  return kRules;
}

inline const char* predicate_name(int predicate_id) {
  return predicate_rules().at(static_cast<std::size_t>(predicate_id)).name;
}

// Exhaustive relation set over all ordered entity pairs under the first
// num_predicates rules. Self-relations are excluded.
inline std::vector<Relation> derive_relations(const std::vector<Entity>& entities,
                                              double image_w, double image_h,
                                              int num_predicates) {
  if (num_predicates > static_cast<int>(predicate_rules().size())) {
    throw std::invalid_argument("num_predicates exceeds available predicate rules");
  }
  std::vector<Relation> out;
  for (int i = 0; i < static_cast<int>(entities.size()); ++i) {
    for (int j = 0; j < static_cast<int>(entities.size()); ++j) {
      if (i == j) continue;
      for (int p = 0; p < num_predicates; ++p) {
        if (predicate_rules()[static_cast<std::size_t>(p)].holds(entities[i].box, entities[j].box,
                                                                 image_w, image_h)) {
          out.push_back({i, p, j});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline constexpr double kBackgroundGray = 0.08;

inline bool shape_covers(const Entity& e, double px, double py) {
  const Box& b = e.box;
  if (px < b.x_min || px > b.x_max || py < b.y_min || py > b.y_max) return false;
  switch (e.shape_kind) {
    case ShapeKind::kRectangle:
      return true;
    case ShapeKind::kEllipse: {
      const double nx = (px - b.center_x()) / (0.5 * b.width());
      const double ny = (py - b.center_y()) / (0.5 * b.height());
      return nx * nx + ny * ny <= 1.0;
    }
    case ShapeKind::kTriangle: {
      // Upward triangle: apex at top-center, base along the bottom edge.
      const double v = (py - b.y_min) / b.height();  // 0 at apex row, 1 at base
      const double half = 0.5 * v * b.width();
      return std::abs(px - b.center_x()) <= half;
    }
  }
  return false;
}

// Index of the topmost entity covering the pixel center, or -1.
inline int topmost_entity_at(const std::vector<Entity>& entities, double px, double py) {
  for (int i = static_cast<int>(entities.size()) - 1; i >= 0; --i) {
    if (shape_covers(entities[static_cast<std::size_t>(i)], px, py)) return i;
  }
  return -1;
}

inline Raster render_scene(const std::vector<Entity>& entities, int width, int height) {
  Raster r;
  r.width = width;
  r.height = height;
  r.rgb.assign(static_cast<std::size_t>(width) * height * 3, kBackgroundGray);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int idx = topmost_entity_at(entities, x + 0.5, y + 0.5);
      if (idx < 0) continue;
      const Entity& e = entities[static_cast<std::size_t>(idx)];
      for (int c = 0; c < 3; ++c) r.at(y, x, c) = e.color[static_cast<std::size_t>(c)];
    }
  }
  return r;
}

// Category appearance: shape kind cycles with the category, colors come from
// a golden-angle hue wheel so arbitrary category counts stay distinguishable.
inline std::array<double, 3> category_base_color(int category_id) {
  const double hue = std::fmod(0.61803398875 * category_id + 0.15, 1.0);
  const double s = 0.75, v = 0.95;
  const double hh = hue * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline ShapeKind category_shape_kind(int category_id) {
  return static_cast<ShapeKind>(category_id % 3);
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

inline constexpr double kMinEntitySide = 20.0;
inline constexpr double kMaxEntityOverlapIou = 0.7;
inline constexpr int kMaxSceneRegenerations = 100;

namespace detail {

inline bool try_place_entities(const DatasetSpec& spec, Rng& rng, std::vector<Entity>& out) {
  const double w = spec.image_width, h = spec.image_height;
  const double max_side = std::max(kMinEntitySide + 1.0, 0.45 * std::min(w, h));
  const int count = rng.integer(spec.entities_per_scene_min, spec.entities_per_scene_max);
  out.clear();
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      Entity e;
      // Repeating an already present category keeps ambiguous queries common.
      if (!out.empty() && rng.chance(0.35)) {
        e.category_id = out[rng.index(out.size())].category_id;
      } else {
        e.category_id = rng.integer(0, spec.num_object_categories - 1);
      }
      e.shape_kind = category_shape_kind(e.category_id);
      const auto base = category_base_color(e.category_id);
      for (int c = 0; c < 3; ++c) {
        e.color[static_cast<std::size_t>(c)] =
            std::clamp(base[static_cast<std::size_t>(c)] + rng.uniform(-0.06, 0.06), 0.0, 1.0);
      }

      // Occasionally nest the entity inside a previously placed one so the
      // containment predicate has support in the data.
      int host = -1;
      if (!out.empty() && rng.chance(0.2)) {
        const int cand = static_cast<int>(rng.index(out.size()));
        const Box& hb = out[static_cast<std::size_t>(cand)].box;
        if (std::min(hb.width(), hb.height()) >= kMinEntitySide / 0.78 + 4.0) host = cand;
      }
      if (host >= 0) {
        const Box& hb = out[static_cast<std::size_t>(host)].box;
        // Cap nested area below the occlusion bound relative to the host.
        const double cap = 0.78 * std::min(hb.width(), hb.height()) - 2.0;
        const double bw = rng.uniform(kMinEntitySide, cap);
        const double bh = rng.uniform(kMinEntitySide, cap);
        const double x0 = rng.uniform(hb.x_min + 1.0, hb.x_max - bw - 1.0);
        const double y0 = rng.uniform(hb.y_min + 1.0, hb.y_max - bh - 1.0);
        e.box = {x0, y0, x0 + bw, y0 + bh};
      } else {
        const double bw = rng.uniform(kMinEntitySide, max_side);
        const double bh = rng.uniform(kMinEntitySide, max_side);
        const double x0 = rng.uniform(0.0, w - bw);
        const double y0 = rng.uniform(0.0, h - bh);
        e.box = {x0, y0, x0 + bw, y0 + bh};
      }

      bool ok = true;
      for (const Entity& prev : out) {
        if (box_iou(prev.box, e.box) >= kMaxEntityOverlapIou) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out.push_back(e);
        placed = true;
      }
    }
    if (!placed) return false;
  }
  return true;
}

}  // namespace detail

// Deterministic per (spec, scene_seed). Placement failures regenerate the
// whole scene under an incremented sub-seed, up to kMaxSceneRegenerations.
inline Scene generate_scene(const DatasetSpec& spec, std::uint64_t scene_seed) {
  spec.validate();
  Scene scene;
  scene.id = static_cast<std::int64_t>(scene_seed);
  for (int regen = 0; regen < kMaxSceneRegenerations; ++regen) {
    Rng rng(mix_seed(spec.seed, scene_seed, static_cast<std::uint64_t>(regen)));
    if (!detail::try_place_entities(spec, rng, scene.entities)) continue;
    scene.relations = derive_relations(scene.entities, spec.image_width, spec.image_height,
                                       spec.num_predicates);
    scene.raster = render_scene(scene.entities, spec.image_width, spec.image_height);
    return scene;
  }
  throw std::runtime_error("generate_scene: placement failed after retries");
}

// One query per distinct (subject_category, predicate, object_category)
// triple present in the scene's relations; ground-truth box lists aggregate
// every participating entity instance, deduplicated per role.
inline std::vector<Query> derive_queries(const Scene& scene) {
  std::vector<Query> queries;
  auto find_query = [&](int s, int p, int o) -> Query* {
    for (Query& q : queries) {
      if (q.subject_category == s && q.predicate_id == p && q.object_category == o) return &q;
    }
    return nullptr;
  };
  std::vector<std::vector<int>> subject_entities, object_entities;
  for (const Relation& rel : scene.relations) {
    const int s_cat = scene.entities[static_cast<std::size_t>(rel.subject)].category_id;
    const int o_cat = scene.entities[static_cast<std::size_t>(rel.object)].category_id;
    Query* q = find_query(s_cat, rel.predicate, o_cat);
    std::size_t qi;
    if (q == nullptr) {
      Query nq;
      nq.scene_id = scene.id;
      nq.subject_category = s_cat;
      nq.predicate_id = rel.predicate;
      nq.object_category = o_cat;
      queries.push_back(nq);
      subject_entities.emplace_back();
      object_entities.emplace_back();
      qi = queries.size() - 1;
    } else {
      qi = static_cast<std::size_t>(q - queries.data());
    }
    auto add_unique = [](std::vector<int>& v, int e) {
      for (int x : v) {
        if (x == e) return;
      }
      v.push_back(e);
    };
    add_unique(subject_entities[qi], rel.subject);
    add_unique(object_entities[qi], rel.object);
  }
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    for (int e : subject_entities[qi]) {
      queries[qi].gt_subject_boxes.push_back(scene.entities[static_cast<std::size_t>(e)].box);
    }
    for (int e : object_entities[qi]) {
      queries[qi].gt_object_boxes.push_back(scene.entities[static_cast<std::size_t>(e)].box);
    }
  }
  // Stable report order independent of relation enumeration order.
  std::sort(queries.begin(), queries.end(), [](const Query& a, const Query& b) {
    if (a.subject_category != b.subject_category) return a.subject_category < b.subject_category;
    if (a.predicate_id != b.predicate_id) return a.predicate_id < b.predicate_id;
    return a.object_category < b.object_category;
  });
  return queries;
}

}  // namespace cparr
