#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cparr/geometry.hpp"
#include "cparr/rng.hpp"
#include "cparr/scene.hpp"
#include "cparr/tensor.hpp"

namespace cparr {

// Feature map channel plan (fixed): r, g, b, normalized image x, normalized
// image y, edge magnitude, foreground mask, shape-kind code.
inline constexpr int kMapChannels = 8;

struct FeatureConfig {
  int grid = 7;  // feature maps are grid x grid x kMapChannels
};

struct Proposal {
  Box box;
  Tensor feature_vector;                 // {kMapChannels}
  std::array<double, 5> spatial_feature{};  // spatial_feature_of(box)
  Tensor feature_map;                    // {grid, grid, kMapChannels}; may be empty when unloaded
};

// Per-scene channel planes; region featurization samples these. Built either
// from a freshly rendered scene or from a quantized raster reloaded from disk
// (both paths are deterministic for identical bytes).
class ScenePlanes {
 public:
  ScenePlanes(const Raster& raster, const std::vector<Entity>& entities)
      : width_(raster.width), height_(raster.height) {
    const std::size_t n = static_cast<std::size_t>(width_) * height_;
    for (auto* plane : {&red_, &green_, &blue_, &edge_, &foreground_, &shape_code_}) {
      plane->assign(n, 0.0);
    }
    std::vector<double> luma(n, 0.0);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
        red_[i] = raster.at(y, x, 0);
        green_[i] = raster.at(y, x, 1);
        blue_[i] = raster.at(y, x, 2);
        luma[i] = 0.299 * red_[i] + 0.587 * green_[i] + 0.114 * blue_[i];
        const int top = topmost_entity_at(entities, x + 0.5, y + 0.5);
        if (top >= 0) {
          foreground_[i] = 1.0;
          shape_code_[i] =
              (static_cast<double>(entities[static_cast<std::size_t>(top)].shape_kind) + 1.0) / 3.0;
        }
      }
    }
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const auto sample = [&](int yy, int xx) {
          yy = std::clamp(yy, 0, height_ - 1);
          xx = std::clamp(xx, 0, width_ - 1);
          return luma[static_cast<std::size_t>(yy) * width_ + xx];
        };
        const double gx = 0.5 * (sample(y, x + 1) - sample(y, x - 1));
        const double gy = 0.5 * (sample(y + 1, x) - sample(y - 1, x));
        edge_[static_cast<std::size_t>(y) * width_ + x] = std::min(1.0, std::sqrt(gx * gx + gy * gy));
      }
    }
  }

  explicit ScenePlanes(const Scene& scene) : ScenePlanes(scene.raster, scene.entities) {}

  int width() const { return width_; }
  int height() const { return height_; }

  // Crops the region to a grid x grid map by nearest-pixel sampling at cell
  // centers. The x/y channels carry image-normalized coordinates of each
  // sample point, so maps retain absolute position and scale.
  void featurize(const Box& box, int grid, Tensor& map_out, Tensor& vec_out) const {
    const Box b = clip_region(box);
    map_out = Tensor({static_cast<std::size_t>(grid), static_cast<std::size_t>(grid),
                      static_cast<std::size_t>(kMapChannels)});
    vec_out = Tensor({static_cast<std::size_t>(kMapChannels)});
    const double bw = b.width(), bh = b.height();
    for (int gy = 0; gy < grid; ++gy) {
      const double sy = b.y_min + (gy + 0.5) * bh / grid;
      const int py = std::clamp(static_cast<int>(std::floor(sy)), 0, height_ - 1);
      for (int gx = 0; gx < grid; ++gx) {
        const double sx = b.x_min + (gx + 0.5) * bw / grid;
        const int px = std::clamp(static_cast<int>(std::floor(sx)), 0, width_ - 1);
        const std::size_t i = static_cast<std::size_t>(py) * width_ + px;
        double* cell = &map_out.data[(static_cast<std::size_t>(gy) * grid + gx) * kMapChannels];
        cell[0] = red_[i];
        cell[1] = green_[i];
        cell[2] = blue_[i];
        cell[3] = sx / width_;
        cell[4] = sy / height_;
        cell[5] = edge_[i];
        cell[6] = foreground_[i];
        cell[7] = shape_code_[i];
        for (int c = 0; c < kMapChannels; ++c) vec_out.data[static_cast<std::size_t>(c)] += cell[c];
      }
    }
    const double inv = 1.0 / (static_cast<double>(grid) * grid);
    for (double& v : vec_out.data) v *= inv;
  }

  Proposal featurize_proposal(const Box& box, int grid) const {
    Proposal p;
    p.box = box;
    p.spatial_feature = spatial_feature_of(box, width_, height_);
    featurize(box, grid, p.feature_map, p.feature_vector);
    return p;
  }

 private:
  Box clip_region(const Box& box) const {
    Box b;
    b.x_min = std::clamp(box.x_min, 0.0, static_cast<double>(width_));
    b.y_min = std::clamp(box.y_min, 0.0, static_cast<double>(height_));
    b.x_max = std::clamp(box.x_max, 0.0, static_cast<double>(width_));
    b.y_max = std::clamp(box.y_max, 0.0, static_cast<double>(height_));
    if (b.width() <= 0.0 || b.height() <= 0.0) {
      throw std::invalid_argument("featurize: degenerate region after clipping");
    }
    return b;
  }

  int width_;
  int height_;
  std::vector<double> red_, green_, blue_, edge_, foreground_, shape_code_;
};

// Convenience form of region featurization for one-off calls.
inline std::pair<Tensor, Tensor> featurize_region(const Scene& scene, const Box& box, int grid) {
  ScenePlanes planes(scene);
  Tensor map, vec;
  planes.featurize(box, grid, map, vec);
  return {std::move(map), std::move(vec)};
}

// ---------------------------------------------------------------------------
// Proposal generation (RPN substitute)
// ---------------------------------------------------------------------------

inline constexpr int kJitteredCopiesPerEntity = 3;
inline constexpr double kRandomProposalMinAreaFraction = 0.01;
inline constexpr double kRandomProposalMaxAreaFraction = 0.60;

// N proposals per scene: a few jittered copies of every entity box (each
// coordinate perturbed by up to jitter_fraction of the matching side, then
// clipped) plus random boxes spanning 1%..60% of the image area. Order is a
// seeded shuffle.
inline std::vector<Proposal> generate_proposals(const Scene& scene, const DatasetSpec& spec,
                                                std::uint64_t rng_seed, const ScenePlanes& planes,
                                                int grid) {
  spec.validate();
  const int n = spec.proposal_count;
  const int entity_count = static_cast<int>(scene.entities.size());
  if (n < entity_count) throw std::invalid_argument("generate_proposals: N below entity count");
  const double w = spec.image_width, h = spec.image_height;
  Rng rng(rng_seed);

  std::vector<Box> boxes;
  boxes.reserve(static_cast<std::size_t>(n));
  const int copies = std::max(1, std::min(kJitteredCopiesPerEntity,
                                          entity_count > 0 ? n / entity_count : n));
  for (const Entity& e : scene.entities) {
    for (int c = 0; c < copies && static_cast<int>(boxes.size()) < n; ++c) {
      const double jx = spec.jitter_fraction * e.box.width();
      const double jy = spec.jitter_fraction * e.box.height();
      Box b{e.box.x_min + rng.uniform(-jx, jx), e.box.y_min + rng.uniform(-jy, jy),
            e.box.x_max + rng.uniform(-jx, jx), e.box.y_max + rng.uniform(-jy, jy)};
      boxes.push_back(clip_box(b, w, h));
    }
  }
  while (static_cast<int>(boxes.size()) < n) {
    const double area =
        rng.uniform(kRandomProposalMinAreaFraction, kRandomProposalMaxAreaFraction) * w * h;
    const double aspect = rng.uniform(0.5, 2.0);
    double bw = std::sqrt(area * aspect);
    double bh = area / bw;
    bw = std::clamp(bw, 4.0, w);
    bh = std::clamp(bh, 4.0, h);
    const double x0 = rng.uniform(0.0, w - bw);
    const double y0 = rng.uniform(0.0, h - bh);
    boxes.push_back({x0, y0, x0 + bw, y0 + bh});
  }
  rng.shuffle(boxes);

  std::vector<Proposal> proposals;
  proposals.reserve(boxes.size());
  for (const Box& b : boxes) proposals.push_back(planes.featurize_proposal(b, grid));
  return proposals;
}

inline std::vector<Proposal> generate_proposals(const Scene& scene, const DatasetSpec& spec,
                                                std::uint64_t rng_seed, int grid) {
  ScenePlanes planes(scene);
  return generate_proposals(scene, spec, rng_seed, planes, grid);
}

// ---------------------------------------------------------------------------
// Phrase embedding table (learned; GloVe substitute)
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  Tensor table;  // {vocabulary, dim}

  static EmbeddingTable init(std::size_t vocabulary, std::size_t dim, Rng& rng) {
    EmbeddingTable t;
    t.table = Tensor({vocabulary, dim});
    for (double& v : t.table.data) v = rng.uniform(-0.5, 0.5);
    return t;
  }

  std::size_t vocabulary() const { return table.shape[0]; }
  std::size_t dim() const { return table.shape[1]; }

  const double* row(int category_id) const {
    if (category_id < 0 || static_cast<std::size_t>(category_id) >= vocabulary()) {
      throw std::out_of_range("embed_phrase: category out of vocabulary");
    }
    return &table.data[static_cast<std::size_t>(category_id) * dim()];
  }
};

inline Tensor embed_phrase(int category_id, const EmbeddingTable& table) {
  const double* r = table.row(category_id);
  Tensor out({table.dim()});
  std::copy(r, r + table.dim(), out.data.begin());
  return out;
}

}  // namespace cparr
