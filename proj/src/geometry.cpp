#include "fgseg/geometry.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <unordered_map>

namespace fgseg {

void PointCloud::validate() const {
  if (labels && labels->size() != points.size()) {
    throw GeometryError("label count " + std::to_string(labels->size()) +
                        " does not match point count " + std::to_string(points.size()));
  }
}

Aabb aabb_of(std::span<const Point3> points) {
  if (points.empty()) throw GeometryError("aabb_of: empty point list");
  Aabb box{points[0], points[0]};
  for (const auto& p : points) {
    for (int a = 0; a < 3; ++a) {
      box.min[a] = std::min(box.min[a], p[a]);
      box.max[a] = std::max(box.max[a], p[a]);
    }
  }
  return box;
}

bool aabb_intersect(const Aabb& a, const Aabb& b, Real epsilon) {
  for (int axis = 0; axis < 3; ++axis) {
    if (a.max[axis] + epsilon < b.min[axis] - epsilon) return false;
    if (b.max[axis] + epsilon < a.min[axis] - epsilon) return false;
  }
  return true;
}

std::vector<Point3> Block::local_points() const {
  std::vector<Point3> out;
  out.reserve(points.size());
  const Real inv = cell_size > 0 ? 1.0 / cell_size : 1.0;
  for (const auto& p : points) out.push_back(inv * (p - center));
  return out;
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.points.empty()) throw GeometryError("normalize_cloud: empty cloud");
  cloud.validate();
  const Aabb box = aabb_of(cloud.points);
  Real extent = 0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, box.max[a] - box.min[a]);

  PointCloud out;
  out.labels = cloud.labels;
  out.points.reserve(cloud.size());
  if (!(extent > 0)) {
    out.points.assign(cloud.size(), Point3{0.5, 0.5, 0.5});
    return out;
  }
  Point3 offset;
  for (int a = 0; a < 3; ++a) offset[a] = 0.5 * (1.0 - (box.max[a] - box.min[a]) / extent);
  for (const auto& p : cloud.points) {
    Point3 q;
    for (int a = 0; a < 3; ++a) q[a] = std::clamp(offset[a] + (p[a] - box.min[a]) / extent, 0.0, 1.0);
    out.points.push_back(q);
  }
  return out;
}

std::vector<std::size_t> fps(std::span<const Point3> points, std::size_t count, std::size_t start) {
  const std::size_t n = points.size();
  if (count > n) {
    throw GeometryError("fps: requested " + std::to_string(count) + " of " + std::to_string(n) + " points");
  }
  if (count == 0) return {};
  if (start >= n) throw GeometryError("fps: start index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(count);
  std::vector<Real> min_d(n, std::numeric_limits<Real>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t current = start;
  for (;;) {
    selected.push_back(current);
    taken[current] = 1;
    if (selected.size() == count) break;
    std::size_t best = n;
    Real best_d = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(points[i], points[current]));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

std::vector<CellMembers> partition(const PointCloud& cloud, int resolution) {
  if (resolution <= 0) throw GeometryError("partition: resolution must be positive");
  std::map<Cell, std::vector<std::size_t>> cells;
  for (std::size_t idx = 0; idx < cloud.size(); ++idx) {
    const Point3& p = cloud.points[idx];
    int c[3];
    for (int a = 0; a < 3; ++a) {
      if (!(p[a] >= 0.0 && p[a] <= 1.0)) {
        throw GeometryError("partition: point " + std::to_string(idx) + " lies outside [0,1]^3");
      }
      c[a] = std::min(static_cast<int>(std::floor(p[a] * resolution)), resolution - 1);
    }
    cells[Cell{c[0], c[1], c[2]}].push_back(idx);
  }
  std::vector<CellMembers> out;
  out.reserve(cells.size());
  for (auto& [cell, members] : cells) out.push_back({cell, std::move(members)});
  return out;
}

std::uint64_t cell_seed(std::uint64_t seed, const Cell& cell) {
  // splitmix64 over the packed cell coordinates
  std::uint64_t z = seed ^ (static_cast<std::uint64_t>(cell.i) * 0x9E3779B97F4A7C15ULL) ^
                    (static_cast<std::uint64_t>(cell.j) << 21) ^ (static_cast<std::uint64_t>(cell.k) << 42);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Block resample_block(const PointCloud& cloud, const CellMembers& cell, int resolution,
                     std::size_t target, std::uint64_t seed) {
  if (cell.members.empty()) throw GeometryError("resample_block: empty cell");
  if (target == 0) throw GeometryError("resample_block: target size must be positive");
  cloud.validate();

  Block block;
  block.cell = cell.cell;
  block.cell_size = 1.0 / resolution;
  block.center = Point3{(cell.cell.i + 0.5) * block.cell_size, (cell.cell.j + 0.5) * block.cell_size,
                        (cell.cell.k + 0.5) * block.cell_size};
  block.members = cell.members;

  std::vector<Point3> pts;
  pts.reserve(cell.members.size());
  Point3 centroid;
  for (auto idx : cell.members) {
    if (idx >= cloud.size()) throw GeometryError("resample_block: member index out of range");
    pts.push_back(cloud.points[idx]);
    centroid = centroid + cloud.points[idx];
  }
  centroid = (1.0 / static_cast<Real>(pts.size())) * centroid;
  std::size_t start = 0;
  Real best = std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Real d = squared_distance(pts[i], centroid);
    if (d < best) {
      best = d;
      start = i;
    }
  }

  std::vector<std::size_t> order = fps(pts, std::min(target, pts.size()), start);
  if (order.size() < target) {
    std::mt19937_64 rng(cell_seed(seed, cell.cell));
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    while (order.size() < target) order.push_back(pick(rng));
  }

  block.points.reserve(target);
  block.source_indices.reserve(target);
  for (auto local : order) {
    const std::size_t src = cell.members[local];
    block.points.push_back(cloud.points[src]);
    block.source_indices.push_back(src);
    if (cloud.labels) block.labels.push_back((*cloud.labels)[src]);
  }
  return block;
}

namespace {

struct GridIndex {
  Real h = 1;
  Point3 origin;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;

  static std::uint64_t key(long i, long j, long k) {
    return (static_cast<std::uint64_t>(i & 0x1FFFFF) << 42) | (static_cast<std::uint64_t>(j & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>(k & 0x1FFFFF);
  }
  long coord(Real v, int axis) const { return static_cast<long>(std::floor((v - origin[axis]) / h)); }
};

}  // namespace

Real median_nn_spacing(std::span<const Point3> points) {
  const std::size_t n = points.size();
  if (n < 2) return 0.0;
  const Aabb box = aabb_of(points);
  Real extent = 0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, box.max[a] - box.min[a]);
  if (!(extent > 0)) return 0.0;

  GridIndex grid;
  grid.origin = box.min;
  // surface samples: roughly sqrt(n) cells per axis keeps buckets small
  grid.h = extent / std::max<Real>(1.0, std::ceil(std::sqrt(static_cast<Real>(n))));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = points[i];
    grid.buckets[GridIndex::key(grid.coord(p.x, 0), grid.coord(p.y, 1), grid.coord(p.z, 2))].push_back(i);
  }

  std::vector<Real> nn(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = points[i];
    const long ci = grid.coord(p.x, 0), cj = grid.coord(p.y, 1), ck = grid.coord(p.z, 2);
    Real best = std::numeric_limits<Real>::infinity();
    for (long ring = 0;; ++ring) {
      for (long di = -ring; di <= ring; ++di) {
        for (long dj = -ring; dj <= ring; ++dj) {
          for (long dk = -ring; dk <= ring; ++dk) {
            if (std::max({std::labs(di), std::labs(dj), std::labs(dk)}) != ring) continue;
            auto it = grid.buckets.find(GridIndex::key(ci + di, cj + dj, ck + dk));
            if (it == grid.buckets.end()) continue;
            for (auto j : it->second) {
              if (j != i) best = std::min(best, squared_distance(p, points[j]));
            }
          }
        }
      }
      // every unvisited point is at least ring*h away
      const Real reach = static_cast<Real>(ring) * grid.h;
      if (best < std::numeric_limits<Real>::infinity() && best <= reach * reach) break;
      if (static_cast<Real>(ring) * grid.h > 2.0 * extent) break;
    }
    nn[i] = std::sqrt(best);
  }
  auto mid = nn.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(nn.begin(), mid, nn.end());
  return *mid;
}

}  // namespace fgseg
