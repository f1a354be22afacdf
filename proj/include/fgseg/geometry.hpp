#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fgseg/tensor.hpp"

namespace fgseg {

struct Point3 {
  Real x = 0, y = 0, z = 0;

  Real operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  Real& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend Point3 operator+(Point3 a, Point3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Point3 operator-(Point3 a, Point3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Point3 operator*(Real s, Point3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Point3&, const Point3&) = default;
};

inline Real dot(Point3 a, Point3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Real squared_distance(Point3 a, Point3 b) { return dot(a - b, a - b); }

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point coordinates with optional per-point part labels.
struct PointCloud {
  std::vector<Point3> points;
  std::optional<std::vector<int>> labels;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return labels.has_value(); }
  /// Throws if labels are present with the wrong length.
  void validate() const;
};

struct Aabb {
  Point3 min;
  Point3 max;

  Real diagonal() const { return std::sqrt(squared_distance(min, max)); }
};

Aabb aabb_of(std::span<const Point3> points);
/// Both boxes are inflated by `epsilon` on every side before the overlap test.
bool aabb_intersect(const Aabb& a, const Aabb& b, Real epsilon);

/// Integer grid coordinate of a partition cell.
struct Cell {
  int i = 0, j = 0, k = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct CellMembers {
  Cell cell;
  std::vector<std::size_t> members;  // indices into the partitioned cloud, ascending
};

/// One resampled partition block.
struct Block {
  Cell cell;
  Point3 center;      // geometric center of the cell
  Real cell_size = 0;
  std::vector<Point3> points;             // exactly D entries after resampling
  std::vector<int> labels;                // empty when the parent cloud is unlabeled
  std::vector<std::size_t> source_indices;  // parent-cloud index of each sampled point
  std::vector<std::size_t> members;       // every parent-cloud point in the cell

  /// Coordinates relative to the cell center, scaled so the cell spans [-0.5, 0.5]^3.
  std::vector<Point3> local_points() const;
};

/// Maps the tight bounding box into [0,1]^3: the longest axis spans [0,1] and
/// the others are centered. A degenerate cloud collapses to the cube center.
PointCloud normalize_cloud(const PointCloud& cloud);

/// Greedy farthest point sampling; ties go to the lowest index.
std::vector<std::size_t> fps(std::span<const Point3> points, std::size_t count, std::size_t start);

/// Uniform grid partition of a cloud in [0,1]^3. Empty cells are omitted;
/// output is sorted by cell.
std::vector<CellMembers> partition(const PointCloud& cloud, int resolution);

/// Resamples one cell to exactly `target` points. Large cells are reduced by
/// FPS from the point nearest the centroid; small cells keep every point (in
/// FPS order) and are padded with seeded random repeats.
Block resample_block(const PointCloud& cloud, const CellMembers& cell, int resolution,
                     std::size_t target, std::uint64_t seed);

/// Median distance from each point to its nearest distinct neighbor.
Real median_nn_spacing(std::span<const Point3> points);

/// Deterministic per-cell seed derived from a run seed.
std::uint64_t cell_seed(std::uint64_t seed, const Cell& cell);

}  // namespace fgseg
