#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fgseg/geometry.hpp"

namespace fgseg {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeFamily { Single, Ladder, Fence, LatticeTable, SlattedChair, SpokeWheel };

std::string_view family_name(ShapeFamily f);
ShapeFamily parse_family(std::string_view name);
/// The multi-part families used by default datasets.
std::vector<ShapeFamily> default_families();

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::Ladder;
  int min_parts = 4;
  int max_parts = 40;
  std::size_t points_total = 20000;
  std::uint64_t seed = 0;
};

struct LabeledCloud {
  PointCloud cloud;  // labels always present
  int part_count = 0;
};

/// Fraction of a shape's diagonal below which a part counts as small.
inline constexpr Real kSmallPartFraction = 0.15;

/// Procedurally assembles boxes, cylinders and spheres into one connected
/// object; every primitive is one part. Output is normalized to [0,1]^3.
LabeledCloud generate_shape(const ShapeSpec& spec);

/// Number of parts whose AABB diagonal is below `fraction` of the shape diagonal.
std::size_t count_small_parts(const LabeledCloud& shape, Real fraction = kSmallPartFraction);

// ---- files ---------------------------------------------------------------

/// Reads `x y z [label]` text (.xyz / .txt). Labels are all-or-nothing.
PointCloud read_cloud(const std::filesystem::path& path);
/// Writes .xyz/.txt text with 17 significant digits, or ASCII .ply with part colors.
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
/// ASCII PLY colored by `part_ids` (palette index = id mod 64).
void export_ply(const std::filesystem::path& path, const PointCloud& cloud, const std::vector<int>& part_ids);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  ShapeFamily family = ShapeFamily::Ladder;
  int part_count = 0;
  bool train = true;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.path; }
  std::vector<ManifestEntry> split(bool train) const;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
Manifest read_manifest(const std::filesystem::path& path);

struct DatasetConfig {
  std::vector<ShapeFamily> families = default_families();
  std::size_t shapes_per_family = 40;
  std::size_t points_total = 20000;
  int min_parts = 4;
  int max_parts = 40;
  Real train_fraction = 0.8;
  std::uint64_t seed = 1;
};

/// Generates the shapes, writes them under `out_dir/shapes/` and the manifest
/// to `out_dir/manifest.tsv`. Returns the manifest.
Manifest make_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

}  // namespace fgseg
