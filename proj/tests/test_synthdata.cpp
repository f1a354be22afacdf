#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "fgseg/synthdata.hpp"

using namespace fgseg;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fgseg_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void check_label_contract(const LabeledCloud& s) {
  REQUIRE(s.cloud.labels);
  REQUIRE(s.cloud.labels->size() == s.cloud.size());
  std::set<int> seen(s.cloud.labels->begin(), s.cloud.labels->end());
  CHECK(static_cast<int>(seen.size()) == s.part_count);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == s.part_count - 1);
  for (const auto& p : s.cloud.points)
    for (int a = 0; a < 3; ++a) {
      CHECK(p[a] >= 0.0);
      CHECK(p[a] <= 1.0);
    }
}

}  // namespace

TEST_CASE("single-part spec") {
  ShapeSpec spec;
  spec.family = ShapeFamily::Single;
  spec.min_parts = spec.max_parts = 1;
  spec.points_total = 2000;
  const LabeledCloud s = generate_shape(spec);
  CHECK(s.part_count == 1);
  CHECK(s.cloud.size() == 2000);
  for (int l : *s.cloud.labels) CHECK(l == 0);
}

TEST_CASE("generation is deterministic and honors the part range") {
  for (auto fam : default_families()) {
    ShapeSpec spec;
    spec.family = fam;
    spec.points_total = 5000;
    spec.seed = 77;
    const LabeledCloud a = generate_shape(spec), b = generate_shape(spec);
    CHECK(a.cloud.points == b.cloud.points);
    CHECK(*a.cloud.labels == *b.cloud.labels);
    CHECK(a.part_count >= spec.min_parts);
    CHECK(a.part_count <= spec.max_parts);
    check_label_contract(a);
    CHECK(count_small_parts(a) * 5 >= static_cast<std::size_t>(a.part_count));
  }
}

TEST_CASE("infeasible specs") {
  ShapeSpec spec;
  spec.min_parts = 10;
  spec.max_parts = 5;
  CHECK_THROWS_AS(generate_shape(spec), DataError);
  spec.family = ShapeFamily::Ladder;
  spec.min_parts = spec.max_parts = 3;  // a ladder has two rails and at least two rungs
  CHECK_THROWS_AS(generate_shape(spec), DataError);
  CHECK_THROWS_AS(parse_family("teapot"), DataError);
}

TEST_CASE("ladder point shares follow surface area") {
  ShapeSpec spec;
  spec.family = ShapeFamily::Ladder;
  spec.min_parts = spec.max_parts = 10;
  spec.points_total = 20000;
  spec.seed = 3;
  const LabeledCloud s = generate_shape(spec);
  REQUIRE(s.part_count == 10);
  check_label_contract(s);

  // Recover each part's dimensions from its own points. Rails are axis-aligned
  // boxes; rungs are cylinders along x.
  std::vector<std::vector<Point3>> parts(10);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) parts[(*s.cloud.labels)[i]].push_back(s.cloud.points[i]);
  std::vector<double> area(10);
  std::size_t rails = 0;
  for (std::size_t k = 0; k < 10; ++k) {
    const Aabb b = aabb_of(parts[k]);
    const double wx = b.max.x - b.min.x, wy = b.max.y - b.min.y, wz = b.max.z - b.min.z;
    if (wy > 0.5) {
      ++rails;
      area[k] = 2 * (wx * wy + wy * wz + wz * wx);
    } else {
      const double r = 0.25 * (wy + wz);
      area[k] = 2 * std::numbers::pi * r * wx + 2 * std::numbers::pi * r * r;
    }
  }
  CHECK(rails == 2);
  double total = 0;
  for (double a : area) total += a;
  for (std::size_t k = 0; k < 10; ++k) {
    const double share = static_cast<double>(parts[k].size()) / static_cast<double>(s.cloud.size());
    const double expected = area[k] / total;
    INFO("part " << k << " share " << share << " expected " << expected);
    CHECK(std::abs(share - expected) <= 0.3 * expected);
  }
}

TEST_CASE("cloud files") {
  const auto dir = scratch_dir("clouds");
  ShapeSpec spec;
  spec.family = ShapeFamily::SpokeWheel;
  spec.points_total = 3000;
  const LabeledCloud s = generate_shape(spec);
  write_cloud(dir / "w.xyz", s.cloud);
  const PointCloud back = read_cloud(dir / "w.xyz");
  REQUIRE(back.size() == s.cloud.size());
  for (std::size_t i = 0; i < back.size(); ++i)
    for (int a = 0; a < 3; ++a) CHECK(std::abs(back.points[i][a] - s.cloud.points[i][a]) <= 1e-12);
  CHECK(*back.labels == *s.cloud.labels);

  std::ofstream(dir / "plain.txt") << "0 0 0\n1 2 3\n";
  const PointCloud plain = read_cloud(dir / "plain.txt");
  CHECK(plain.size() == 2);
  CHECK(!plain.has_labels());

  std::ofstream(dir / "bad.xyz") << "0 0 0\n1 2\n";
  try {
    read_cloud(dir / "bad.xyz");
    FAIL("expected a parse error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::ofstream(dir / "mixed.xyz") << "0 0 0 1\n1 2 3\n";
  CHECK_THROWS_AS(read_cloud(dir / "mixed.xyz"), DataError);
  std::ofstream(dir / "nan.xyz") << "0 0 x\n";
  CHECK_THROWS_AS(read_cloud(dir / "nan.xyz"), DataError);
  CHECK_THROWS_AS(read_cloud(dir / "missing.xyz"), DataError);

  export_ply(dir / "w.ply", s.cloud, *s.cloud.labels);
  std::ifstream ply(dir / "w.ply");
  std::string first;
  std::getline(ply, first);
  CHECK(first == "ply");
  CHECK_THROWS_AS(export_ply(dir / "x.ply", s.cloud, {1, 2}), DataError);
}

TEST_CASE("dataset manifest") {
  const auto dir = scratch_dir("dataset");
  DatasetConfig cfg;
  cfg.families = {ShapeFamily::Ladder};
  cfg.shapes_per_family = 10;
  cfg.points_total = 1500;
  const Manifest m = make_dataset(cfg, dir);
  CHECK(m.entries.size() == 10);
  CHECK(m.split(true).size() == 8);
  CHECK(m.split(false).size() == 2);
  const Manifest read = read_manifest(dir / "manifest.tsv");
  REQUIRE(read.entries.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(read.entries[i].path == m.entries[i].path);
    CHECK(read.entries[i].train == m.entries[i].train);
    CHECK(read.entries[i].part_count == m.entries[i].part_count);
    CHECK(std::filesystem::exists(read.resolve(read.entries[i])));
  }

  std::ifstream first(dir / "manifest.tsv");
  const std::string before((std::istreambuf_iterator<char>(first)), std::istreambuf_iterator<char>());
  make_dataset(cfg, dir);
  std::ifstream second(dir / "manifest.tsv");
  const std::string after((std::istreambuf_iterator<char>(second)), std::istreambuf_iterator<char>());
  CHECK(before == after);

  cfg.families.clear();
  CHECK_THROWS_AS(make_dataset(cfg, dir), DataError);

  std::ofstream(dir / "broken.tsv") << "shapes/a.xyz\tladder\t5\n";
  CHECK_THROWS_AS(read_manifest(dir / "broken.tsv"), DataError);
}
