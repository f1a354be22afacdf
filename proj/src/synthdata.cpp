#include "fgseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace fgseg {

namespace {

constexpr Real kPi = std::numbers::pi;

Point3 normalized(Point3 p) { return (1.0 / std::sqrt(dot(p, p))) * p; }

Point3 cross(Point3 a, Point3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

struct Primitive {
  enum class Kind { Box, Cylinder, Tube, Sphere } kind = Kind::Box;
  Point3 center;
  Point3 u{1, 0, 0}, v{0, 1, 0}, w{0, 0, 1};  // orthonormal frame; w is the cylinder axis
  Real a = 0, b = 0, c = 0;                    // box half extents along u,v,w; cylinder: a = radius, c = half length

  Real area() const {
    switch (kind) {
      case Kind::Box: return 8.0 * (a * b + b * c + c * a);
      case Kind::Cylinder: return 2.0 * kPi * a * (2.0 * c) + 2.0 * kPi * a * a;
      case Kind::Tube: return 2.0 * kPi * a * (2.0 * c);
      case Kind::Sphere: return 4.0 * kPi * a * a;
    }
    return 0;
  }

  Point3 at(Real lu, Real lv, Real lw) const { return center + lu * u + lv * v + lw * w; }
};

Primitive box(Point3 center, Real hx, Real hy, Real hz) {
  Primitive p;
  p.kind = Primitive::Kind::Box;
  p.center = center;
  p.a = hx;
  p.b = hy;
  p.c = hz;
  return p;
}

/// Box rotated about the x axis by `angle` radians.
Primitive tilted_box(Point3 center, Real hx, Real hy, Real hz, Real angle) {
  Primitive p = box(center, hx, hy, hz);
  p.v = {0, std::cos(angle), std::sin(angle)};
  p.w = {0, -std::sin(angle), std::cos(angle)};
  return p;
}

Primitive cylinder(Point3 from, Point3 to, Real radius, bool open = false) {
  Primitive p;
  p.kind = open ? Primitive::Kind::Tube : Primitive::Kind::Cylinder;
  p.center = 0.5 * (from + to);
  const Point3 axis = to - from;
  p.w = normalized(axis);
  const Point3 helper = std::fabs(p.w.x) < 0.9 ? Point3{1, 0, 0} : Point3{0, 1, 0};
  p.u = normalized(cross(helper, p.w));
  p.v = cross(p.w, p.u);
  p.a = radius;
  p.c = 0.5 * std::sqrt(dot(axis, axis));
  return p;
}

Primitive sphere(Point3 center, Real radius) {
  Primitive p;
  p.kind = Primitive::Kind::Sphere;
  p.center = center;
  p.a = radius;
  return p;
}

Point3 sample_surface(const Primitive& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  auto sym = [&](Real h) { return (2.0 * unit(rng) - 1.0) * h; };
  switch (p.kind) {
    case Primitive::Kind::Box: {
      const Real fw = 4 * p.a * p.b, fu = 4 * p.b * p.c, fv = 4 * p.a * p.c;
      const Real pick = unit(rng) * (fw + fu + fv);
      const Real side = unit(rng) < 0.5 ? -1.0 : 1.0;
      if (pick < fw) return p.at(sym(p.a), sym(p.b), side * p.c);
      if (pick < fw + fu) return p.at(side * p.a, sym(p.b), sym(p.c));
      return p.at(sym(p.a), side * p.b, sym(p.c));
    }
    case Primitive::Kind::Cylinder:
    case Primitive::Kind::Tube: {
      const Real lateral = 2 * kPi * p.a * 2 * p.c;
      const Real caps = p.kind == Primitive::Kind::Cylinder ? 2 * kPi * p.a * p.a : 0.0;
      const Real theta = 2 * kPi * unit(rng);
      if (unit(rng) * (lateral + caps) < lateral) {
        return p.at(p.a * std::cos(theta), p.a * std::sin(theta), sym(p.c));
      }
      const Real r = p.a * std::sqrt(unit(rng));
      const Real side = unit(rng) < 0.5 ? -1.0 : 1.0;
      return p.at(r * std::cos(theta), r * std::sin(theta), side * p.c);
    }
    case Primitive::Kind::Sphere: {
      std::normal_distribution<Real> g(0.0, 1.0);
      Point3 d{g(rng), g(rng), g(rng)};
      while (dot(d, d) < 1e-12) d = {g(rng), g(rng), g(rng)};
      return p.center + p.a * normalized(d);
    }
  }
  return p.center;
}

// A family enumerates integer configurations; each maps to a part count and a builder.
struct Config {
  int part_count;
  std::vector<int> knobs;
};

using Builder = std::vector<Primitive> (*)(const std::vector<int>&, std::mt19937_64&);

Real jitter(std::mt19937_64& rng, Real base, Real rel = 0.1) {
  std::uniform_real_distribution<Real> d(1.0 - rel, 1.0 + rel);
  return base * d(rng);
}

std::vector<Primitive> build_single(const std::vector<int>& knobs, std::mt19937_64& rng) {
  switch (knobs[0]) {
    case 0: return {box({0, 0, 0}, jitter(rng, 0.5), jitter(rng, 0.3), jitter(rng, 0.2))};
    case 1: return {cylinder({0, 0, 0}, {0, jitter(rng, 1.0), 0}, jitter(rng, 0.2))};
    default: return {sphere({0, 0, 0}, jitter(rng, 0.5))};
  }
}

std::vector<Primitive> build_ladder(const std::vector<int>& knobs, std::mt19937_64& rng) {
  const int rungs = knobs[0];
  std::uniform_real_distribution<Real> wd(0.10, 0.14);
  const Real width = wd(rng);
  const Real rail_hx = jitter(rng, 0.012), rail_hz = jitter(rng, 0.018);
  const Real rung_r = jitter(rng, 0.007);
  std::vector<Primitive> parts;
  parts.push_back(box({-width / 2, 0.5, 0}, rail_hx, 0.5, rail_hz));
  parts.push_back(box({width / 2, 0.5, 0}, rail_hx, 0.5, rail_hz));
  const Real lo = jitter(rng, 0.08), hi = 1.0 - jitter(rng, 0.08);
  for (int k = 0; k < rungs; ++k) {
    const Real y = rungs == 1 ? 0.5 : lo + (hi - lo) * k / (rungs - 1);
    parts.push_back(cylinder({-width / 2 + rail_hx, y, 0}, {width / 2 - rail_hx, y, 0}, rung_r));
  }
  return parts;
}

std::vector<Primitive> build_fence(const std::vector<int>& knobs, std::mt19937_64& rng) {
  const int posts = knobs[0], pickets = knobs[1];
  const Real height = std::uniform_real_distribution<Real>(0.35, 0.5)(rng);
  const Real length = 1.0;
  const Real post_h = jitter(rng, 0.02);
  std::vector<Primitive> parts;
  std::vector<Real> xs;
  for (int i = 0; i < posts; ++i) xs.push_back(-length / 2 + length * i / (posts - 1));
  for (Real x : xs) parts.push_back(box({x, height / 2, 0}, post_h, height / 2, post_h));
  for (Real y : {0.3 * height, 0.8 * height}) {
    parts.push_back(box({0, y, post_h + 0.008}, length / 2, 0.012, 0.008));
  }
  const Real cap_r = jitter(rng, 0.028);
  for (Real x : xs) parts.push_back(sphere({x, height + cap_r * 0.7, 0}, cap_r));
  for (int i = 0; i + 1 < posts; ++i) {
    for (int p = 0; p < pickets; ++p) {
      const Real x = xs[i] + (xs[i + 1] - xs[i]) * (p + 1) / (pickets + 1);
      parts.push_back(box({x, 0.47 * height, post_h + 0.02}, 0.008, 0.42 * height, 0.004));
    }
  }
  return parts;
}

std::vector<Primitive> build_table(const std::vector<int>& knobs, std::mt19937_64& rng) {
  const int slats = knobs[0];
  const Real w = 1.0;
  const Real d = std::uniform_real_distribution<Real>(0.5, 0.65)(rng);
  const Real h = std::uniform_real_distribution<Real>(0.6, 0.75)(rng);
  const Real leg = jitter(rng, 0.025);
  const Real inset = 0.05;
  const Real lx = w / 2 - inset, lz = d / 2 - inset;
  std::vector<Primitive> parts;
  parts.push_back(box({0, h, 0}, w / 2, 0.02, d / 2));
  for (Real sx : {-1.0, 1.0})
    for (Real sz : {-1.0, 1.0}) parts.push_back(box({sx * lx, h / 2, sz * lz}, leg, h / 2 - 0.01, leg));
  const Real apron_y = h - 0.02 - 0.04;
  for (Real sz : {-1.0, 1.0}) parts.push_back(box({0, apron_y, sz * lz}, lx - leg, 0.04, 0.01));
  for (Real sx : {-1.0, 1.0}) parts.push_back(box({sx * lx, apron_y, 0}, 0.01, 0.04, lz - leg));
  for (Real sx : {-1.0, 1.0})
    for (Real sz : {-1.0, 1.0})
      parts.push_back(box({sx * (lx - leg - 0.02), apron_y - 0.05, sz * (lz - leg - 0.02)}, 0.02, 0.02, 0.02));
  for (Real sx : {-1.0, 1.0})
    for (Real sz : {-1.0, 1.0}) parts.push_back(box({sx * lx, 0.012, sz * lz}, leg + 0.012, 0.012, leg + 0.012));
  const Real shelf_y = jitter(rng, 0.15);
  for (Real sz : {-1.0, 1.0}) parts.push_back(box({0, shelf_y, sz * lz}, lx - leg, 0.015, 0.012));
  for (int k = 0; k < slats; ++k) {
    const Real x = -lx + leg + 0.03 + (2 * (lx - leg - 0.03)) * k / std::max(1, slats - 1);
    parts.push_back(box({x, shelf_y + 0.023, 0}, 0.015, 0.008, lz));
  }
  return parts;
}

std::vector<Primitive> build_chair(const std::vector<int>& knobs, std::mt19937_64& rng) {
  const int seat_slats = knobs[0], back_slats = knobs[1];
  const Real hw = jitter(rng, 0.25, 0.05), hd = jitter(rng, 0.25, 0.05);
  const Real seat_y = jitter(rng, 0.45, 0.05);
  const Real leg = jitter(rng, 0.02);
  const Real px = hw - 0.03, pz = hd - 0.03;
  std::vector<Primitive> parts;
  for (Real sx : {-1.0, 1.0})
    for (Real sz : {-1.0, 1.0}) parts.push_back(box({sx * px, seat_y / 2, sz * pz}, leg, seat_y / 2 - 0.01, leg));
  for (Real sx : {-1.0, 1.0}) parts.push_back(box({sx * px, seat_y - 0.02, 0}, 0.014, 0.025, pz - leg));
  const Real slat_hz = 0.8 * hd / seat_slats;
  for (int k = 0; k < seat_slats; ++k) {
    const Real z = -pz + (2 * pz) * (k + 0.5) / seat_slats;
    parts.push_back(box({0, seat_y + 0.015, z}, hw, 0.01, 0.8 * slat_hz));
  }
  const Real tilt = jitter(rng, 0.14);
  const Real post_half = 0.27;
  const Point3 post_base{0, seat_y + post_half, -pz - std::sin(tilt) * post_half};
  for (Real sx : {-1.0, 1.0}) {
    parts.push_back(tilted_box({sx * px, post_base.y, post_base.z}, 0.018, post_half, 0.018, -tilt));
  }
  for (int k = 0; k < back_slats; ++k) {
    const Real t = 0.25 + 0.65 * k / std::max(1, back_slats - 1);  // fraction along the post
    const Real y = seat_y + 2 * post_half * t;
    const Real z = -pz - std::sin(tilt) * 2 * post_half * t - 0.02;
    parts.push_back(tilted_box({0, y, z}, px - 0.018, 0.02, 0.007, -tilt));
  }
  for (Real sx : {-1.0, 1.0})
    for (Real sz : {-1.0, 1.0}) parts.push_back(box({sx * px, 0.01, sz * pz}, leg + 0.01, 0.01, leg + 0.01));
  const Real cap_r = jitter(rng, 0.03);
  for (Real sx : {-1.0, 1.0}) {
    const Real top_y = seat_y + 2 * post_half * std::cos(tilt);
    const Real top_z = -pz - std::sin(tilt) * 2 * post_half;
    parts.push_back(sphere({sx * px, top_y + cap_r * 0.6, top_z}, cap_r));
  }
  return parts;
}

std::vector<Primitive> build_wheel(const std::vector<int>& knobs, std::mt19937_64& rng) {
  const int spokes = knobs[0];
  const Real radius = 0.5;
  const Real rim_half = jitter(rng, 0.03);
  const Real hub_r = jitter(rng, 0.05), hub_half = jitter(rng, 0.05);
  const Real spoke_r = jitter(rng, 0.006);
  const Real nipple_r = jitter(rng, 0.015);
  const Real phase = std::uniform_real_distribution<Real>(0.0, 2 * kPi)(rng);
  std::vector<Primitive> parts;
  parts.push_back(cylinder({0, 0, -rim_half}, {0, 0, rim_half}, radius, true));
  parts.push_back(cylinder({0, 0, -hub_half}, {0, 0, hub_half}, hub_r));
  for (int i = 0; i < spokes; ++i) {
    const Real th = phase + 2 * kPi * i / spokes;
    const Point3 dir{std::cos(th), std::sin(th), 0};
    parts.push_back(cylinder(hub_r * dir, (radius - 2 * nipple_r) * dir, spoke_r));
  }
  for (int i = 0; i < spokes; ++i) {
    const Real th = phase + 2 * kPi * i / spokes;
    parts.push_back(sphere((radius - nipple_r) * Point3{std::cos(th), std::sin(th), 0}, nipple_r));
  }
  return parts;
}

struct FamilyInfo {
  ShapeFamily family;
  std::string_view name;
  Builder build;
  std::vector<Config> configs;
};

const std::vector<FamilyInfo>& families() {
  static const std::vector<FamilyInfo> table = [] {
    std::vector<FamilyInfo> t;
    t.push_back({ShapeFamily::Single, "single", build_single, {{1, {0}}, {1, {1}}, {1, {2}}}});
    FamilyInfo ladder{ShapeFamily::Ladder, "ladder", build_ladder, {}};
    for (int r = 2; r <= 16; ++r) ladder.configs.push_back({2 + r, {r}});
    t.push_back(ladder);
    FamilyInfo fence{ShapeFamily::Fence, "fence", build_fence, {}};
    for (int posts = 2; posts <= 8; ++posts)
      for (int pk = 0; pk <= 2; ++pk) fence.configs.push_back({2 * posts + 2 + pk * (posts - 1), {posts, pk}});
    t.push_back(fence);
    FamilyInfo table_f{ShapeFamily::LatticeTable, "table", build_table, {}};
    for (int s = 2; s <= 10; ++s) table_f.configs.push_back({19 + s, {s}});
    t.push_back(table_f);
    FamilyInfo chair{ShapeFamily::SlattedChair, "chair", build_chair, {}};
    for (int m = 3; m <= 6; ++m)
      for (int b = 2; b <= 5; ++b) chair.configs.push_back({14 + m + b, {m, b}});
    t.push_back(chair);
    FamilyInfo wheel{ShapeFamily::SpokeWheel, "wheel", build_wheel, {}};
    for (int n = 4; n <= 16; ++n) wheel.configs.push_back({2 + 2 * n, {n}});
    t.push_back(wheel);
    return t;
  }();
  return table;
}

const FamilyInfo& info(ShapeFamily f) {
  for (const auto& fi : families()) {
    if (fi.family == f) return fi;
  }
  throw DataError("unknown shape family");
}

LabeledCloud sample_parts(const std::vector<Primitive>& parts, std::size_t total, std::mt19937_64& rng) {
  const std::size_t n = parts.size();
  const std::size_t floor_per_part = std::min<std::size_t>(16, total / n);
  if (floor_per_part == 0) throw DataError("points_total is smaller than the part count");
  Real area = 0;
  for (const auto& p : parts) area += p.area();
  // Largest-remainder allocation over the budget left after the per-part floor.
  const std::size_t budget = total - floor_per_part * n;
  std::vector<std::size_t> counts(n, floor_per_part);
  std::vector<std::pair<Real, std::size_t>> remainders;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real exact = budget * parts[i].area() / area;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    counts[i] += whole;
    used += whole;
    remainders.emplace_back(exact - whole, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < budget; ++k, ++used) counts[remainders[k % n].second] += 1;

  LabeledCloud out;
  out.part_count = static_cast<int>(n);
  out.cloud.labels.emplace();
  out.cloud.points.reserve(total);
  out.cloud.labels->reserve(total);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < counts[i]; ++k) {
      out.cloud.points.push_back(sample_surface(parts[i], rng));
      out.cloud.labels->push_back(static_cast<int>(i));
    }
  }
  return out;
}

}  // namespace

std::string_view family_name(ShapeFamily f) { return info(f).name; }

ShapeFamily parse_family(std::string_view name) {
  for (const auto& fi : families()) {
    if (fi.name == name) return fi.family;
  }
  throw DataError("unknown shape family '" + std::string(name) + "'");
}

std::vector<ShapeFamily> default_families() {
  return {ShapeFamily::Ladder, ShapeFamily::Fence, ShapeFamily::LatticeTable, ShapeFamily::SlattedChair,
          ShapeFamily::SpokeWheel};
}

std::size_t count_small_parts(const LabeledCloud& shape, Real fraction) {
  const auto& pts = shape.cloud.points;
  const auto& labels = *shape.cloud.labels;
  const Real diag = aabb_of(pts).diagonal();
  std::vector<std::vector<Point3>> by_part(static_cast<std::size_t>(shape.part_count));
  for (std::size_t i = 0; i < pts.size(); ++i) by_part[static_cast<std::size_t>(labels[i])].push_back(pts[i]);
  std::size_t small = 0;
  for (const auto& part : by_part) {
    if (!part.empty() && aabb_of(part).diagonal() < fraction * diag) ++small;
  }
  return small;
}

LabeledCloud generate_shape(const ShapeSpec& spec) {
  if (spec.min_parts > spec.max_parts || spec.max_parts < 1) {
    throw DataError("infeasible spec: empty part count range [" + std::to_string(spec.min_parts) + "," +
                    std::to_string(spec.max_parts) + "]");
  }
  const FamilyInfo& fi = info(spec.family);
  std::vector<const Config*> feasible;
  for (const auto& c : fi.configs) {
    if (c.part_count >= spec.min_parts && c.part_count <= spec.max_parts) feasible.push_back(&c);
  }
  if (feasible.empty()) {
    throw DataError("infeasible spec: family " + std::string(fi.name) + " cannot produce " +
                    std::to_string(spec.min_parts) + "-" + std::to_string(spec.max_parts) + " parts");
  }
  if (spec.points_total == 0) throw DataError("infeasible spec: points_total is zero");

  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  constexpr int kAttempts = 32;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const Config& cfg = *feasible[std::uniform_int_distribution<std::size_t>(0, feasible.size() - 1)(rng)];
    const auto parts = fi.build(cfg.knobs, rng);
    LabeledCloud shape = sample_parts(parts, spec.points_total, rng);
    shape.cloud = normalize_cloud(shape.cloud);
    if (shape.part_count == 1 || count_small_parts(shape) * 5 >= static_cast<std::size_t>(shape.part_count)) {
      return shape;
    }
  }
  throw DataError("could not satisfy the small-part quota for family " + std::string(fi.name));
}

// ---- files ---------------------------------------------------------------

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

const std::array<std::array<int, 3>, 64>& palette() {
  static const auto table = [] {
    std::array<std::array<int, 3>, 64> t{};
    // golden-angle hue walk at two brightness levels
    for (int i = 0; i < 64; ++i) {
      const Real h = std::fmod(i * 137.508, 360.0) / 60.0;
      const Real v = i % 2 == 0 ? 1.0 : 0.7, s = 0.75;
      const Real c = v * s, x = c * (1 - std::fabs(std::fmod(h, 2.0) - 1)), m = v - c;
      Real r = 0, g = 0, b = 0;
      switch (static_cast<int>(h)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
      }
      t[i] = {static_cast<int>(std::lround((r + m) * 255)), static_cast<int>(std::lround((g + m) * 255)),
              static_cast<int>(std::lround((b + m) * 255))};
    }
    return t;
  }();
  return table;
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext != ".xyz" && ext != ".txt") throw DataError("unsupported cloud extension '" + ext + "'");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  PointCloud cloud;
  std::vector<int> labels;
  int columns = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const int n = static_cast<int>(tok.size());
    if (n != 3 && n != 4) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                      std::to_string(n));
    }
    if (columns == -1) columns = n;
    if (n != columns) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": label/point count mismatch");
    }
    Point3 p;
    try {
      std::size_t used = 0;
      for (int a = 0; a < 3; ++a) {
        p[a] = std::stod(tok[a], &used);
        if (used != tok[a].size()) throw std::invalid_argument(tok[a]);
      }
      cloud.points.push_back(p);
      if (n == 4) {
        const int label = std::stoi(tok[3], &used);
        if (used != tok[3].size() || label < 0) throw std::invalid_argument(tok[3]);
        labels.push_back(label);
      }
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  if (columns == 4) cloud.labels = std::move(labels);
  return cloud;
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  cloud.validate();
  const std::string ext = lower_ext(path);
  if (ext == ".ply") {
    std::vector<int> ids = cloud.labels ? *cloud.labels : std::vector<int>(cloud.size(), 0);
    export_ply(path, cloud, ids);
    return;
  }
  if (ext != ".xyz" && ext != ".txt") throw DataError("unsupported cloud extension '" + ext + "'");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p.x, p.y, p.z);
    out.write(buf, len);
    if (cloud.labels) out << ' ' << (*cloud.labels)[i];
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

void export_ply(const std::filesystem::path& path, const PointCloud& cloud, const std::vector<int>& part_ids) {
  if (part_ids.size() != cloud.size()) throw DataError("export_ply: part id count does not match point count");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[160];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const int id = part_ids[i];
    const auto& c = palette()[static_cast<std::size_t>(((id % 64) + 64) % 64)];
    int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d %d\n", p.x, p.y, p.z, c[0], c[1], c[2]);
    out.write(buf, len);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<ManifestEntry> Manifest::split(bool train) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.train == train) out.push_back(e);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# path\tfamily\tpart_count\tsplit\n";
  for (const auto& e : entries) {
    out << e.path << '\t' << family_name(e.family) << '\t' << e.part_count << '\t' << (e.train ? "train" : "test")
        << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4 || (cols[3] != "train" && cols[3] != "test")) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest row");
    }
    ManifestEntry e;
    e.path = cols[0];
    e.family = parse_family(cols[1]);
    try {
      e.part_count = std::stoi(cols[2]);
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed part count");
    }
    e.train = cols[3] == "train";
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest make_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (config.families.empty()) throw DataError("make_dataset: empty family list");
  if (config.shapes_per_family == 0) throw DataError("make_dataset: shapes_per_family is zero");
  std::filesystem::create_directories(out_dir / "shapes");
  Manifest manifest;
  manifest.root = out_dir;
  std::mt19937_64 split_rng(config.seed ^ 0x5EEDC0FFEEULL);
  std::uint64_t shape_seed = config.seed * 1000003ULL;
  for (ShapeFamily fam : config.families) {
    const std::size_t n = config.shapes_per_family;
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<Real>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<bool> is_train(n, false);
    for (std::size_t k = 0; k < n_train; ++k) is_train[order[k]] = true;
    for (std::size_t i = 0; i < n; ++i) {
      ShapeSpec spec;
      spec.family = fam;
      spec.min_parts = config.min_parts;
      spec.max_parts = config.max_parts;
      spec.points_total = config.points_total;
      spec.seed = shape_seed++;
      const LabeledCloud shape = generate_shape(spec);
      char name[64];
      std::snprintf(name, sizeof name, "shapes/%s_%03zu.xyz", std::string(family_name(fam)).c_str(), i);
      write_cloud(out_dir / name, shape.cloud);
      manifest.entries.push_back({name, fam, shape.part_count, is_train[i]});
    }
  }
  write_manifest(out_dir / "manifest.tsv", manifest.entries);
  return manifest;
}

}  // namespace fgseg
