#include "fgseg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

namespace fgseg {

namespace {

struct Overlap {
  std::vector<int> pred_ids, gt_ids;
  std::vector<std::size_t> pred_size, gt_size;
  std::vector<std::size_t> inter;  // pred-major

  Real iou(std::size_t p, std::size_t g) const {
    const std::size_t i = inter[p * gt_ids.size() + g];
    return static_cast<Real>(i) / static_cast<Real>(pred_size[p] + gt_size[g] - i);
  }
};

Overlap overlap(const SegmentationResult& r) {
  if (r.predicted.empty()) throw EvalError("empty prediction for shape '" + r.shape_id + "'");
  if (r.predicted.size() != r.ground_truth.size()) {
    throw EvalError("shape '" + r.shape_id + "': " + std::to_string(r.predicted.size()) + " predicted ids vs " +
                    std::to_string(r.ground_truth.size()) + " ground-truth ids");
  }
  for (std::size_t i = 0; i < r.predicted.size(); ++i) {
    if (r.predicted[i] < 0 || r.ground_truth[i] < 0) throw EvalError("negative part id in shape '" + r.shape_id + "'");
  }
  Overlap o;
  const std::set<int> ps(r.predicted.begin(), r.predicted.end()), gs(r.ground_truth.begin(), r.ground_truth.end());
  o.pred_ids.assign(ps.begin(), ps.end());
  o.gt_ids.assign(gs.begin(), gs.end());
  auto index_of = [](const std::vector<int>& ids, int v) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), v) - ids.begin());
  };
  o.pred_size.assign(o.pred_ids.size(), 0);
  o.gt_size.assign(o.gt_ids.size(), 0);
  o.inter.assign(o.pred_ids.size() * o.gt_ids.size(), 0);
  for (std::size_t i = 0; i < r.predicted.size(); ++i) {
    const std::size_t p = index_of(o.pred_ids, r.predicted[i]), g = index_of(o.gt_ids, r.ground_truth[i]);
    ++o.pred_size[p];
    ++o.gt_size[g];
    ++o.inter[p * o.gt_ids.size() + g];
  }
  return o;
}

}  // namespace

IouReport avg_iou(const SegmentationResult& result) {
  const Overlap o = overlap(result);
  IouReport rep;
  rep.predicted_parts = o.pred_ids.size();
  rep.gt_parts = o.gt_ids.size();
  Real total = 0;
  for (std::size_t p = 0; p < o.pred_ids.size(); ++p) {
    PartScore s{o.pred_ids[p], o.gt_ids[0], o.pred_size[p], o.iou(p, 0)};
    for (std::size_t g = 1; g < o.gt_ids.size(); ++g) {
      const Real v = o.iou(p, g);
      if (v > s.iou) {
        s.iou = v;
        s.best_gt = o.gt_ids[g];
      }
    }
    total += s.iou;
    rep.parts.push_back(s);
  }
  rep.average = total / static_cast<Real>(rep.parts.size());
  return rep;
}

std::optional<Real> small_part_iou(const SegmentationResult& result, std::span<const Point3> points,
                                   Real threshold) {
  if (!(threshold > 0 && threshold < 1)) throw EvalError("small-part threshold must lie in (0, 1)");
  if (points.size() != result.ground_truth.size()) throw EvalError("point count does not match labels");
  const IouReport rep = avg_iou(result);
  const Real limit = threshold * aabb_of(points).diagonal();
  std::map<int, std::vector<Point3>> by_gt;
  for (std::size_t i = 0; i < points.size(); ++i) by_gt[result.ground_truth[i]].push_back(points[i]);
  std::map<int, Real> gt_diag;
  for (const auto& [g, pts] : by_gt) gt_diag[g] = aabb_of(pts).diagonal();

  Real total = 0;
  std::size_t count = 0;
  for (const auto& s : rep.parts) {
    if (gt_diag.at(s.best_gt) < limit) {
      total += s.iou;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<Real>(count);
}

Real hungarian_iou(const SegmentationResult& result) {
  const Overlap o = overlap(result);
  const std::size_t np = o.pred_ids.size(), ng = o.gt_ids.size();
  // Square cost matrix (1-based) for the shortest augmenting path algorithm;
  // padding rows/columns cost 1 (IoU 0).
  const std::size_t n = std::max(np, ng);
  auto cost = [&](std::size_t i, std::size_t j) -> Real {
    return (i <= np && j <= ng) ? 1.0 - o.iou(i - 1, j - 1) : 1.0;
  };
  const Real inf = std::numeric_limits<Real>::infinity();
  std::vector<Real> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<Real> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      Real delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const Real cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Real total = 0;
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = match[j];
    if (i >= 1 && i <= np && j <= ng) total += o.iou(i - 1, j - 1);
  }
  return total / static_cast<Real>(np);
}

Real BlockStats::fraction_at_most(std::size_t count) const {
  if (blocks == 0) return 0;
  std::size_t n = 0;
  for (const auto& [c, k] : histogram) {
    if (c <= count) n += k;
  }
  return static_cast<Real>(n) / static_cast<Real>(blocks);
}

void accumulate_block_stats(BlockStats& stats, const PointCloud& cloud, int resolution) {
  if (!cloud.has_labels()) throw EvalError("block statistics need labeled clouds");
  const auto& labels = *cloud.labels;
  for (const auto& cell : partition(cloud, resolution)) {
    std::set<int> distinct;
    for (auto idx : cell.members) distinct.insert(labels[idx]);
    ++stats.histogram[distinct.size()];
    ++stats.blocks;
  }
}

BlockStats block_stats(std::span<const PointCloud> clouds, int resolution) {
  BlockStats stats;
  for (const auto& c : clouds) accumulate_block_stats(stats, c, resolution);
  return stats;
}

EvalSummary summarize(std::vector<ShapeEval> shapes) {
  if (shapes.empty()) throw EvalError("no shapes to summarize");
  std::sort(shapes.begin(), shapes.end(), [](const auto& a, const auto& b) { return a.shape_id < b.shape_id; });
  EvalSummary s;
  Real iou = 0, hung = 0, small = 0;
  std::size_t small_count = 0;
  for (const auto& e : shapes) {
    iou += e.report.average;
    hung += e.hungarian;
    if (e.report.small_part_average) {
      small += *e.report.small_part_average;
      ++small_count;
    }
  }
  const Real n = static_cast<Real>(shapes.size());
  s.mean_iou = iou / n;
  s.mean_hungarian = hung / n;
  if (small_count > 0) s.mean_small_part_iou = small / static_cast<Real>(small_count);
  s.shapes = std::move(shapes);
  return s;
}

void write_eval_report(const std::filesystem::path& path, const EvalSummary& summary) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write " + path.string());
  auto opt = [](const std::optional<Real>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  char buf[256];
  out << "shape\tpredicted_parts\tgt_parts\tavg_iou\tsmall_part_iou\thungarian_iou\n";
  Real pred = 0, gt = 0;
  for (const auto& e : summary.shapes) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f\t%s\t%.6f\n", e.report.predicted_parts, e.report.gt_parts,
                  e.report.average, opt(e.report.small_part_average).c_str(), e.hungarian);
    out << e.shape_id << '\t' << buf;
    pred += static_cast<Real>(e.report.predicted_parts);
    gt += static_cast<Real>(e.report.gt_parts);
  }
  const Real n = static_cast<Real>(summary.shapes.size());
  std::snprintf(buf, sizeof buf, "ALL\t%.2f\t%.2f\t%.6f\t%s\t%.6f\n", pred / n, gt / n, summary.mean_iou,
                opt(summary.mean_small_part_iou).c_str(), summary.mean_hungarian);
  out << buf;
  if (!out) throw EvalError("write failed: " + path.string());
}

}  // namespace fgseg
