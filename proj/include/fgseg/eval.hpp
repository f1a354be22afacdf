#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgseg/geometry.hpp"

namespace fgseg {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SegmentationResult {
  std::string shape_id;
  std::vector<int> predicted;
  std::vector<int> ground_truth;
};

struct PartScore {
  int part = 0;
  int best_gt = 0;  // lowest gt id among the maximizers
  std::size_t size = 0;
  Real iou = 0;
};

struct IouReport {
  std::vector<PartScore> parts;  // ascending predicted id
  Real average = 0;
  std::optional<Real> small_part_average;
  std::size_t predicted_parts = 0;
  std::size_t gt_parts = 0;
};

/// Best-match IoU: each predicted part is scored against its best gt part and
/// the scores are averaged over predicted parts. Unmatched gt parts do not
/// count, so the metric is asymmetric.
IouReport avg_iou(const SegmentationResult& result);

/// Same average restricted to predicted parts whose best gt part has a box
/// diagonal below `threshold` times the shape diagonal. Absent when no part
/// qualifies.
std::optional<Real> small_part_iou(const SegmentationResult& result, std::span<const Point3> points,
                                   Real threshold = 0.15);

/// Diagnostic only: one-to-one matching that maximizes total IoU, averaged
/// over predicted parts (unmatched predicted parts score 0).
Real hungarian_iou(const SegmentationResult& result);

struct BlockStats {
  std::map<std::size_t, std::size_t> histogram;  // gt segment count -> blocks
  std::size_t blocks = 0;
  Real fraction_at_most(std::size_t count) const;
};

/// Histogram of distinct gt labels per nonempty partition cell.
BlockStats block_stats(std::span<const PointCloud> clouds, int resolution);
void accumulate_block_stats(BlockStats& stats, const PointCloud& cloud, int resolution);

struct ShapeEval {
  std::string shape_id;
  IouReport report;
  Real hungarian = 0;
};

struct EvalSummary {
  std::vector<ShapeEval> shapes;  // sorted by shape id
  Real mean_iou = 0;
  std::optional<Real> mean_small_part_iou;  // over shapes where it is present
  Real mean_hungarian = 0;
};

EvalSummary summarize(std::vector<ShapeEval> shapes);

// Columns: shape, predicted_parts, gt_parts, avg_iou, small_part_iou,
// hungarian_iou. The last row is the mean with shape "ALL"; absent values are
// written as NA.
void write_eval_report(const std::filesystem::path& path, const EvalSummary& summary);

}  // namespace fgseg
