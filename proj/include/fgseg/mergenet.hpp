#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "fgseg/geometry.hpp"
#include "fgseg/priornet.hpp"

namespace fgseg {

/// One partition block segmented by PriorNet, mapped back to every cloud point
/// of the cell.
struct BlockSegmentation {
  Cell cell;
  std::vector<std::size_t> members;         // cloud indices in the cell, ascending
  std::vector<int> member_segments;         // segment id per member
  std::size_t segment_count = 0;
  std::vector<std::vector<Real>> features;  // per segment, max over its sampled point features
};

/// Segments one block. Cell members that were not sampled take the segment of
/// the nearest sampled point (ties to the lowest sample index).
BlockSegmentation segment_one_block(const PriorNet& net, const PointCloud& cloud, const CellMembers& cell,
                                    int resolution, std::uint64_t seed, BlockDecoder decoder);

/// Partitions a normalized cloud and segments every block. Blocks are
/// independent; `threads` > 1 fans them out without changing results.
std::vector<BlockSegmentation> segment_blocks(const PriorNet& net, const PointCloud& cloud, int resolution,
                                              std::uint64_t seed, BlockDecoder decoder,
                                              std::size_t threads = 1);

// Text format, one record per line:
//   B <i> <j> <k> <segment_count>
//   F <segment> <f_0> ... <f_{F-1}>        (one per segment of the preceding block)
//   P <point_index> <segment>              (one per cell member)
void write_block_segmentation(const std::filesystem::path& path, const std::vector<BlockSegmentation>& blocks);
std::vector<BlockSegmentation> read_block_segmentation(const std::filesystem::path& path);

struct Segment {
  Cell cell;
  int block_segment = 0;
  std::vector<std::size_t> members;
  Aabb box;
  std::vector<Real> feature;
};

struct SegmentGraph {
  std::vector<Segment> nodes;
  std::vector<std::vector<std::size_t>> neighbors;  // sorted, symmetric, no self loops

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const;
  /// Node features stacked as an n x F tensor.
  Tensor features() const;
  std::size_t point_count() const;
};

/// One node per (block, segment) in block order; an edge wherever the
/// member boxes intersect after inflation by `epsilon`.
SegmentGraph build_segment_graph(const PointCloud& cloud, const std::vector<BlockSegmentation>& blocks,
                                 Real epsilon);

/// Twice the median nearest-neighbor spacing of the cloud.
Real default_adjacency_epsilon(const PointCloud& cloud);

/// Mean of neighbor rows; zero for isolated nodes. Each component is summed in
/// sorted value order, so the result does not depend on node numbering.
Tensor neighbor_mean(const Tensor& messages, const std::vector<std::vector<std::size_t>>& neighbors);

/// Majority ground-truth label per node, ties to the smaller label.
std::vector<int> gt_segment_labels(const SegmentGraph& graph, std::span<const int> point_labels);

struct MergeNetConfig {
  std::size_t feature_dim = 128;
  std::size_t layers = 3;
  std::size_t max_rank = 100;
  std::size_t head_width = 512;  // similarity rows are zero-padded or cut to this length
  Real margin = 100.0;
};

/// Message passing over the segment graph plus the segment-level assignment head.
///
/// Layer l: m_u = relu(msg_l(h_u)), a_v = mean over neighbors, and
/// h_v <- upd_l([h_v, a_v]) with relu on every layer except the last.
class MergeNet {
 public:
  explicit MergeNet(const MergeNetConfig& config = {}, std::uint64_t seed = 0);

  const MergeNetConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Tensor propagate(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) const;
  /// Propagated node embedding in units of the margin.
  Tensor embed(const SegmentGraph& graph) const;
  Tensor head(const Tensor& s_pred) const;

  /// Exposed for tests that set weights by hand.
  const Linear& message_layer(std::size_t l) const { return msg_[l]; }
  const Linear& update_layer(std::size_t l) const { return upd_[l]; }

 private:
  MergeNetConfig config_;
  ParameterSet params_;
  std::vector<Linear> msg_, upd_;
  Linear head1_, head2_, head3_, head_out_;
};

struct MergePrediction {
  std::vector<int> node_parts;
  std::size_t part_count = 0;
  RankSelection selection;
};

/// Decodes parts for every node: the low-rank path searches r over
/// 1..min(max_rank, n) and takes the argmax column; the grouping path
/// thresholds the predicted similarity.
MergePrediction predict_parts(const MergeNet& net, const SegmentGraph& graph,
                              BlockDecoder decoder = BlockDecoder::LowRank);

/// Per-point part id from node parts.
std::vector<int> assign_parts(const SegmentGraph& graph, const std::vector<int>& node_parts);

struct MergeSample {
  SegmentGraph graph;
  std::vector<int> node_labels;
};

struct MergeTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  Real learning_rate = 1e-3;
  bool use_lowrank_loss = true;
  std::uint64_t seed = 1;
};

struct MergeEpochLoss {
  std::size_t epoch = 0;
  Real similarity = 0;  // mean per shape
  Real lowrank = 0;
};

std::vector<MergeEpochLoss> train_mergenet(MergeNet& net, const std::vector<MergeSample>& samples,
                                           const MergeTrainConfig& config,
                                           const std::function<void(const MergeEpochLoss&)>& on_epoch = {});

/// `point_index<TAB>part_id` per point, then `#parts=<n>`.
void write_segmentation(const std::filesystem::path& path, const std::vector<int>& parts);
std::vector<int> read_segmentation(const std::filesystem::path& path);

}  // namespace fgseg
