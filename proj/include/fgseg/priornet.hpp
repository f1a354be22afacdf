#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "fgseg/geometry.hpp"
#include "fgseg/nn.hpp"

namespace fgseg {

/// Dense N x N similarity values, row-major.
struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<Real> values;

  Real operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  Tensor tensor() const { return Tensor::from(n, n, values); }
  static SimilarityMatrix from_tensor(const Tensor& t);
};

/// N x R row-stochastic assignment factor.
struct AssignmentMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> values;

  Real operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  Tensor tensor() const { return Tensor::from(rows, cols, values); }
  static AssignmentMatrix from_tensor(const Tensor& t);
};

// ---- losses and decoding shared by the block and segment stages ----------

/// S[i][j] = 1 iff labels agree.
SimilarityMatrix gt_similarity(std::span<const int> labels);
std::size_t distinct_count(std::span<const int> labels);

/// Pairwise feature distances with zero subgradient on coincident rows.
Tensor pairwise_distance(const Tensor& features);

/// Contrastive loss summed over all ordered pairs (i, j), including i == j:
/// distance for same-part pairs, max(0, margin - distance) otherwise.
Tensor similarity_loss(const Tensor& features, std::span<const int> labels, Real margin);

/// clamp(1 - d_ij / margin, 0, 1).
Tensor predict_similarity(const Tensor& features, Real margin);

// Same two quantities from a precomputed distance matrix, so training can
// share one distance computation between them.
Tensor similarity_loss_from_distance(const Tensor& distance, std::span<const int> labels, Real margin);
Tensor similarity_from_distance(const Tensor& distance, Real margin);

/// ||M_r M_r^T - S||^2 where M_r is the first r columns of M, row-normalized.
Tensor lowrank_loss(const Tensor& assignment, std::size_t rank, const Tensor& target);

struct RankSelection {
  std::size_t rank = 0;
  Real error = 0;
  AssignmentMatrix truncated;  // row-normalized first `rank` columns
  std::vector<Real> errors;    // reconstruction error for every candidate rank
};

/// Picks r in [1, max_rank] minimizing ||M_r M_r^T - S||^2; ties prefer smaller r.
/// max_rank = 0 means all columns.
RankSelection select_rank(const AssignmentMatrix& m, const SimilarityMatrix& s, std::size_t max_rank = 0);

/// Argmax column per row (ties to the lowest column), empty columns dropped,
/// ids compacted to 0..k-1 in column order.
std::vector<int> segment_block(const AssignmentMatrix& m);

/// Greedy grouping of a similarity matrix without the low-rank factor: the
/// lowest unassigned row seeds a group of all unassigned rows above threshold.
std::vector<int> group_by_similarity(const SimilarityMatrix& s, Real threshold = 0.5);

// ---- network ---------------------------------------------------------------

struct PriorNetConfig {
  std::size_t block_size = 512;
  std::size_t feature_dim = 128;
  std::size_t max_rank = 5;
  Real margin = 100.0;
};

/// Point feature network plus the low-rank assignment head.
///
/// Features: per-point MLP 3->64->128 on cell-local coordinates, a global
/// max-pooled context vector, and MLP 256->128 over [point, context].
/// Head: each similarity row goes through 512->512->256->128, a projection
/// to max_rank columns, and a row softmax.
class PriorNet {
 public:
  explicit PriorNet(const PriorNetConfig& config = {}, std::uint64_t seed = 0);

  const PriorNetConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Tensor features(const Block& block) const;
  Tensor features(std::span<const Point3> local_points) const;
  Tensor head(const Tensor& s_pred) const;

 private:
  PriorNetConfig config_;
  ParameterSet params_;
  Linear point1_, point2_, fuse_;
  Linear head1_, head2_, head3_, head_out_;
};

struct BlockPrediction {
  SimilarityMatrix s_pred;
  AssignmentMatrix assignment;
  RankSelection selection;
  std::vector<int> segments;  // per sampled point
  std::size_t segment_count = 0;
  Tensor features;  // detached N x F
};

enum class BlockDecoder { LowRank, SimilarityGrouping };

BlockPrediction predict_block(const PriorNet& net, const Block& block, BlockDecoder decoder = BlockDecoder::LowRank);

// ---- training --------------------------------------------------------------

struct PriorTrainConfig {
  std::size_t per_count = 400;
  std::size_t epochs = 100;
  std::size_t batch_size = 24;
  Real learning_rate = 1e-3;
  bool use_lowrank_loss = true;
  std::uint64_t seed = 1;
};

struct TrainingBlock {
  Block block;
  std::size_t segment_count = 0;
};

struct EpochLoss {
  std::size_t epoch = 0;
  Real similarity = 0;  // mean per block
  Real lowrank = 0;
};

/// Draws up to `per_count` blocks for each segment count 1..max_rank from the
/// pool. Buckets with fewer blocks are used whole; empty buckets produce a
/// warning through `warn`.
std::vector<TrainingBlock> balance_blocks(const std::vector<TrainingBlock>& pool, std::size_t per_count,
                                          std::size_t max_rank, std::uint64_t seed,
                                          const std::function<void(const std::string&)>& warn = {});

/// Minimizes L_sim + L_low-rank in mini-batches. `on_epoch` receives the
/// mean per-block losses after every epoch.
std::vector<EpochLoss> train_priornet(PriorNet& net, const std::vector<TrainingBlock>& blocks,
                                      const PriorTrainConfig& config,
                                      const std::function<void(const EpochLoss&)>& on_epoch = {});

void write_loss_log(std::ostream& out, const std::vector<EpochLoss>& log);

}  // namespace fgseg
