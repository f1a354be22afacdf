#include "fgseg/priornet.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

namespace fgseg {

SimilarityMatrix SimilarityMatrix::from_tensor(const Tensor& t) {
  if (t.rows() != t.cols()) throw TensorError("similarity matrix must be square");
  return {t.rows(), std::vector<Real>(t.data().begin(), t.data().end())};
}

AssignmentMatrix AssignmentMatrix::from_tensor(const Tensor& t) {
  return {t.rows(), t.cols(), std::vector<Real>(t.data().begin(), t.data().end())};
}

SimilarityMatrix gt_similarity(std::span<const int> labels) {
  const std::size_t n = labels.size();
  SimilarityMatrix s{n, std::vector<Real>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s.values[i * n + j] = labels[i] == labels[j] ? 1.0 : 0.0;
  return s;
}

std::size_t distinct_count(std::span<const int> labels) {
  return std::set<int>(labels.begin(), labels.end()).size();
}

Tensor pairwise_distance(const Tensor& features) { return sqrt0(sq_euclid_rowpairs(features, features)); }

Tensor similarity_loss_from_distance(const Tensor& distance, std::span<const int> labels, Real margin) {
  const std::size_t n = distance.rows();
  if (distance.cols() != n) throw TensorError("similarity_loss: distance matrix must be square");
  if (labels.size() != n) throw TensorError("similarity_loss: label count does not match feature rows");
  std::vector<int> lab(labels.begin(), labels.end());
  const auto d = distance.data();
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Real v = d[i * n + j];
      total += lab[i] == lab[j] ? v : std::max<Real>(0.0, margin - v);
    }
  }
  return Tensor::make_result(1, 1, {total}, {distance}, [lab = std::move(lab), margin](detail::Node& node) {
    auto& pd = *node.parents[0];
    if (!pd.requires_grad) return;
    const Real g = node.grad[0];
    const std::size_t n = pd.rows;
    auto& gd = pd.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (lab[i] == lab[j]) {
          gd[i * n + j] += g;
        } else if (pd.value[i * n + j] < margin) {
          gd[i * n + j] -= g;
        }
      }
    }
  });
}

Tensor similarity_from_distance(const Tensor& distance, Real margin) {
  Buffer out(distance.size());
  const auto d = distance.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::clamp(1.0 - d[k] / margin, 0.0, 1.0);
  return Tensor::make_result(distance.rows(), distance.cols(), std::move(out), {distance}, [margin](detail::Node& node) {
    auto& pd = *node.parents[0];
    if (!pd.requires_grad) return;
    auto& gd = pd.grad_buffer();
    // Zero gradient where the clamp is active, including the boundaries.
    for (std::size_t k = 0; k < gd.size(); ++k) {
      const Real v = node.value[k];
      if (v > 0.0 && v < 1.0) gd[k] -= node.grad[k] / margin;
    }
  });
}

Tensor similarity_loss(const Tensor& features, std::span<const int> labels, Real margin) {
  return similarity_loss_from_distance(pairwise_distance(features), labels, margin);
}

Tensor predict_similarity(const Tensor& features, Real margin) {
  return similarity_from_distance(pairwise_distance(features), margin);
}

Tensor lowrank_loss(const Tensor& assignment, std::size_t rank, const Tensor& target) {
  if (rank < 1 || rank > assignment.cols()) {
    throw TensorError("lowrank_loss: rank " + std::to_string(rank) + " outside [1, " +
                      std::to_string(assignment.cols()) + "]");
  }
  if (target.rows() != assignment.rows() || target.cols() != assignment.rows()) {
    throw TensorError("lowrank_loss: target must be N x N");
  }
  const Tensor m = row_normalize(slice_cols(assignment, 0, rank));
  return sum_squares(sub(matmul(m, transpose(m)), target));
}

RankSelection select_rank(const AssignmentMatrix& m, const SimilarityMatrix& s, std::size_t max_rank) {
  const std::size_t n = m.rows;
  if (s.n != n) throw TensorError("select_rank: similarity size does not match assignment rows");
  if (m.cols == 0) throw TensorError("select_rank: assignment has no columns");
  const std::size_t limit = max_rank == 0 ? m.cols : std::min(max_rank, m.cols);

  // Accumulate the unnormalized Gram matrix P_r P_r^T and row sums column by
  // column; normalization is applied on the fly. Rows with no mass in the
  // first r columns reconstruct to zero.
  std::vector<Real> gram(n * n, 0.0);
  std::vector<Real> row_sum(n, 0.0);
  RankSelection out;
  out.errors.reserve(limit);
  Real best = std::numeric_limits<Real>::infinity();
  for (std::size_t r = 1; r <= limit; ++r) {
    const std::size_t col = r - 1;
    for (std::size_t i = 0; i < n; ++i) {
      const Real pi = m.values[i * m.cols + col];
      row_sum[i] += pi;
      if (pi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) gram[i * n + j] += pi * m.values[j * m.cols + col];
    }
    Real err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real si = row_sum[i];
      for (std::size_t j = 0; j < n; ++j) {
        const Real sj = row_sum[j];
        const Real recon = (si > 0 && sj > 0) ? gram[i * n + j] / (si * sj) : 0.0;
        const Real diff = recon - s.values[i * n + j];
        err += diff * diff;
      }
    }
    out.errors.push_back(err);
    if (err < best) {
      best = err;
      out.rank = r;
    }
  }
  out.error = best;
  out.truncated.rows = n;
  out.truncated.cols = out.rank;
  out.truncated.values.assign(n * out.rank, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Real total = 0;
    for (std::size_t j = 0; j < out.rank; ++j) total += m.values[i * m.cols + j];
    if (!(total > 0)) continue;
    for (std::size_t j = 0; j < out.rank; ++j) out.truncated.values[i * out.rank + j] = m.values[i * m.cols + j] / total;
  }
  return out;
}

std::vector<int> segment_block(const AssignmentMatrix& m) {
  std::vector<std::size_t> arg(m.rows, 0);
  std::vector<char> used(m.cols, 0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols; ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    arg[i] = best;
    used[best] = 1;
  }
  std::vector<int> remap(m.cols, -1);
  int next = 0;
  for (std::size_t j = 0; j < m.cols; ++j) {
    if (used[j]) remap[j] = next++;
  }
  std::vector<int> ids(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) ids[i] = remap[arg[i]];
  return ids;
}

std::vector<int> group_by_similarity(const SimilarityMatrix& s, Real threshold) {
  std::vector<int> ids(s.n, -1);
  int next = 0;
  for (std::size_t seed = 0; seed < s.n; ++seed) {
    if (ids[seed] != -1) continue;
    for (std::size_t j = seed; j < s.n; ++j) {
      if (ids[j] == -1 && (j == seed || s(seed, j) > threshold)) ids[j] = next;
    }
    ++next;
  }
  return ids;
}

// ---- network ---------------------------------------------------------------

PriorNet::PriorNet(const PriorNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.max_rank < 1) throw TensorError("PriorNet: max_rank must be positive");
  point1_ = Linear(params_, "prior.feat.point1", 3, 64);
  point2_ = Linear(params_, "prior.feat.point2", 64, 128);
  fuse_ = Linear(params_, "prior.feat.fuse", 256, config_.feature_dim);
  head1_ = Linear(params_, "prior.head.fc1", config_.block_size, 512);
  head2_ = Linear(params_, "prior.head.fc2", 512, 256);
  head3_ = Linear(params_, "prior.head.fc3", 256, 128);
  head_out_ = Linear(params_, "prior.head.out", 128, config_.max_rank);
  init_parameters(params_, seed);
}

Tensor PriorNet::features(const Block& block) const {
  if (block.points.size() != config_.block_size) {
    throw TensorError("PriorNet: block has " + std::to_string(block.points.size()) + " points, expected " +
                      std::to_string(config_.block_size));
  }
  const auto local = block.local_points();
  return features(local);
}

Tensor PriorNet::features(std::span<const Point3> local_points) const {
  const std::size_t n = local_points.size();
  if (n == 0) throw TensorError("PriorNet: empty point set");
  std::vector<Real> xyz;
  xyz.reserve(n * 3);
  for (const auto& p : local_points) {
    xyz.push_back(p.x);
    xyz.push_back(p.y);
    xyz.push_back(p.z);
  }
  const Tensor x = Tensor::from(n, 3, std::move(xyz));
  const Tensor h1 = relu(point1_(x));
  const Tensor h2 = relu(point2_(h1));
  const Tensor context = max_pool_rows(h2);
  // Emitted in units of the margin: the network works at unit scale and the
  // contrastive geometry does not depend on the margin value.
  return scale(fuse_(concat_rows(h2, repeat_rows(context, n))), config_.margin);
}

Tensor PriorNet::head(const Tensor& s_pred) const {
  if (s_pred.cols() != config_.block_size) {
    throw TensorError("PriorNet head: similarity rows have length " + std::to_string(s_pred.cols()) +
                      ", expected " + std::to_string(config_.block_size));
  }
  Tensor h = relu(head1_(s_pred));
  h = relu(head2_(h));
  h = relu(head3_(h));
  return softmax_rows(head_out_(h));
}

BlockPrediction predict_block(const PriorNet& net, const Block& block, BlockDecoder decoder) {
  NoGradGuard no_grad;
  BlockPrediction out;
  out.features = net.features(block);
  const Tensor s = predict_similarity(out.features, net.config().margin);
  out.s_pred = SimilarityMatrix::from_tensor(s);
  if (decoder == BlockDecoder::LowRank) {
    out.assignment = AssignmentMatrix::from_tensor(net.head(s));
    out.selection = select_rank(out.assignment, out.s_pred, net.config().max_rank);
    out.segments = segment_block(out.selection.truncated);
  } else {
    out.segments = group_by_similarity(out.s_pred);
  }
  out.segment_count = distinct_count(out.segments);
  return out;
}

// ---- training --------------------------------------------------------------

std::vector<TrainingBlock> balance_blocks(const std::vector<TrainingBlock>& pool, std::size_t per_count,
                                          std::size_t max_rank, std::uint64_t seed,
                                          const std::function<void(const std::string&)>& warn) {
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const std::size_t c = pool[i].segment_count;
    if (c >= 1 && c <= max_rank) buckets[c].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<TrainingBlock> out;
  for (std::size_t c = 1; c <= max_rank; ++c) {
    auto& idx = buckets[c];
    if (idx.empty()) {
      if (warn) warn("no training blocks with segment count " + std::to_string(c));
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() < per_count && warn) {
      warn("segment count " + std::to_string(c) + ": only " + std::to_string(idx.size()) + " of " +
           std::to_string(per_count) + " requested blocks available");
    }
    for (std::size_t k = 0; k < std::min(per_count, idx.size()); ++k) out.push_back(pool[idx[k]]);
  }
  return out;
}

std::vector<EpochLoss> train_priornet(PriorNet& net, const std::vector<TrainingBlock>& blocks,
                                      const PriorTrainConfig& config,
                                      const std::function<void(const EpochLoss&)>& on_epoch) {
  if (blocks.empty()) throw TensorError("train_priornet: no training blocks");
  if (config.batch_size == 0) throw TensorError("train_priornet: batch size must be positive");
  const Real margin = net.config().margin;
  ParameterSet trainable = config.use_lowrank_loss ? net.params().subset("") : net.params().subset("prior.feat.");
  Adam adam(config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(blocks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochLoss> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss entry{epoch, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Real inv_batch = 1.0 / static_cast<Real>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const TrainingBlock& tb = blocks[order[k]];
        const Tensor d = pairwise_distance(net.features(tb.block));
        Tensor loss = similarity_loss_from_distance(d, tb.block.labels, margin);
        entry.similarity += loss.item();
        if (config.use_lowrank_loss) {
          const Tensor m = net.head(similarity_from_distance(d, margin));
          const Tensor lr = lowrank_loss(m, tb.segment_count, gt_similarity(tb.block.labels).tensor());
          entry.lowrank += lr.item();
          loss = add(loss, lr);
        }
        backward(scale(loss, inv_batch));
      }
      adam.step(trainable);
    }
    entry.similarity /= static_cast<Real>(blocks.size());
    entry.lowrank /= static_cast<Real>(blocks.size());
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

void write_loss_log(std::ostream& out, const std::vector<EpochLoss>& log) {
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.10g\t%.10g\n", e.epoch, e.similarity, e.lowrank);
    out << buf;
  }
}

}  // namespace fgseg
