#include "fgseg/mergenet.hpp"

#include "fgseg/synthdata.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace fgseg {

BlockSegmentation segment_one_block(const PriorNet& net, const PointCloud& cloud, const CellMembers& cell,
                                    int resolution, std::uint64_t seed, BlockDecoder decoder) {
  const Block block =
      resample_block(cloud, cell, resolution, net.config().block_size, cell_seed(seed, cell.cell));
  const BlockPrediction pred = predict_block(net, block, decoder);

  BlockSegmentation out;
  out.cell = cell.cell;
  out.members = cell.members;
  out.segment_count = pred.segment_count;
  out.member_segments.resize(cell.members.size());
  for (std::size_t m = 0; m < cell.members.size(); ++m) {
    const Point3 p = cloud.points[cell.members[m]];
    std::size_t best = 0;
    Real best_d = squared_distance(p, block.points[0]);
    for (std::size_t s = 1; s < block.points.size() && best_d > 0; ++s) {
      const Real d = squared_distance(p, block.points[s]);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    out.member_segments[m] = pred.segments[best];
  }

  const std::size_t f = pred.features.cols();
  out.features.assign(out.segment_count, std::vector<Real>(f, -std::numeric_limits<Real>::infinity()));
  const auto feat = pred.features.data();
  for (std::size_t s = 0; s < pred.segments.size(); ++s) {
    auto& dst = out.features[static_cast<std::size_t>(pred.segments[s])];
    for (std::size_t c = 0; c < f; ++c) dst[c] = std::max(dst[c], feat[s * f + c]);
  }
  return out;
}

std::vector<BlockSegmentation> segment_blocks(const PriorNet& net, const PointCloud& cloud, int resolution,
                                              std::uint64_t seed, BlockDecoder decoder, std::size_t threads) {
  const auto cells = partition(cloud, resolution);
  std::vector<BlockSegmentation> out(cells.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out[i] = segment_one_block(net, cloud, cells[i], resolution, seed, decoder);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) return;
        try {
          out[i] = segment_one_block(net, cloud, cells[i], resolution, seed, decoder);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

void write_block_segmentation(const std::filesystem::path& path, const std::vector<BlockSegmentation>& blocks) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (const auto& b : blocks) {
    out << "B\t" << b.cell.i << '\t' << b.cell.j << '\t' << b.cell.k << '\t' << b.segment_count << '\n';
    for (std::size_t s = 0; s < b.features.size(); ++s) {
      out << "F\t" << s;
      for (Real v : b.features[s]) {
        std::snprintf(buf, sizeof buf, "\t%.17g", v);
        out << buf;
      }
      out << '\n';
    }
    for (std::size_t m = 0; m < b.members.size(); ++m) out << "P\t" << b.members[m] << '\t' << b.member_segments[m] << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<BlockSegmentation> read_block_segmentation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open block segmentation: " + path.string());
  std::vector<BlockSegmentation> out;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    char tag = 0;
    ss >> tag;
    if (tag == 'B') {
      BlockSegmentation b;
      if (!(ss >> b.cell.i >> b.cell.j >> b.cell.k >> b.segment_count)) fail("malformed block record");
      out.push_back(std::move(b));
      continue;
    }
    if (out.empty()) fail("record before the first block");
    auto& b = out.back();
    if (tag == 'F') {
      std::size_t s = 0;
      if (!(ss >> s) || s != b.features.size()) fail("feature records out of order");
      std::vector<Real> f;
      Real v = 0;
      while (ss >> v) f.push_back(v);
      b.features.push_back(std::move(f));
    } else if (tag == 'P') {
      std::size_t idx = 0;
      int seg = 0;
      if (!(ss >> idx >> seg)) fail("malformed point record");
      if (seg < 0 || static_cast<std::size_t>(seg) >= b.segment_count) fail("segment id out of range");
      b.members.push_back(idx);
      b.member_segments.push_back(seg);
    } else {
      fail("unknown record tag");
    }
  }
  for (const auto& b : out) {
    if (b.features.size() != b.segment_count) throw DataError(path.string() + ": block feature count mismatch");
  }
  return out;
}

// ---- segment graph -----------------------------------------------------------

std::size_t SegmentGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& nb : neighbors) total += nb.size();
  return total / 2;
}

Tensor SegmentGraph::features() const {
  if (nodes.empty()) throw TensorError("segment graph has no nodes");
  const std::size_t f = nodes.front().feature.size();
  std::vector<Real> data;
  data.reserve(nodes.size() * f);
  for (const auto& n : nodes) data.insert(data.end(), n.feature.begin(), n.feature.end());
  return Tensor::from(nodes.size(), f, std::move(data));
}

std::size_t SegmentGraph::point_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes) total += n.members.size();
  return total;
}

SegmentGraph build_segment_graph(const PointCloud& cloud, const std::vector<BlockSegmentation>& blocks,
                                 Real epsilon) {
  if (blocks.empty()) throw GeometryError("build_segment_graph: empty segmentation");
  std::vector<const BlockSegmentation*> order;
  for (const auto& b : blocks) order.push_back(&b);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->cell < b->cell; });

  SegmentGraph g;
  std::vector<char> seen(cloud.size(), 0);
  for (const auto* b : order) {
    if (b->members.size() != b->member_segments.size()) {
      throw GeometryError("build_segment_graph: member and segment lists differ in length");
    }
    std::vector<Segment> segs(b->segment_count);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      segs[s].cell = b->cell;
      segs[s].block_segment = static_cast<int>(s);
      segs[s].feature = b->features.at(s);
    }
    for (std::size_t m = 0; m < b->members.size(); ++m) {
      const std::size_t idx = b->members[m];
      if (idx >= cloud.size() || seen[idx]) {
        throw GeometryError("build_segment_graph: point " + std::to_string(idx) + " is out of range or repeated");
      }
      seen[idx] = 1;
      segs[static_cast<std::size_t>(b->member_segments[m])].members.push_back(idx);
    }
    for (auto& s : segs) {
      if (s.members.empty()) throw GeometryError("build_segment_graph: empty segment");
      std::vector<Point3> pts;
      pts.reserve(s.members.size());
      for (auto idx : s.members) pts.push_back(cloud.points[idx]);
      s.box = aabb_of(pts);
      g.nodes.push_back(std::move(s));
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw GeometryError("build_segment_graph: segments do not cover the cloud");
  }
  const std::size_t n = g.nodes.size();
  g.neighbors.assign(n, {});
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (aabb_intersect(g.nodes[u].box, g.nodes[v].box, epsilon)) {
        g.neighbors[u].push_back(v);
        g.neighbors[v].push_back(u);
      }
    }
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  return g;
}

Real default_adjacency_epsilon(const PointCloud& cloud) { return 2.0 * median_nn_spacing(cloud.points); }

Tensor neighbor_mean(const Tensor& messages, const std::vector<std::vector<std::size_t>>& neighbors) {
  const std::size_t n = messages.rows(), c = messages.cols();
  if (neighbors.size() != n) throw TensorError("neighbor_mean: adjacency size does not match node count");
  Buffer out(n * c, 0.0);
  const auto m = messages.data();
  std::vector<Real> column;
  for (std::size_t v = 0; v < n; ++v) {
    const auto& nb = neighbors[v];
    if (nb.empty()) continue;
    for (std::size_t k = 0; k < c; ++k) {
      column.clear();
      for (auto u : nb) {
        if (u >= n || u == v) throw TensorError("neighbor_mean: invalid neighbor index");
        column.push_back(m[u * c + k]);
      }
      std::sort(column.begin(), column.end());
      Real total = 0;
      for (Real x : column) total += x;
      out[v * c + k] = total / static_cast<Real>(nb.size());
    }
  }
  return Tensor::make_result(n, c, std::move(out), {messages}, [neighbors](detail::Node& node) {
    auto& pm = *node.parents[0];
    if (!pm.requires_grad) return;
    auto& g = pm.grad_buffer();
    const std::size_t c = node.cols;
    for (std::size_t v = 0; v < node.rows; ++v) {
      const auto& nb = neighbors[v];
      if (nb.empty()) continue;
      const Real w = 1.0 / static_cast<Real>(nb.size());
      for (auto u : nb)
        for (std::size_t k = 0; k < c; ++k) g[u * c + k] += w * node.grad[v * c + k];
    }
  });
}

std::vector<int> gt_segment_labels(const SegmentGraph& graph, std::span<const int> point_labels) {
  std::vector<int> out;
  out.reserve(graph.size());
  for (const auto& node : graph.nodes) {
    std::map<int, std::size_t> votes;
    for (auto idx : node.members) {
      if (idx >= point_labels.size()) throw GeometryError("gt_segment_labels: member index out of range");
      ++votes[point_labels[idx]];
    }
    int best = votes.begin()->first;
    std::size_t best_count = votes.begin()->second;
    for (const auto& [label, count] : votes) {
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    out.push_back(best);
  }
  return out;
}

// ---- network -------------------------------------------------------------------

MergeNet::MergeNet(const MergeNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.max_rank < 1) throw TensorError("MergeNet: max_rank must be positive");
  const std::size_t f = config_.feature_dim;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string base = "merge.mp" + std::to_string(l);
    msg_.emplace_back(params_, base + ".msg", f, f);
    upd_.emplace_back(params_, base + ".upd", 2 * f, f);
  }
  head1_ = Linear(params_, "merge.head.fc1", config_.head_width, 512);
  head2_ = Linear(params_, "merge.head.fc2", 512, 256);
  head3_ = Linear(params_, "merge.head.fc3", 256, 128);
  head_out_ = Linear(params_, "merge.head.out", 128, config_.max_rank);
  init_parameters(params_, seed);
}

Tensor MergeNet::propagate(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) const {
  Tensor h = x;
  for (std::size_t l = 0; l < msg_.size(); ++l) {
    const Tensor a = neighbor_mean(relu(msg_[l](h)), neighbors);
    h = upd_[l](concat_rows(h, a));
    if (l + 1 < msg_.size()) h = relu(h);
  }
  return h;
}

Tensor MergeNet::embed(const SegmentGraph& graph) const {
  const Tensor x = graph.features();
  if (x.cols() != config_.feature_dim) {
    throw TensorError("MergeNet: node features have width " + std::to_string(x.cols()) + ", expected " +
                      std::to_string(config_.feature_dim));
  }
  return scale(propagate(scale(x, 1.0 / config_.margin), graph.neighbors), config_.margin);
}

Tensor MergeNet::head(const Tensor& s_pred) const {
  const std::size_t w = config_.head_width;
  const Tensor rows = s_pred.cols() >= w ? slice_cols(s_pred, 0, w) : pad_cols(s_pred, w);
  Tensor h = relu(head1_(rows));
  h = relu(head2_(h));
  h = relu(head3_(h));
  return softmax_rows(head_out_(h));
}

MergePrediction predict_parts(const MergeNet& net, const SegmentGraph& graph, BlockDecoder decoder) {
  if (graph.size() == 0) throw TensorError("predict_parts: graph has no nodes");
  NoGradGuard no_grad;
  const Tensor s = predict_similarity(net.embed(graph), net.config().margin);
  const SimilarityMatrix sm = SimilarityMatrix::from_tensor(s);
  MergePrediction out;
  if (decoder == BlockDecoder::LowRank) {
    const AssignmentMatrix m = AssignmentMatrix::from_tensor(net.head(s));
    out.selection = select_rank(m, sm, std::min(net.config().max_rank, graph.size()));
    out.node_parts = segment_block(out.selection.truncated);
  } else {
    out.node_parts = group_by_similarity(sm);
  }
  out.part_count = distinct_count(out.node_parts);
  return out;
}

std::vector<int> assign_parts(const SegmentGraph& graph, const std::vector<int>& node_parts) {
  if (node_parts.size() != graph.size()) throw GeometryError("assign_parts: one part id per node required");
  std::size_t total = 0;
  for (const auto& n : graph.nodes)
    for (auto idx : n.members) total = std::max(total, idx + 1);
  std::vector<int> out(total, -1);
  for (std::size_t v = 0; v < graph.size(); ++v)
    for (auto idx : graph.nodes[v].members) out[idx] = node_parts[v];
  if (std::find(out.begin(), out.end(), -1) != out.end()) throw GeometryError("assign_parts: uncovered point");
  return out;
}

// ---- training --------------------------------------------------------------------

std::vector<MergeEpochLoss> train_mergenet(MergeNet& net, const std::vector<MergeSample>& samples,
                                           const MergeTrainConfig& config,
                                           const std::function<void(const MergeEpochLoss&)>& on_epoch) {
  if (samples.empty()) throw TensorError("train_mergenet: no training shapes");
  if (config.batch_size == 0) throw TensorError("train_mergenet: batch size must be positive");
  const Real margin = net.config().margin;
  ParameterSet trainable = config.use_lowrank_loss ? net.params().subset("") : net.params().subset("merge.mp");
  Adam adam(config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<MergeEpochLoss> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    MergeEpochLoss entry{epoch, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Real inv_batch = 1.0 / static_cast<Real>(end - start);
      bool stepped = false;
      for (std::size_t k = start; k < end; ++k) {
        const MergeSample& sample = samples[order[k]];
        const Tensor d = pairwise_distance(net.embed(sample.graph));
        Tensor loss = similarity_loss_from_distance(d, sample.node_labels, margin);
        entry.similarity += loss.item();
        if (config.use_lowrank_loss) {
          const std::size_t rank =
              std::min({distinct_count(sample.node_labels), net.config().max_rank, sample.graph.size()});
          const Tensor m = net.head(similarity_from_distance(d, margin));
          const Tensor lr = lowrank_loss(m, rank, gt_similarity(sample.node_labels).tensor());
          entry.lowrank += lr.item();
          loss = add(loss, lr);
        }
        if (loss.requires_grad()) {
          backward(scale(loss, inv_batch));
          stepped = true;
        }
      }
      if (stepped) adam.step(trainable);
    }
    entry.similarity /= static_cast<Real>(samples.size());
    entry.lowrank /= static_cast<Real>(samples.size());
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

void write_segmentation(const std::filesystem::path& path, const std::vector<int>& parts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < parts.size(); ++i) out << i << '\t' << parts[i] << '\n';
  out << "#parts=" << distinct_count(parts) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<int> read_segmentation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open segmentation: " + path.string());
  std::vector<int> parts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t idx = 0;
    int part = 0;
    if (!(ss >> idx >> part) || part < 0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed segmentation row");
    }
    if (idx != parts.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": point indices must be consecutive");
    }
    parts.push_back(part);
  }
  return parts;
}

}  // namespace fgseg
