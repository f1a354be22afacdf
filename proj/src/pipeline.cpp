#include "fgseg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fgseg {

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t prior_fingerprint(const PriorNet& net) { return net.params().fingerprint(); }

void require_file(const std::filesystem::path& p, const std::string& hint) {
  if (!std::filesystem::exists(p)) throw PipelineError("missing " + p.string() + " (" + hint + ")");
}

}  // namespace

RunLayout::RunLayout(const PipelineConfig& config)
    : out(config.out_dir), prior_dir(config.prior_dir.empty() ? config.out_dir : config.prior_dir) {}

PriorNetConfig prior_net_config(const PipelineConfig& c) {
  PriorNetConfig p;
  p.block_size = c.block_size;
  p.max_rank = c.max_rank;
  p.margin = c.margin;
  return p;
}

MergeNetConfig merge_net_config(const PipelineConfig& c) {
  MergeNetConfig m;
  m.feature_dim = PriorNetConfig{}.feature_dim;
  m.layers = c.layers;
  m.max_rank = c.merge_max_rank;
  m.margin = c.margin;
  return m;
}

BlockDecoder prior_decoder(const PipelineConfig& c) {
  return c.prior_lowrank ? BlockDecoder::LowRank : BlockDecoder::SimilarityGrouping;
}

BlockDecoder merge_decoder(const PipelineConfig& c) {
  return c.merge_lowrank ? BlockDecoder::LowRank : BlockDecoder::SimilarityGrouping;
}

std::string merge_group(const PipelineConfig& c, ShapeFamily family) {
  return c.per_family ? std::string(family_name(family)) : std::string("pooled");
}

std::string shape_id(const ManifestEntry& entry) { return std::filesystem::path(entry.path).stem().string(); }

Manifest generate_data(const PipelineConfig& c, const Logger& log) {
  DatasetConfig d;
  d.families = c.families;
  d.shapes_per_family = c.shapes_per_family;
  d.points_total = c.points_per_shape;
  d.min_parts = static_cast<int>(c.min_parts);
  d.max_parts = static_cast<int>(c.max_parts);
  d.train_fraction = c.train_fraction;
  d.seed = c.seed;
  Manifest m = make_dataset(d, c.data_dir);
  say(log, "generated " + std::to_string(m.entries.size()) + " shapes in " + c.data_dir.string());
  return m;
}

Manifest load_manifest(const PipelineConfig& c) {
  const auto path = c.data_dir / "manifest.tsv";
  require_file(path, "run gen-data first");
  return read_manifest(path);
}

PointCloud load_shape(const Manifest& manifest, const ManifestEntry& entry) {
  return normalize_cloud(read_cloud(manifest.resolve(entry)));
}

std::vector<TrainingBlock> collect_training_blocks(const PipelineConfig& c, const Manifest& manifest) {
  std::vector<TrainingBlock> pool;
  for (const auto& entry : manifest.split(true)) {
    const PointCloud cloud = load_shape(manifest, entry);
    if (!cloud.has_labels()) throw PipelineError("training shape " + entry.path + " has no labels");
    for (const auto& cell : partition(cloud, c.resolution)) {
      TrainingBlock tb{resample_block(cloud, cell, c.resolution, c.block_size, cell_seed(c.seed, cell.cell)), 0};
      tb.block.members.clear();
      tb.segment_count = distinct_count(tb.block.labels);
      pool.push_back(std::move(tb));
    }
  }
  return pool;
}

PriorNet train_prior_stage(const PipelineConfig& c, const Logger& log) {
  c.validate();
  const Manifest manifest = load_manifest(c);
  const auto pool = collect_training_blocks(c, manifest);
  const auto blocks = balance_blocks(pool, c.per_count, c.max_rank, c.seed, [&](const std::string& w) {
    say(log, "warning: " + w);
  });
  say(log, "prior: " + std::to_string(blocks.size()) + " training blocks from a pool of " +
               std::to_string(pool.size()));
  PriorNet net(prior_net_config(c), c.seed);
  PriorTrainConfig t;
  t.per_count = c.per_count;
  t.epochs = c.prior_epochs;
  t.batch_size = c.prior_batch;
  t.learning_rate = c.prior_lr;
  t.use_lowrank_loss = c.prior_lowrank;
  t.seed = c.seed;
  const auto history = train_priornet(net, blocks, t, [&](const EpochLoss& e) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "prior epoch %zu  L_sim %.6g  L_lowrank %.6g", e.epoch, e.similarity, e.lowrank);
    say(log, buf);
  });
  const RunLayout layout(c);
  std::filesystem::create_directories(layout.prior_dir);
  save_checkpoint(layout.prior_checkpoint(), net.params());
  std::ofstream out(layout.prior_log());
  write_loss_log(out, history);
  return net;
}

PriorNet load_prior(const PipelineConfig& c) {
  const RunLayout layout(c);
  require_file(layout.prior_checkpoint(), "run train-prior first");
  PriorNet net(prior_net_config(c), 0);
  try {
    load_checkpoint(layout.prior_checkpoint(), net.params());
  } catch (const CheckpointError& e) {
    throw CheckpointError(std::string("PriorNet checkpoint does not match the configuration: ") + e.what());
  }
  return net;
}

std::size_t segment_blocks_stage(const PipelineConfig& c, bool include_test, const Logger& log) {
  c.validate();
  const Manifest manifest = load_manifest(c);
  const PriorNet prior = load_prior(c);
  const RunLayout layout(c);
  std::filesystem::create_directories(layout.blocks_dir());
  std::size_t count = 0;
  for (const auto& entry : manifest.entries) {
    if (!entry.train && !include_test) continue;
    const PointCloud cloud = load_shape(manifest, entry);
    const auto blocks = segment_blocks(prior, cloud, c.resolution, c.seed, prior_decoder(c), c.threads);
    write_block_segmentation(layout.block_file(shape_id(entry)), blocks);
    ++count;
    say(log, "segmented blocks of " + shape_id(entry));
  }
  std::ofstream id(layout.blocks_dir() / "prior.id");
  id << hex(prior_fingerprint(prior)) << '\n';
  return count;
}

Real adjacency_epsilon(const PipelineConfig& c, const PointCloud& cloud) {
  return c.epsilon_policy == EpsilonPolicy::Spacing ? c.epsilon_value * median_nn_spacing(cloud.points)
                                                    : c.epsilon_value;
}

void train_merge_stage(const PipelineConfig& c, const Logger& log) {
  c.validate();
  const Manifest manifest = load_manifest(c);
  const PriorNet prior = load_prior(c);
  const RunLayout layout(c);
  const auto id_path = layout.blocks_dir() / "prior.id";
  require_file(id_path, "run segment-blocks first");
  {
    std::ifstream in(id_path);
    std::string stored;
    in >> stored;
    if (stored != hex(prior_fingerprint(prior))) {
      throw PipelineError("block segmentations in " + layout.blocks_dir().string() +
                          " were made by a different PriorNet; rerun segment-blocks");
    }
  }

  std::vector<std::string> groups;
  for (auto fam : c.families) {
    const auto g = merge_group(c, fam);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  std::filesystem::create_directories(layout.out);
  for (const auto& group : groups) {
    std::vector<MergeSample> samples;
    for (const auto& entry : manifest.split(true)) {
      if (std::find(c.families.begin(), c.families.end(), entry.family) == c.families.end()) continue;
      if (merge_group(c, entry.family) != group) continue;
      const PointCloud cloud = load_shape(manifest, entry);
      const auto path = layout.block_file(shape_id(entry));
      require_file(path, "run segment-blocks first");
      MergeSample s{build_segment_graph(cloud, read_block_segmentation(path), adjacency_epsilon(c, cloud)), {}};
      s.node_labels = gt_segment_labels(s.graph, *cloud.labels);
      samples.push_back(std::move(s));
    }
    if (samples.empty()) throw PipelineError("merge group '" + group + "' has no training shapes");
    MergeNet net(merge_net_config(c), c.seed);
    MergeTrainConfig t;
    t.epochs = c.merge_epochs;
    t.batch_size = c.merge_batch;
    t.learning_rate = c.merge_lr;
    t.use_lowrank_loss = c.merge_lowrank;
    t.seed = c.seed;
    say(log, "merge[" + group + "]: " + std::to_string(samples.size()) + " training shapes");
    const auto history = train_mergenet(net, samples, t, [&](const MergeEpochLoss& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "merge[%s] epoch %zu  L_sim %.6g  L_lowrank %.6g", group.c_str(), e.epoch,
                    e.similarity, e.lowrank);
      say(log, buf);
    });
    save_checkpoint(layout.merge_checkpoint(group), net.params());
    std::ofstream out(layout.merge_log(group));
    char buf[96];
    for (const auto& e : history) {
      std::snprintf(buf, sizeof buf, "%zu\t%.10g\t%.10g\n", e.epoch, e.similarity, e.lowrank);
      out << buf;
    }
  }
}

MergeNet load_merge(const PipelineConfig& c, const std::string& group) {
  const RunLayout layout(c);
  require_file(layout.merge_checkpoint(group), "run train-merge first");
  MergeNet net(merge_net_config(c), 0);
  try {
    load_checkpoint(layout.merge_checkpoint(group), net.params());
  } catch (const CheckpointError& e) {
    throw CheckpointError(std::string("MergeNet checkpoint does not match the configuration: ") + e.what());
  }
  return net;
}

std::vector<int> segment_cloud(const PipelineConfig& c, const PriorNet& prior, const MergeNet& merge,
                               const PointCloud& cloud) {
  const auto blocks = segment_blocks(prior, cloud, c.resolution, c.seed, prior_decoder(c), c.threads);
  const SegmentGraph graph = build_segment_graph(cloud, blocks, adjacency_epsilon(c, cloud));
  return assign_parts(graph, predict_parts(merge, graph, merge_decoder(c)).node_parts);
}

std::size_t segment_stage(const PipelineConfig& c, const Logger& log) {
  c.validate();
  const Manifest manifest = load_manifest(c);
  const PriorNet prior = load_prior(c);
  const RunLayout layout(c);
  std::filesystem::create_directories(layout.parts_dir());
  std::map<std::string, MergeNet> merges;
  std::size_t count = 0;
  for (const auto& entry : manifest.split(false)) {
    if (std::find(c.families.begin(), c.families.end(), entry.family) == c.families.end()) continue;
    const auto group = merge_group(c, entry.family);
    if (!merges.contains(group)) merges.emplace(group, load_merge(c, group));
    const PointCloud cloud = load_shape(manifest, entry);
    const auto parts = segment_cloud(c, prior, merges.at(group), cloud);
    write_segmentation(layout.parts_file(shape_id(entry)), parts);
    say(log, "segmented " + shape_id(entry) + ": " + std::to_string(distinct_count(parts)) + " parts");
    ++count;
  }
  return count;
}

EvalSummary eval_stage(const PipelineConfig& c, const Logger& log) {
  const Manifest manifest = load_manifest(c);
  const RunLayout layout(c);
  std::vector<ShapeEval> shapes;
  for (const auto& entry : manifest.split(false)) {
    if (std::find(c.families.begin(), c.families.end(), entry.family) == c.families.end()) continue;
    const auto path = layout.parts_file(shape_id(entry));
    require_file(path, "run segment first");
    const PointCloud cloud = load_shape(manifest, entry);
    if (!cloud.has_labels()) throw PipelineError("test shape " + entry.path + " has no labels");
    SegmentationResult r{shape_id(entry), read_segmentation(path), *cloud.labels};
    ShapeEval e{r.shape_id, avg_iou(r), hungarian_iou(r)};
    e.report.small_part_average = small_part_iou(r, cloud.points);
    shapes.push_back(std::move(e));
  }
  if (shapes.empty()) throw PipelineError("no test shapes to evaluate");
  EvalSummary summary = summarize(std::move(shapes));
  write_eval_report(layout.eval_report(), summary);
  char buf[96];
  std::snprintf(buf, sizeof buf, "average IoU %.4f over %zu shapes", summary.mean_iou, summary.shapes.size());
  say(log, buf);
  return summary;
}

std::vector<SweepRow> ablation_sweep(const PipelineConfig& c, const std::vector<int>& resolutions,
                                     const std::vector<std::size_t>& layers, bool train_missing,
                                     const Logger& log) {
  std::vector<SweepRow> rows;
  for (int r : resolutions) {
    for (std::size_t l : layers) {
      PipelineConfig s = c;
      s.resolution = r;
      s.layers = l;
      s.prior_dir = c.out_dir / "sweep" / ("res" + std::to_string(r));
      s.out_dir = s.prior_dir / ("L" + std::to_string(l));
      SweepRow row{r, l, std::nullopt, ""};
      try {
        const RunLayout layout(s);
        if (!std::filesystem::exists(layout.prior_checkpoint())) {
          if (!train_missing) throw PipelineError("missing PriorNet checkpoint " + layout.prior_checkpoint().string());
          train_prior_stage(s, log);
        }
        bool have_merge = true;
        for (auto fam : s.families) have_merge = have_merge && std::filesystem::exists(layout.merge_checkpoint(merge_group(s, fam)));
        if (!have_merge) {
          if (!train_missing) throw PipelineError("missing MergeNet checkpoint in " + layout.out.string());
          const auto id = layout.blocks_dir() / "prior.id";
          if (!std::filesystem::exists(id)) segment_blocks_stage(s, false, log);
          train_merge_stage(s, log);
        }
        segment_stage(s, log);
        row.avg_iou = eval_stage(s, log).mean_iou;
      } catch (const std::exception& e) {
        row.note = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << "resolution\tlayers\tavg_iou\tnote\n";
  char buf[64];
  for (const auto& r : rows) {
    if (r.avg_iou) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.avg_iou);
    } else {
      std::snprintf(buf, sizeof buf, "NA");
    }
    std::string note = r.note;
    for (auto& ch : note) {
      if (ch == '\t' || ch == '\n') ch = ' ';
    }
    out << r.resolution << '\t' << r.layers << '\t' << buf << '\t' << (note.empty() ? "-" : note) << '\n';
  }
}

void save_effective_config(const PipelineConfig& c) {
  std::filesystem::create_directories(c.out_dir);
  std::ofstream out(c.out_dir / "config.ini");
  write_config(out, c);
}

}  // namespace fgseg
