#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fgseg/config.hpp"
#include "fgseg/eval.hpp"
#include "fgseg/mergenet.hpp"
#include "fgseg/priornet.hpp"
#include "fgseg/synthdata.hpp"

namespace fgseg {

/// A stage input is missing or stale.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Logger = std::function<void(const std::string&)>;

// On-disk layout of a run directory:
//   prior.ckpt, prior_loss.tsv                 PriorNet and its loss log
//   blocks/<shape>.blk, blocks/prior.id        per-block segmentations and the prior they came from
//                                              (prior.ckpt and blocks/ sit in run.prior_dir when set)
//   merge_<family|pooled>.ckpt, *_loss.tsv     MergeNets and their loss logs
//   parts/<shape>.tsv                          per-point part ids
//   eval.tsv                                   evaluation report
//   config.ini                                 effective configuration of the last stage
struct RunLayout {
  std::filesystem::path out;
  std::filesystem::path prior_dir;

  explicit RunLayout(const PipelineConfig& config);
  std::filesystem::path prior_checkpoint() const { return prior_dir / "prior.ckpt"; }
  std::filesystem::path prior_log() const { return prior_dir / "prior_loss.tsv"; }
  std::filesystem::path blocks_dir() const { return prior_dir / "blocks"; }
  std::filesystem::path block_file(const std::string& shape) const { return blocks_dir() / (shape + ".blk"); }
  std::filesystem::path merge_checkpoint(const std::string& group) const { return out / ("merge_" + group + ".ckpt"); }
  std::filesystem::path merge_log(const std::string& group) const { return out / ("merge_" + group + "_loss.tsv"); }
  std::filesystem::path parts_dir() const { return out / "parts"; }
  std::filesystem::path parts_file(const std::string& shape) const { return parts_dir() / (shape + ".tsv"); }
  std::filesystem::path eval_report() const { return out / "eval.tsv"; }
};

PriorNetConfig prior_net_config(const PipelineConfig& config);
MergeNetConfig merge_net_config(const PipelineConfig& config);
BlockDecoder prior_decoder(const PipelineConfig& config);
BlockDecoder merge_decoder(const PipelineConfig& config);
/// Merge model group of a family: its name, or "pooled".
std::string merge_group(const PipelineConfig& config, ShapeFamily family);

/// Shape id used for artifact file names: the data file stem.
std::string shape_id(const ManifestEntry& entry);

Manifest generate_data(const PipelineConfig& config, const Logger& log = {});
Manifest load_manifest(const PipelineConfig& config);
/// Reads and normalizes one shape.
PointCloud load_shape(const Manifest& manifest, const ManifestEntry& entry);

/// Resampled blocks of all training shapes with their gt segment counts.
std::vector<TrainingBlock> collect_training_blocks(const PipelineConfig& config, const Manifest& manifest);

PriorNet train_prior_stage(const PipelineConfig& config, const Logger& log = {});
PriorNet load_prior(const PipelineConfig& config);

/// Writes blocks/<shape>.blk for the training shapes (all shapes with
/// `include_test`). Returns the shape count.
std::size_t segment_blocks_stage(const PipelineConfig& config, bool include_test = false, const Logger& log = {});

Real adjacency_epsilon(const PipelineConfig& config, const PointCloud& cloud);

/// Trains every merge group from the stored block segmentations.
void train_merge_stage(const PipelineConfig& config, const Logger& log = {});
MergeNet load_merge(const PipelineConfig& config, const std::string& group);

/// Full chain for one normalized cloud.
std::vector<int> segment_cloud(const PipelineConfig& config, const PriorNet& prior, const MergeNet& merge,
                               const PointCloud& cloud);

/// Segments every test shape into parts/<shape>.tsv. Returns the shape count.
std::size_t segment_stage(const PipelineConfig& config, const Logger& log = {});

/// Scores parts/<shape>.tsv for every test shape and writes eval.tsv.
EvalSummary eval_stage(const PipelineConfig& config, const Logger& log = {});

struct SweepRow {
  int resolution = 0;
  std::size_t layers = 0;
  std::optional<Real> avg_iou;
  std::string note;  // reason when absent
};

/// Average IoU over resolution x layer settings under out/sweep/. Settings
/// without checkpoints are reported absent unless `train_missing` is set.
std::vector<SweepRow> ablation_sweep(const PipelineConfig& config, const std::vector<int>& resolutions,
                                     const std::vector<std::size_t>& layers, bool train_missing,
                                     const Logger& log = {});
void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

void save_effective_config(const PipelineConfig& config);

}  // namespace fgseg
