// Command-line front end for the fine-grained segmentation pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "fgseg/pipeline.hpp"

using namespace fgseg;

namespace {

// Exit codes: 1 unexpected, 2 usage or config, 3 missing or stale stage input,
// 4 malformed data or checkpoint.
[[noreturn]] void die(int code, const std::string& kind, std::string message) {
  for (auto& ch : message) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::fprintf(stderr, "fgseg: error[%s]: %s\n", kind.c_str(), message.c_str());
  std::exit(code);
}

void log_line(const std::string& msg) { std::fprintf(stderr, "[fgseg] %s\n", msg.c_str()); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free fine-grained part segmentation of point clouds"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out_dir;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value config file with [sections]")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "run seed (run.seed)");
  app.add_option("--threads", threads, "inference worker threads (run.threads)");
  app.add_option("--out", out_dir, "output directory (run.out)");
  app.add_option("--set", sets, "override any config key: section.key=value")->take_all();

  std::map<std::string, std::string> field_overrides;
  auto* group = app.add_option_group("config fields", "one flag per config key");
  for (const auto& f : config_fields()) {
    const std::string key = f.qualified();
    group->add_option_function<std::string>(
        "--" + key, [&field_overrides, key](const std::string& v) { field_overrides[key] = v; }, f.help);
  }

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and manifest");
  auto* train_prior = app.add_subcommand("train-prior", "train PriorNet on balanced training blocks");
  auto* seg_blocks = app.add_subcommand("segment-blocks", "segment every block of the training shapes with PriorNet");
  bool seg_blocks_all = false;
  seg_blocks->add_flag("--all", seg_blocks_all, "include test shapes");
  auto* train_merge = app.add_subcommand("train-merge", "train MergeNet from stored block segmentations");

  auto* segment = app.add_subcommand("segment", "segment test shapes, or one cloud with --input");
  std::string seg_input, seg_output, seg_family;
  segment->add_option("--input", seg_input, "point cloud (.xyz/.txt)")->check(CLI::ExistingFile);
  segment->add_option("--output", seg_output, "part file to write (with --input)");
  segment->add_option("--family", seg_family, "merge model to use for --input when models are per family");

  auto* eval = app.add_subcommand("eval", "score test-shape part files, or one prediction with --pred/--gt");
  std::string eval_pred, eval_gt;
  eval->add_option("--pred", eval_pred, "part file")->check(CLI::ExistingFile);
  eval->add_option("--gt", eval_gt, "labeled point cloud")->check(CLI::ExistingFile);

  auto* stats = app.add_subcommand("stats", "segment-count histogram of partition blocks over the dataset");

  auto* export_ply_cmd = app.add_subcommand("export-ply", "write a colored PLY of a cloud");
  std::string ply_input, ply_parts, ply_output;
  export_ply_cmd->add_option("--input", ply_input, "point cloud")->required()->check(CLI::ExistingFile);
  export_ply_cmd->add_option("--parts", ply_parts, "part file; default colors by the cloud's labels")
      ->check(CLI::ExistingFile);
  export_ply_cmd->add_option("--output", ply_output, "PLY path")->required();

  auto* sweep = app.add_subcommand("sweep", "average IoU over partition resolutions and layer counts");
  std::string sweep_res = "5,7,10", sweep_layers = "0,1,2,3,4,5";
  bool sweep_train = false;
  sweep->add_option("--resolutions", sweep_res, "comma-separated cells per axis");
  sweep->add_option("--layers", sweep_layers, "comma-separated message passing depths");
  sweep->add_flag("--train", sweep_train, "train settings whose checkpoints are missing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    die(2, "usage", e.what());
  }

  PipelineConfig cfg;
  try {
    if (!config_path.empty()) load_config(config_path, cfg);
    for (const auto& [k, v] : field_overrides) set_config_value(cfg, k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
  } catch (const ConfigError& e) {
    die(2, "config", e.what());
  }

  try {
    if (gen->parsed()) {
      generate_data(cfg, log_line);
    } else if (train_prior->parsed()) {
      save_effective_config(cfg);
      train_prior_stage(cfg, log_line);
    } else if (seg_blocks->parsed()) {
      segment_blocks_stage(cfg, seg_blocks_all, log_line);
    } else if (train_merge->parsed()) {
      save_effective_config(cfg);
      train_merge_stage(cfg, log_line);
    } else if (segment->parsed()) {
      if (seg_input.empty()) {
        segment_stage(cfg, log_line);
      } else {
        if (seg_output.empty()) throw ConfigError("segment --input needs --output");
        std::string group = "pooled";
        if (cfg.per_family) {
          if (seg_family.empty()) throw ConfigError("segment --input needs --family when merge models are per family");
          group = merge_group(cfg, parse_family(seg_family));
        }
        const PriorNet prior = load_prior(cfg);
        const MergeNet merge = load_merge(cfg, group);
        const PointCloud cloud = normalize_cloud(read_cloud(seg_input));
        const auto parts = segment_cloud(cfg, prior, merge, cloud);
        write_segmentation(seg_output, parts);
        log_line("wrote " + std::to_string(parts.size()) + " points in " + std::to_string(distinct_count(parts)) +
                 " parts to " + seg_output);
      }
    } else if (eval->parsed()) {
      if (eval_pred.empty() != eval_gt.empty()) throw ConfigError("eval needs both --pred and --gt, or neither");
      if (!eval_pred.empty()) {
        const PointCloud gt = read_cloud(eval_gt);
        if (!gt.has_labels()) throw DataError(eval_gt + " has no labels");
        SegmentationResult r{eval_pred, read_segmentation(eval_pred), *gt.labels};
        const IouReport rep = avg_iou(r);
        const auto small = small_part_iou(r, gt.points);
        std::printf("average IoU %.4f\n", rep.average);
        if (small) {
          std::printf("small-part IoU %.4f\n", *small);
        } else {
          std::printf("small-part IoU absent\n");
        }
        std::printf("parts predicted %zu gt %zu\n", rep.predicted_parts, rep.gt_parts);
        std::printf("hungarian IoU %.4f (diagnostic)\n", hungarian_iou(r));
      } else {
        const EvalSummary s = eval_stage(cfg, log_line);
        std::printf("average IoU %.4f\n", s.mean_iou);
        if (s.mean_small_part_iou) {
          std::printf("small-part IoU %.4f\n", *s.mean_small_part_iou);
        } else {
          std::printf("small-part IoU absent\n");
        }
      }
    } else if (stats->parsed()) {
      const Manifest manifest = load_manifest(cfg);
      BlockStats st;
      for (const auto& entry : manifest.entries) accumulate_block_stats(st, load_shape(manifest, entry), cfg.resolution);
      std::filesystem::create_directories(cfg.out_dir);
      std::ofstream out(cfg.out_dir / "block_stats.tsv");
      out << "segment_count\tblocks\n";
      for (const auto& [count, n] : st.histogram) {
        out << count << '\t' << n << '\n';
        std::printf("%zu\t%zu\n", count, n);
      }
      std::printf("blocks %zu, fraction with at most %zu segments %.4f\n", st.blocks, cfg.max_rank,
                  st.fraction_at_most(cfg.max_rank));
    } else if (export_ply_cmd->parsed()) {
      const PointCloud cloud = read_cloud(ply_input);
      std::vector<int> ids;
      if (!ply_parts.empty()) {
        ids = read_segmentation(ply_parts);
      } else if (cloud.has_labels()) {
        ids = *cloud.labels;
      } else {
        ids.assign(cloud.size(), 0);
      }
      export_ply(ply_output, cloud, ids);
    } else if (sweep->parsed()) {
      std::vector<int> res;
      std::vector<std::size_t> layers;
      for (const auto& s : split_list(sweep_res)) res.push_back(std::stoi(s));
      for (const auto& s : split_list(sweep_layers)) layers.push_back(static_cast<std::size_t>(std::stoul(s)));
      const auto rows = ablation_sweep(cfg, res, layers, sweep_train, log_line);
      std::filesystem::create_directories(cfg.out_dir / "sweep");
      write_sweep_table(cfg.out_dir / "sweep" / "sweep.tsv", rows);
      for (const auto& r : rows) {
        if (r.avg_iou) {
          std::printf("res %d\tlayers %zu\t%.4f\n", r.resolution, r.layers, *r.avg_iou);
        } else {
          std::printf("res %d\tlayers %zu\tabsent: %s\n", r.resolution, r.layers, r.note.c_str());
        }
      }
    }
  } catch (const ConfigError& e) {
    die(2, "config", e.what());
  } catch (const PipelineError& e) {
    die(3, "missing_input", e.what());
  } catch (const DataError& e) {
    die(4, "data", e.what());
  } catch (const GeometryError& e) {
    die(4, "data", e.what());
  } catch (const EvalError& e) {
    die(4, "data", e.what());
  } catch (const CheckpointError& e) {
    die(4, "checkpoint", e.what());
  } catch (const std::invalid_argument& e) {
    die(2, "usage", std::string("bad number in list: ") + e.what());
  } catch (const std::exception& e) {
    die(1, "failure", e.what());
  }
  return 0;
}
