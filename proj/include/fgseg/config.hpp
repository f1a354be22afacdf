#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgseg/synthdata.hpp"

namespace fgseg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EpsilonPolicy { Spacing, Fixed };

struct PipelineConfig {
  // [data]
  std::filesystem::path data_dir = "data";
  std::vector<ShapeFamily> families = default_families();
  std::size_t shapes_per_family = 40;
  std::size_t points_per_shape = 20000;
  std::size_t min_parts = 4;
  std::size_t max_parts = 40;
  Real train_fraction = 0.8;

  // [partition]
  int resolution = 7;
  std::size_t block_size = 512;

  // [prior]
  Real margin = 100.0;
  std::size_t max_rank = 5;
  std::size_t prior_batch = 24;
  std::size_t prior_epochs = 100;
  std::size_t per_count = 400;
  Real prior_lr = 1e-3;
  bool prior_lowrank = true;

  // [merge]
  std::size_t merge_max_rank = 100;
  std::size_t layers = 3;
  std::size_t merge_batch = 4;
  std::size_t merge_epochs = 100;
  Real merge_lr = 1e-3;
  bool merge_lowrank = true;
  bool per_family = true;

  // [graph]
  EpsilonPolicy epsilon_policy = EpsilonPolicy::Spacing;
  Real epsilon_value = 2.0;  // multiplier of the median spacing, or an absolute length

  // [run]
  std::filesystem::path out_dir = "run";
  std::filesystem::path prior_dir;  // where the PriorNet checkpoint lives; empty means out_dir
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// One settable field: `section.key`, a parser and a printer.
struct ConfigField {
  std::string section;
  std::string key;
  std::string help;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;

  std::string qualified() const { return section + "." + key; }
};

const std::vector<ConfigField>& config_fields();

/// Sets `section.key` from text; unknown keys and bad values throw.
void set_config_value(PipelineConfig& config, const std::string& qualified_key, const std::string& value);

/// Reads an INI-style file: `[section]` headers, `key = value` lines, `#`
/// or `;` comments. Keys outside a section are rejected.
void load_config(const std::filesystem::path& path, PipelineConfig& config);
void parse_config(std::istream& in, PipelineConfig& config, const std::string& source = "<config>");
void write_config(std::ostream& out, const PipelineConfig& config);

}  // namespace fgseg
