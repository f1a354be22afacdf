#include "fgseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace fgseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

Real parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  Real v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string real_text(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
ConfigField size_field(const char* section, const char* key, const char* help, T PipelineConfig::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, help,
          [member, name](PipelineConfig& c, const std::string& v) { c.*member = parse_integer<T>(name, v); },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

ConfigField real_field(const char* section, const char* key, const char* help, Real PipelineConfig::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, help, [member, name](PipelineConfig& c, const std::string& v) { c.*member = parse_real(name, v); },
          [member](const PipelineConfig& c) { return real_text(c.*member); }};
}

ConfigField bool_field(const char* section, const char* key, const char* help, bool PipelineConfig::*member) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, help, [member, name](PipelineConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

ConfigField path_field(const char* section, const char* key, const char* help,
                       std::filesystem::path PipelineConfig::*member) {
  return {section, key, help, [member](PipelineConfig& c, const std::string& v) { c.*member = v; },
          [member](const PipelineConfig& c) { return (c.*member).string(); }};
}

std::vector<ConfigField> make_fields() {
  using C = PipelineConfig;
  std::vector<ConfigField> f;
  f.push_back(path_field("data", "dir", "dataset directory", &C::data_dir));
  f.push_back({"data", "families", "comma-separated shape families",
               [](C& c, const std::string& v) {
                 std::vector<ShapeFamily> fams;
                 std::stringstream ss(v);
                 std::string item;
                 while (std::getline(ss, item, ',')) {
                   item = trim(item);
                   if (item.empty()) continue;
                   try {
                     fams.push_back(parse_family(item));
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("data.families: ") + e.what());
                   }
                 }
                 if (fams.empty()) throw ConfigError("data.families: no family given");
                 c.families = fams;
               },
               [](const C& c) {
                 std::string out;
                 for (auto fam : c.families) {
                   if (!out.empty()) out += ",";
                   out += family_name(fam);
                 }
                 return out;
               }});
  f.push_back(size_field("data", "shapes_per_family", "shapes generated per family", &C::shapes_per_family));
  f.push_back(size_field("data", "points", "points per generated shape", &C::points_per_shape));
  f.push_back(size_field("data", "min_parts", "minimum parts per shape", &C::min_parts));
  f.push_back(size_field("data", "max_parts", "maximum parts per shape", &C::max_parts));
  f.push_back(real_field("data", "train_fraction", "fraction of each family used for training", &C::train_fraction));
  f.push_back(size_field("partition", "resolution", "cells per axis", &C::resolution));
  f.push_back(size_field("partition", "block_size", "points per resampled block", &C::block_size));
  f.push_back(real_field("prior", "margin", "feature-distance margin", &C::margin));
  f.push_back(size_field("prior", "max_rank", "assignment columns per block", &C::max_rank));
  f.push_back(size_field("prior", "batch", "blocks per optimizer step", &C::prior_batch));
  f.push_back(size_field("prior", "epochs", "training epochs", &C::prior_epochs));
  f.push_back(size_field("prior", "per_count", "training blocks drawn per segment count", &C::per_count));
  f.push_back(real_field("prior", "lr", "Adam learning rate", &C::prior_lr));
  f.push_back(bool_field("prior", "lowrank", "train and decode with the low-rank head", &C::prior_lowrank));
  f.push_back(size_field("merge", "max_rank", "assignment columns per shape", &C::merge_max_rank));
  f.push_back(size_field("merge", "layers", "message passing layers", &C::layers));
  f.push_back(size_field("merge", "batch", "shapes per optimizer step", &C::merge_batch));
  f.push_back(size_field("merge", "epochs", "training epochs", &C::merge_epochs));
  f.push_back(real_field("merge", "lr", "Adam learning rate", &C::merge_lr));
  f.push_back(bool_field("merge", "lowrank", "train and decode with the low-rank head", &C::merge_lowrank));
  f.push_back(bool_field("merge", "per_family", "one merge network per family instead of one pooled", &C::per_family));
  f.push_back({"graph", "epsilon_policy", "spacing (multiple of median point spacing) or fixed",
               [](C& c, const std::string& v) {
                 if (v == "spacing") {
                   c.epsilon_policy = EpsilonPolicy::Spacing;
                 } else if (v == "fixed") {
                   c.epsilon_policy = EpsilonPolicy::Fixed;
                 } else {
                   throw ConfigError("graph.epsilon_policy: expected spacing or fixed, got '" + v + "'");
                 }
               },
               [](const C& c) { return std::string(c.epsilon_policy == EpsilonPolicy::Spacing ? "spacing" : "fixed"); }});
  f.push_back(real_field("graph", "epsilon", "spacing multiplier or absolute box inflation", &C::epsilon_value));
  f.push_back(path_field("run", "out", "output directory for models and results", &C::out_dir));
  f.push_back(path_field("run", "prior_dir", "directory holding the PriorNet checkpoint (default: run.out)",
                         &C::prior_dir));
  f.push_back(size_field("run", "seed", "run seed", &C::seed));
  f.push_back(size_field("run", "threads", "worker threads for inference", &C::threads));
  return f;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = make_fields();
  return fields;
}

void set_config_value(PipelineConfig& config, const std::string& qualified_key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.qualified() == qualified_key) {
      f.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + qualified_key + "'");
}

void parse_config(std::istream& in, PipelineConfig& config, const std::string& source) {
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    try {
      set_config_value(config, section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void load_config(const std::filesystem::path& path, PipelineConfig& config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  parse_config(in, config, path.string());
}

void write_config(std::ostream& out, const PipelineConfig& config) {
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
}

void PipelineConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(!families.empty(), "data.families must not be empty");
  need(shapes_per_family >= 1, "data.shapes_per_family must be at least 1");
  need(points_per_shape >= 1, "data.points must be positive");
  need(min_parts >= 1 && min_parts <= max_parts, "data.min_parts must be in [1, data.max_parts]");
  need(train_fraction > 0 && train_fraction < 1, "data.train_fraction must lie in (0, 1)");
  need(resolution >= 1, "partition.resolution must be positive");
  need(block_size >= 1, "partition.block_size must be positive");
  need(margin > 0, "prior.margin must be positive");
  need(max_rank >= 1, "prior.max_rank must be positive");
  need(prior_batch >= 1 && merge_batch >= 1, "batch sizes must be positive");
  need(per_count >= 1, "prior.per_count must be positive");
  need(prior_lr > 0 && merge_lr > 0, "learning rates must be positive");
  need(merge_max_rank >= 1, "merge.max_rank must be positive");
  need(epsilon_value >= 0, "graph.epsilon must be non-negative");
  need(threads >= 1, "run.threads must be at least 1");
}

}  // namespace fgseg
