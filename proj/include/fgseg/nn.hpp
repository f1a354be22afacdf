#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgseg/tensor.hpp"

namespace fgseg {

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<Real> first_moment;
  std::vector<Real> second_moment;
};

/// Ordered set of uniquely named trainable tensors.
class ParameterSet {
 public:
  /// Registers a zero-initialized parameter and returns its tensor handle.
  Tensor add(const std::string& name, std::size_t rows, std::size_t cols);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  /// Parameters whose names start with `prefix`. Tensors are shared with this
  /// set; optimizer moments are copied.
  ParameterSet subset(const std::string& prefix) const;
  /// Copies values from another set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);

  /// FNV-1a over names, shapes and raw value bytes; used to detect changes.
  std::uint64_t fingerprint() const;

 private:
  std::vector<Parameter> params_;
};

/// Adam with bias correction. Gradients are zeroed after each step.
class Adam {
 public:
  explicit Adam(Real lr, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Throws if any parameter in `params` never received a gradient.
  void step(ParameterSet& params);
  std::int64_t steps_taken() const { return t_; }

 private:
  Real lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Fully connected layer: y = x W + b, W stored in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

/// He-uniform initialization for every "*.weight" parameter, zeros for biases.
void init_parameters(ParameterSet& params, std::uint64_t seed);

// Checkpoint: magic "FGSGCKPT", u32 version, then per parameter
// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload.
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
/// Loads into an existing set; names, order and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

}  // namespace fgseg
