#include "fgseg/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fgseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

Tensor ParameterSet::add(const std::string& name, std::size_t rows, std::size_t cols) {
  if (contains(name)) throw TensorError("duplicate parameter name: " + name);
  Parameter p{name, Tensor::zeros(rows, cols, true), std::vector<Real>(rows * cols, 0.0),
              std::vector<Real>(rows * cols, 0.0)};
  params_.push_back(std::move(p));
  return params_.back().value;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw TensorError("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) out.params_.push_back(p);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw TensorError("copy_values_from: parameter count differs");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw TensorError("copy_values_from: layout differs at " + dst.name);
    }
    auto out = dst.value.mutable_data();
    std::copy(src.value.data().begin(), src.value.data().end(), out.begin());
  }
}

std::uint64_t ParameterSet::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    const std::uint64_t r = p.value.rows(), c = p.value.cols();
    mix(&r, sizeof r);
    mix(&c, sizeof c);
    mix(p.value.data().data(), p.value.size() * sizeof(Real));
  }
  return h;
}

void Adam::step(ParameterSet& params) {
  for (const auto& p : params.items()) {
    if (!p.value.has_grad()) throw TensorError("adam_step: parameter " + p.name + " has no gradient");
  }
  ++t_;
  const Real bc1 = 1.0 - std::pow(beta1_, static_cast<Real>(t_));
  const Real bc2 = 1.0 - std::pow(beta2_, static_cast<Real>(t_));
  for (auto& p : params.items()) {
    auto w = p.value.mutable_data();
    auto g = p.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.first_moment[i] = beta1_ * p.first_moment[i] + (1 - beta1_) * g[i];
      p.second_moment[i] = beta2_ * p.second_moment[i] + (1 - beta2_) * g[i] * g[i];
      const Real mhat = p.first_moment[i] / bc1;
      const Real vhat = p.second_moment[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    p.value.zero_grad();
  }
}

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out)
    : weight_(params.add(name + ".weight", in, out)), bias_(params.add(name + ".bias", 1, out)) {}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight_), bias_); }

void init_parameters(ParameterSet& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params.items()) {
    auto w = p.value.mutable_data();
    const bool is_weight = p.name.size() > 7 && p.name.ends_with(".weight");
    if (!is_weight) {
      std::fill(w.begin(), w.end(), 0.0);
      continue;
    }
    const Real bound = std::sqrt(6.0 / static_cast<Real>(p.value.rows()));
    std::uniform_real_distribution<Real> dist(-bound, bound);
    for (auto& v : w) v = dist(rng);
  }
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
bool get(std::ifstream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof v));
}

constexpr char kMagic[8] = {'F', 'G', 'S', 'G', 'C', 'K', 'P', 'T'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& p : params.items()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto shape = p.value.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value.data().data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(Real)));
  }
  if (!out) throw CheckpointError("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  if (!get(in, version) || version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version mismatch in " + path.string() + ": got " +
                             std::to_string(version));
  }
  std::size_t index = 0;
  auto& items = params.items();
  for (;;) {
    std::uint32_t name_len = 0;
    if (!get(in, name_len)) break;
    if (index >= items.size()) throw CheckpointError("checkpoint has extra parameters");
    auto& p = items[index++];
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(name.data(), name_len) || !get(in, rank)) {
      throw CheckpointError("truncated checkpoint: " + path.string());
    }
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get(in, v)) throw CheckpointError("truncated checkpoint: " + path.string());
      d = v;
    }
    if (name != p.name || shape != p.value.shape()) {
      throw CheckpointError("checkpoint layout mismatch at parameter '" + name + "'");
    }
    auto w = p.value.mutable_data();
    if (!in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(Real)))) {
      throw CheckpointError("truncated checkpoint payload: " + path.string());
    }
  }
  if (index != items.size()) throw CheckpointError("checkpoint is missing parameters");
}

}  // namespace fgseg
