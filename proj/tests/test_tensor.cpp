#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fgseg/nn.hpp"
#include "fgseg/tensor.hpp"
#include "gradient_cases.hpp"
#include "support.hpp"

using namespace fgseg;
using fgseg::testing::random_tensor;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fgseg_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("matmul identity and annihilation") {
  const Tensor i2 = Tensor::from(2, 2, {1, 0, 0, 1});
  const Tensor m = Tensor::from(2, 2, {1, 2, 3, 4});
  CHECK(values(matmul(i2, m)) == std::vector<Real>{1, 2, 3, 4});
  CHECK(values(matmul(Tensor::from(2, 2, {1, 0, 0, 0}), Tensor::from(2, 1, {0, 5}))) == std::vector<Real>{0, 0});
  CHECK_THROWS_AS(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), TensorError);
}

TEST_CASE("gradient of sum(A B) w.r.t. A is the row sums of B") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor(3, 4, rng);
  const Tensor b = random_tensor(4, 2, rng, -1, 1, false);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.grad()[i * 4 + k] == doctest::Approx(b.at(k, 0) + b.at(k, 1)));
}

TEST_CASE("elementwise and reduction forward values") {
  CHECK(values(softmax_rows(Tensor::zeros(1, 5))) == std::vector<Real>(5, 0.2));
  CHECK(values(max_pool_rows(Tensor::from(2, 2, {1, 5, 3, 2}))) == std::vector<Real>{3, 5});
  CHECK(values(mean_rows(Tensor::from(2, 2, {1, 5, 3, 2}))) == std::vector<Real>{2, 3.5});
  CHECK(values(concat_rows(Tensor::from(2, 1, {1, 2}), Tensor::from(2, 2, {3, 4, 5, 6}))) ==
        std::vector<Real>{1, 3, 4, 2, 5, 6});
  CHECK(values(relu(Tensor::from(1, 3, {-1, 0, 2}))) == std::vector<Real>{0, 0, 2});
  CHECK(values(pad_cols(Tensor::from(2, 1, {1, 2}), 3)) == std::vector<Real>{1, 0, 0, 2, 0, 0});
  CHECK(values(slice_cols(Tensor::from(1, 4, {1, 2, 3, 4}), 1, 3)) == std::vector<Real>{2, 3});
  CHECK(values(row_normalize(Tensor::from(1, 2, {1, 3}))) == std::vector<Real>{0.25, 0.75});
  CHECK_THROWS_AS(row_normalize(Tensor::from(1, 2, {0, 0})), TensorError);
  CHECK_THROWS_AS(softmax_rows(Tensor::zeros(2, 0)), TensorError);
}

TEST_CASE("sq_euclid_rowpairs") {
  std::mt19937_64 rng(5);
  const Tensor f = random_tensor(1, 7, rng, -50, 50, false);
  const Tensor same = repeat_rows(f, 4);
  const Tensor d = sq_euclid_rowpairs(same, same);
  for (Real v : d.data()) CHECK(v == 0.0);
  const Tensor a = Tensor::from(2, 2, {0, 0, 3, 4});
  CHECK(values(sq_euclid_rowpairs(a, a)) == std::vector<Real>{0, 25, 25, 0});
  CHECK_THROWS_AS(sq_euclid_rowpairs(Tensor::zeros(2, 2), Tensor::zeros(2, 3)), TensorError);
}

TEST_CASE("softmax rows are stochastic") {
  std::mt19937_64 rng(11);
  const Tensor s = softmax_rows(random_tensor(20, 7, rng, -30, 30, false));
  for (std::size_t i = 0; i < 20; ++i) {
    Real total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(s.at(i, j) >= 0.0);
      CHECK(s.at(i, j) <= 1.0);
      total += s.at(i, j);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0, true);
  backward(square(x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  std::mt19937_64 rng(2);
  Tensor y = random_tensor(3, 4, rng);
  backward(sum(softmax_rows(y)));
  for (Real g : y.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::from(1, 2, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2)), TensorError);  // not a scalar
  const Tensor loss = sum(square(x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), TensorError);  // graph already consumed
  CHECK_THROWS_AS(backward(sum(Tensor::from(1, 2, {1, 2}))), TensorError);  // nothing recorded
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(scale(Tensor::scalar(1e308), 10.0), TensorError);
  CHECK_THROWS_AS(sqrt0(Tensor::scalar(-1.0)), TensorError);
}

TEST_CASE("no-grad guard skips recording") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  CHECK(!y.requires_grad());
  CHECK_THROWS_AS(backward(y), TensorError);
}

TEST_CASE("every op passes the finite-difference check") {
  for (const auto& c : fgseg::testing::gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      INFO(c.name << " seed " << seed);
      CHECK(c.run(rng) < 1e-4);
    }
  }
}

TEST_CASE("forward passes are bit-identical on repeat") {
  std::mt19937_64 rng(9);
  const Tensor a = random_tensor(30, 8, rng, -1, 1, false), b = random_tensor(8, 12, rng, -1, 1, false);
  CHECK(values(softmax_rows(matmul(a, b))) == values(softmax_rows(matmul(a, b))));
  CHECK(values(sq_euclid_rowpairs(a, a)) == values(sq_euclid_rowpairs(a, a)));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterSet ps;
    Tensor w = ps.add("w", 1, 3);
    w.mutable_data()[1] = 0.5;
    w.mutable_grad();  // allocate zero gradient
    Adam adam(0.1);
    adam.step(ps);
    CHECK(values(w) == std::vector<Real>{0, 0.5, 0});
    CHECK(ps.items()[0].first_moment == std::vector<Real>(3, 0.0));
  }
  SUBCASE("first step moves by about lr") {
    ParameterSet ps;
    Tensor w = ps.add("w", 1, 1);
    w.mutable_grad()[0] = 1.0;
    Adam adam(0.1);
    adam.step(ps);
    CHECK(w.item() == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(!w.has_grad());
  }
  SUBCASE("minimizes x^2") {
    ParameterSet ps;
    Tensor x = ps.add("x", 1, 1);
    x.mutable_data()[0] = 1.0;
    Adam adam(0.1);
    for (int i = 0; i < 100; ++i) {
      backward(square(x));
      adam.step(ps);
    }
    CHECK(std::abs(x.item()) < 0.05);
  }
  SUBCASE("missing gradient is an error") {
    ParameterSet ps;
    ps.add("w", 1, 1);
    Adam adam(0.1);
    CHECK_THROWS_AS(adam.step(ps), TensorError);
  }
}

TEST_CASE("parameter names are unique") {
  ParameterSet ps;
  ps.add("a", 1, 1);
  CHECK_THROWS_AS(ps.add("a", 2, 2), TensorError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(21);
  ParameterSet ps;
  Linear layer(ps, "layer", 5, 3);
  ps.add("extra", 2, 2);
  init_parameters(ps, 4);
  for (auto& v : ps.items()[1].value.mutable_data()) v = std::uniform_real_distribution<Real>(-1, 1)(rng);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, ps);

  ParameterSet loaded;
  Linear other(loaded, "layer", 5, 3);
  loaded.add("extra", 2, 2);
  load_checkpoint(path, loaded);
  CHECK(loaded.fingerprint() == ps.fingerprint());
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(values(loaded.items()[i].value) == values(ps.items()[i].value));

  ParameterSet wrong_shape;
  wrong_shape.add("layer.weight", 5, 4);
  wrong_shape.add("layer.bias", 1, 3);
  wrong_shape.add("extra", 2, 2);
  CHECK_THROWS_AS(load_checkpoint(path, wrong_shape), CheckpointError);

  ParameterSet missing;
  Linear only(missing, "layer", 5, 3);
  CHECK_THROWS_AS(load_checkpoint(path, missing), CheckpointError);

  std::ofstream(temp_path("bad.ckpt")) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(temp_path("bad.ckpt"), loaded), CheckpointError);
}

TEST_CASE("checkpoint layout on disk") {
  ParameterSet ps;
  Tensor w = ps.add("ab", 1, 2);
  w.mutable_data()[0] = 1.5;
  w.mutable_data()[1] = -2.0;
  const auto path = temp_path("layout.ckpt");
  save_checkpoint(path, ps);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // magic(8) version(4) namelen(4) name(2) rank(4) dims(16) payload(16)
  REQUIRE(bytes.size() == 8 + 4 + 4 + 2 + 4 + 16 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "FGSGCKPT");
  CHECK(bytes[8] == kCheckpointVersion);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 'a');
  CHECK(bytes[18] == 2);  // rank
  Real first = 0;
  std::memcpy(&first, bytes.data() + 38, sizeof first);
  CHECK(first == 1.5);
}
