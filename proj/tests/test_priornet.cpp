#include <doctest.h>

#include <numeric>
#include <sstream>

#include "fgseg/priornet.hpp"
#include "support.hpp"

using namespace fgseg;
using fgseg::testing::one_hot;
using fgseg::testing::random_labeling;

namespace {

constexpr Real K = 100.0;

Tensor column(std::vector<Real> v) {
  const std::size_t n = v.size();
  return Tensor::from(n, 1, std::move(v), true);
}

/// Direct double sum over ordered pairs.
Real similarity_loss_oracle(const std::vector<std::vector<Real>>& f, const std::vector<int>& labels, Real margin) {
  Real total = 0;
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < f.size(); ++j) {
      Real d2 = 0;
      for (std::size_t k = 0; k < f[i].size(); ++k) d2 += (f[i][k] - f[j][k]) * (f[i][k] - f[j][k]);
      const Real d = std::sqrt(d2);
      total += labels[i] == labels[j] ? d : std::max<Real>(0, margin - d);
    }
  return total;
}

AssignmentMatrix assignment(std::size_t rows, std::size_t cols, std::vector<Real> v) { return {rows, cols, std::move(v)}; }

/// Two clusters far apart in cell-local space, labeled by cluster.
Block two_cluster_block(std::size_t n, std::mt19937_64& rng) {
  Block b;
  b.cell_size = 1.0;
  b.center = {0, 0, 0};
  std::uniform_real_distribution<Real> u(-0.05, 0.05);
  for (std::size_t i = 0; i < n; ++i) {
    const int part = i < n / 2 ? 0 : 1;
    const Real cx = part == 0 ? -0.4 : 0.4;
    b.points.push_back({cx + u(rng), u(rng), u(rng)});
    b.labels.push_back(part);
  }
  return b;
}

}  // namespace

TEST_CASE("gt_similarity") {
  const auto s = gt_similarity(std::vector<int>{0, 0, 1});
  CHECK(s.values == std::vector<Real>{1, 1, 0, 1, 1, 0, 0, 0, 1});
  CHECK(fgseg::testing::numerical_rank(s.values, 3, 3) == 2);
  const auto ones = gt_similarity(std::vector<int>(5, 3));
  CHECK(std::all_of(ones.values.begin(), ones.values.end(), [](Real v) { return v == 1.0; }));

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 32;
    const int k = 1 + static_cast<int>(rng() % std::min<std::size_t>(n, 6));
    const auto labels = random_labeling(n, k, rng);
    const auto g = gt_similarity(labels);
    CHECK(fgseg::testing::numerical_rank(g.values, n, n) == static_cast<std::size_t>(k));
    // equivalence relation
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(g(i, i) == 1.0);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(g(i, j) == g(j, i));
        for (std::size_t l = 0; l < n; l += 3)
          if (g(i, j) == 1.0 && g(j, l) == 1.0) CHECK(g(i, l) == 1.0);
      }
    }
  }
}

TEST_CASE("similarity_loss") {
  const std::vector<int> same{0, 0, 0};
  CHECK(similarity_loss(column({2, 2, 2}), same, K).item() == 0.0);
  CHECK(similarity_loss(column({0, K}), std::vector<int>{0, 1}, K).item() == 0.0);

  const std::vector<int> labels{0, 0, 1};
  CHECK(similarity_loss(column({0, 0, K}), labels, K).item() == 0.0);
  // pairs (0,2), (2,0), (1,2), (2,1) each contribute K/2
  CHECK(similarity_loss(column({0, 0, K / 2}), labels, K).item() == doctest::Approx(2 * K));
  CHECK(similarity_loss_oracle({{0}, {0}, {K / 2}}, labels, K) == doctest::Approx(2 * K));

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 10, f = 1 + rng() % 4;
    const Tensor t = fgseg::testing::random_tensor(n, f, rng, -80, 80, false);
    std::vector<std::vector<Real>> rows(n, std::vector<Real>(f));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < f; ++k) rows[i][k] = t.at(i, k);
    const auto lab = random_labeling(n, 1 + static_cast<int>(rng() % n), rng);
    const Real v = similarity_loss(t, lab, K).item();
    CHECK(v >= 0.0);
    CHECK(v == doctest::Approx(similarity_loss_oracle(rows, lab, K)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(similarity_loss(column({0, 1}), std::vector<int>{0}, K), TensorError);
}

TEST_CASE("predict_similarity") {
  const Tensor s = predict_similarity(column({0, K / 2, 3 * K}), K);
  CHECK(s.at(0, 0) == 1.0);
  CHECK(s.at(0, 1) == doctest::Approx(0.5));
  CHECK(s.at(0, 2) == 0.0);
  CHECK(s.at(1, 2) == 0.0);
  const Tensor ones = predict_similarity(column({4, 4, 4}), K);
  for (Real v : ones.data()) CHECK(v == 1.0);

  std::mt19937_64 rng(3);
  const Tensor r = predict_similarity(fgseg::testing::random_tensor(12, 5, rng, -60, 60, false), K);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(r.at(i, i) == 1.0);
    for (std::size_t j = 0; j < 12; ++j) {
      CHECK(std::abs(r.at(i, j) - r.at(j, i)) <= 1e-9);
      CHECK(r.at(i, j) >= 0.0);
      CHECK(r.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("lowrank_loss") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const int k = 1 + static_cast<int>(rng() % std::min<std::size_t>(n, 5));
    const auto labels = random_labeling(n, k, rng);
    const Tensor m = Tensor::from(n, 5, one_hot(labels, 5));
    CHECK(lowrank_loss(m, static_cast<std::size_t>(k), gt_similarity(labels).tensor()).item() == 0.0);
  }

  // r = 1 against two equal halves: every cross entry is wrong
  const std::size_t n = 8;
  std::vector<int> halves(n);
  for (std::size_t i = 0; i < n; ++i) halves[i] = i < n / 2 ? 0 : 1;
  const Tensor ones = Tensor::full(n, 1, 1.0);
  CHECK(lowrank_loss(ones, 1, gt_similarity(halves).tensor()).item() == doctest::Approx(n * n / 2.0));

  // column permutation of the leading r columns leaves the loss unchanged
  const Tensor m = fgseg::testing::random_tensor(6, 3, rng, 0.05, 1, false);
  std::vector<Real> swapped(18);
  for (std::size_t i = 0; i < 6; ++i) {
    swapped[i * 3 + 0] = m.at(i, 2);
    swapped[i * 3 + 1] = m.at(i, 0);
    swapped[i * 3 + 2] = m.at(i, 1);
  }
  const Tensor target = gt_similarity(random_labeling(6, 3, rng)).tensor();
  CHECK(lowrank_loss(m, 3, target).item() ==
        doctest::Approx(lowrank_loss(Tensor::from(6, 3, swapped), 3, target).item()).epsilon(1e-12));
  CHECK_THROWS_AS(lowrank_loss(m, 4, target), TensorError);
  CHECK_THROWS_AS(lowrank_loss(m, 0, target), TensorError);
}

TEST_CASE("select_rank") {
  SUBCASE("exact block diagonal with junk columns") {
    const std::vector<int> labels{0, 0, 1, 2, 2, 1};
    std::vector<Real> m = one_hot(labels, 5);
    // junk columns carry no mass; the first three recover S exactly
    const auto sel = select_rank(assignment(6, 5, m), gt_similarity(labels));
    CHECK(sel.rank == 3);
    CHECK(sel.error == 0.0);
    CHECK(sel.errors.size() == 5);
  }
  SUBCASE("single part") {
    const std::vector<int> labels(7, 0);
    const auto sel = select_rank(assignment(7, 5, one_hot(labels, 5)), gt_similarity(labels));
    CHECK(sel.rank == 1);
  }
  SUBCASE("noiseless recovery for every rank") {
    std::mt19937_64 rng(19);
    for (int r = 1; r <= 5; ++r) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto labels = random_labeling(20 + rng() % 40, r, rng);
        const auto sel = select_rank(assignment(labels.size(), 5, one_hot(labels, 5)), gt_similarity(labels));
        CHECK(sel.rank == static_cast<std::size_t>(r));
      }
    }
  }
  SUBCASE("ties prefer the smaller rank") {
    // column 1 is empty, so r = 1 and r = 2 reconstruct identically
    const std::vector<int> labels(4, 0);
    const auto sel = select_rank(assignment(4, 2, {1, 0, 1, 0, 1, 0, 1, 0}), gt_similarity(labels));
    CHECK(sel.errors[0] == sel.errors[1]);
    CHECK(sel.rank == 1);
  }
  SUBCASE("invariant to permuting all columns") {
    std::mt19937_64 rng(4);
    const auto labels = random_labeling(15, 3, rng);
    const auto s = gt_similarity(labels);
    std::vector<Real> m = one_hot(labels, 3), p(m.size());
    for (std::size_t i = 0; i < 15; ++i) {
      p[i * 3 + 0] = m[i * 3 + 1];
      p[i * 3 + 1] = m[i * 3 + 2];
      p[i * 3 + 2] = m[i * 3 + 0];
    }
    CHECK(select_rank(assignment(15, 3, m), s).rank == select_rank(assignment(15, 3, p), s).rank);
    CHECK(select_rank(assignment(15, 3, m), s).error == select_rank(assignment(15, 3, p), s).error);
  }
  SUBCASE("max rank caps the search") {
    const std::vector<int> labels{0, 1, 2, 3};
    const auto sel = select_rank(assignment(4, 4, one_hot(labels, 4)), gt_similarity(labels), 2);
    CHECK(sel.errors.size() == 2);
    CHECK(sel.rank <= 2);
  }
  CHECK_THROWS_AS(select_rank(assignment(2, 1, {1, 1}), gt_similarity(std::vector<int>{0, 0, 0})), TensorError);
}

TEST_CASE("segment_block") {
  const std::vector<int> labels{2, 2, 0, 1, 0};
  const auto ids = segment_block(assignment(5, 3, one_hot(labels, 3)));
  std::map<int, int> mapping;
  for (std::size_t i = 0; i < labels.size(); ++i) mapping.emplace(labels[i], ids[i]);
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(mapping[labels[i]] == ids[i]);
  CHECK(mapping.size() == 3);

  CHECK(segment_block(assignment(1, 2, {0.5, 0.5})) == std::vector<int>{0});
  // column 0 never wins: ids are compacted
  CHECK(segment_block(assignment(3, 3, {0.1, 0.9, 0, 0.2, 0, 0.8, 0, 0.7, 0.3})) == std::vector<int>{0, 1, 0});
}

TEST_CASE("group_by_similarity") {
  const auto s = gt_similarity(std::vector<int>{4, 1, 4, 1, 7});
  CHECK(group_by_similarity(s) == std::vector<int>{0, 1, 0, 1, 2});
}

TEST_CASE("PriorNet structure and equivariance") {
  PriorNetConfig cfg;
  PriorNet net(cfg, 5);
  CHECK(net.params().contains("prior.head.fc1.weight"));
  for (const auto& p : net.params().items()) {
    if (p.name == "prior.head.fc1.weight") CHECK(p.value.shape() == std::vector<std::size_t>{512, 512});
    if (p.name == "prior.head.fc2.weight") CHECK(p.value.shape() == std::vector<std::size_t>{512, 256});
    if (p.name == "prior.head.fc3.weight") CHECK(p.value.shape() == std::vector<std::size_t>{256, 128});
    if (p.name == "prior.head.out.weight") CHECK(p.value.shape() == std::vector<std::size_t>{128, 5});
  }

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<Real> u(-0.5, 0.5);
  std::vector<Point3> pts(40);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  pts[7] = pts[3];
  const Tensor f = net.features(pts);
  CHECK(f.cols() == 128);
  for (std::size_t k = 0; k < 128; ++k) CHECK(f.at(7, k) == f.at(3, k));

  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point3> shuffled(40);
  for (std::size_t i = 0; i < 40; ++i) shuffled[i] = pts[perm[i]];
  const Tensor g = net.features(shuffled);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t k = 0; k < 128; ++k) CHECK(g.at(i, k) == doctest::Approx(f.at(perm[i], k)).epsilon(1e-12));

  // the head maps rows independently and returns stochastic rows
  std::vector<Real> rows(2 * 512);
  for (std::size_t k = 0; k < 512; ++k) rows[k] = rows[512 + k] = u(rng) + 0.5;
  const Tensor m = net.head(Tensor::from(2, 512, rows));
  Real total = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(m.at(0, k) == m.at(1, k));
    total += m.at(0, k);
  }
  CHECK(std::abs(total - 1.0) <= 1e-9);
  CHECK_THROWS_AS(net.head(Tensor::zeros(2, 10)), TensorError);
}

TEST_CASE("balance_blocks") {
  std::vector<TrainingBlock> pool;
  for (std::size_t c : {1, 1, 1, 2, 2, 3, 7}) pool.push_back({Block{}, c});
  std::vector<std::string> warnings;
  const auto out = balance_blocks(pool, 2, 5, 1, [&](const std::string& w) { warnings.push_back(w); });
  std::map<std::size_t, int> counts;
  for (const auto& b : out) ++counts[b.segment_count];
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 2);
  CHECK(counts[3] == 1);
  CHECK(counts.count(7) == 0);
  CHECK(warnings.size() == 3);  // count 3 short, counts 4 and 5 empty
}

TEST_CASE("training on separable blocks") {
  std::mt19937_64 rng(1);
  PriorNetConfig cfg;
  cfg.block_size = 16;
  cfg.max_rank = 2;
  std::vector<TrainingBlock> blocks;
  for (int i = 0; i < 8; ++i) blocks.push_back({two_cluster_block(cfg.block_size, rng), 2});

  PriorTrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 2;
  tc.learning_rate = 1e-2;
  tc.use_lowrank_loss = false;
  PriorNet net(cfg, 3);
  Real initial = 0;
  for (const auto& b : blocks) initial += similarity_loss(net.features(b.block), b.block.labels, cfg.margin).item();
  initial /= static_cast<Real>(blocks.size());
  const auto log = train_priornet(net, blocks, tc);
  REQUIRE(log.size() == 50);
  for (const auto& e : log) {
    CHECK(std::isfinite(e.similarity));
    CHECK(e.similarity >= 0.0);
  }
  INFO("initial " << initial << " final " << log.back().similarity);
  CHECK(log.back().similarity < 0.01 * initial);

  SUBCASE("same seed gives the same checkpoint") {
    tc.epochs = 3;
    tc.use_lowrank_loss = true;
    PriorNet a(cfg, 9), b(cfg, 9);
    train_priornet(a, blocks, tc);
    train_priornet(b, blocks, tc);
    CHECK(a.params().fingerprint() == b.params().fingerprint());
  }
  SUBCASE("the ablation leaves the head untouched") {
    PriorNet fresh(cfg, 3);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      const auto& p = net.params().items()[i];
      if (p.name.rfind("prior.head.", 0) != 0) continue;
      const auto& q = fresh.params().items()[i];
      CHECK(std::equal(p.value.data().begin(), p.value.data().end(), q.value.data().begin()));
    }
  }
  SUBCASE("loss log format") {
    std::ostringstream out;
    write_loss_log(out, {{1, 2.5, 0.25}});
    CHECK(out.str() == "1\t2.5\t0.25\n");
  }
}
