#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "attrop/errors.hpp"
#include "attrop/training.hpp"

using namespace attrop;

namespace {

ModelParams tiny_params() { return init_params(Vocab{{"a", "b"}, {"x", "y"}}, 3, 2, nullptr, 1); }

// Every entry of `g` set to `value`.
GradAccumulator filled(const ModelParams& p, double value) {
  GradAccumulator g = GradAccumulator::zeros_like(p);
  visit_tensors(g, [&](TensorGroup, const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), value); });
  return g;
}

SyntheticDataset small_planted(std::uint64_t seed, double noise = 0.0) {
  SyntheticSpec spec;
  spec.num_attrs = 4;
  spec.num_objs = 5;
  spec.dim = 6;
  spec.images_per_pair = 4;
  spec.noise_sigma = noise;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("config validation and presets") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  TrainConfig bad;
  bad.lr_attr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  TrainConfig zero_batch;
  zero_batch.batch_size = 0;
  CHECK_THROWS_AS(zero_batch.validate(), ValidationError);

  const TrainConfig mit = preset_config("mit-like");
  CHECK(mit.epochs == 800);
  CHECK(mit.weights.aux == 1000.0);
  CHECK(mit.weights.inv == 1.0);
  const TrainConfig zappos = preset_config("zappos-like");
  CHECK(zappos.epochs == 1000);
  CHECK(zappos.weights == LossWeights{});
  const TrainConfig syn = preset_config("synthetic");
  CHECK(syn.epochs == 300);
  CHECK(syn.weights == LossWeights{});
  CHECK(TrainConfig{}.lr_main == 1e-4);
  CHECK(TrainConfig{}.lr_attr == 1e-5);
  CHECK(TrainConfig{}.batch_size == 512);
  CHECK_THROWS_AS(preset_config("imagenet"), ValidationError);
}

TEST_CASE("first Adam step moves by lr times the gradient sign") {
  ModelParams p = tiny_params();
  const ModelParams before = p;
  AdamState st = AdamState::for_params(p);
  TrainConfig cfg;
  adam_step(p, filled(p, 1.0), st, cfg);
  CHECK(st.step == 1);
  const double expected = 1e-4 * (1.0 / (1.0 + 1e-8));
  CHECK(before.embedder.weight(0, 0) - p.embedder.weight(0, 0) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(before.attrs.operators[0](0, 0) - p.attrs.operators[0](0, 0) ==
        doctest::Approx(1e-5 / (1.0 + 1e-7)).epsilon(1e-9));
}

TEST_CASE("zero gradients leave params unchanged but count the step") {
  ModelParams p = tiny_params();
  const ModelParams before = p;
  AdamState st = AdamState::for_params(p);
  TrainConfig cfg;
  adam_step(p, GradAccumulator::zeros_like(p), st, cfg);
  adam_step(p, GradAccumulator::zeros_like(p), st, cfg);
  CHECK(p == before);
  CHECK(st.step == 2);
}

TEST_CASE("Adam matches a scalar reference over several steps") {
  ModelParams p = tiny_params();
  AdamState st = AdamState::for_params(p);
  TrainConfig cfg;
  cfg.lr_main = 1e-2;
  cfg.lr_attr = 3e-3;
  const double grads[] = {0.7, -1.3, 0.02, 2.5, -0.4};

  // scalar oracle for one embedder entry and one operator entry
  auto oracle = [&](double x0, double lr, int steps) {
    double x = x0, m = 0, v = 0;
    for (int t = 1; t <= steps; ++t) {
      const double g = grads[t - 1];
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t));
      const double vh = v / (1 - std::pow(0.999, t));
      x -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    return x;
  };
  const double w0 = p.embedder.weight(1, 0);
  const double m0 = p.attrs.operators[1](2, 1);
  for (int t = 0; t < 5; ++t) adam_step(p, filled(p, grads[t]), st, cfg);
  CHECK(std::abs(p.embedder.weight(1, 0) - oracle(w0, 1e-2, 5)) < 1e-12);
  CHECK(std::abs(p.attrs.operators[1](2, 1) - oracle(m0, 3e-3, 5)) < 1e-12);
}

TEST_CASE("operator updates scale with the attribute learning rate") {
  ModelParams p = tiny_params();
  const ModelParams before = p;
  AdamState st = AdamState::for_params(p);
  TrainConfig cfg;
  cfg.lr_main = 1e-3;
  cfg.lr_attr = 2.5e-5;
  adam_step(p, filled(p, 0.37), st, cfg);
  const double op = std::abs(p.attrs.operators[0](1, 1) - before.attrs.operators[0](1, 1));
  const double emb = std::abs(p.embedder.weight(1, 1) - before.embedder.weight(1, 1));
  CHECK(op / emb == doctest::Approx(cfg.lr_attr / cfg.lr_main).epsilon(1e-9));
}

TEST_CASE("frozen objects never move") {
  ModelParams p = tiny_params();
  const ObjectTable objects = p.objects;
  AdamState st = AdamState::for_params(p);
  TrainConfig cfg;
  cfg.freeze_objects = true;
  for (int i = 0; i < 20; ++i) adam_step(p, filled(p, 0.5 - 0.1 * i), st, cfg);
  CHECK(p.objects == objects);
  CHECK_FALSE(p.embedder == tiny_params().embedder);
}

TEST_CASE("non-finite gradients are rejected by tensor name") {
  ModelParams p = tiny_params();
  const ModelParams before = p;
  AdamState st = AdamState::for_params(p);
  GradAccumulator g = filled(p, 1.0);
  g.attrs.operators[1](0, 2) = NAN;
  CHECK_THROWS_WITH_AS(adam_step(p, g, st, TrainConfig{}), doctest::Contains("operator[1]"), NonFiniteError);
  CHECK(p == before);
}

TEST_CASE("negative sampling") {
  std::mt19937_64 rng(4);
  SUBCASE("forced choice") {
    const std::vector<PairId> seen{{0, 0}, {1, 1}};
    for (int i = 0; i < 50; ++i) CHECK(sample_negative(seen, {0, 0}, rng) == PairId{1, 1});
  }
  SUBCASE("uniform over the other pairs") {
    const std::vector<PairId> seen{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}};
    std::map<PairId, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[sample_negative(seen, {1, 0}, rng)];
    CHECK(counts.count({1, 0}) == 0);
    const double p = 0.25, mean = n * p, sd = std::sqrt(n * p * (1 - p));
    double chi2 = 0.0;
    for (PairId s : seen) {
      if (s == PairId{1, 0}) continue;
      CHECK(std::abs(counts[s] - mean) < 5 * sd);
      chi2 += (counts[s] - mean) * (counts[s] - mean) / mean;
    }
    // 3 degrees of freedom; the 0.999 quantile is 16.27
    CHECK(chi2 < 16.27);
  }
  SUBCASE("current outside the list samples from all of it") {
    const std::vector<PairId> seen{{0, 0}, {0, 1}, {1, 0}};
    std::map<PairId, int> counts;
    for (int i = 0; i < 3000; ++i) ++counts[sample_negative(seen, {5, 5}, rng)];
    CHECK(counts.size() == 3);
  }
  SUBCASE("a single seen pair is an error") {
    const std::vector<PairId> one{{0, 0}};
    CHECK_THROWS_AS(sample_negative(one, {0, 0}, rng), ValidationError);
  }
}

TEST_CASE("zero epochs return the params bitwise unchanged") {
  const SyntheticDataset ds = small_planted(2);
  ModelParams p = init_for_dataset(ds.bundle, 6, 3);
  const ModelParams before = p;
  TrainConfig cfg = preset_config("synthetic");
  cfg.epochs = 0;
  const TrainStats st = train(p, ds.bundle, cfg);
  CHECK(st.epochs.empty());
  CHECK(p == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const SyntheticDataset ds = small_planted(3, 0.05);
  TrainConfig cfg = preset_config("synthetic");
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 9;
  cfg.deterministic = true;
  ModelParams a = init_for_dataset(ds.bundle, 6, SeedStreams(9).init);
  ModelParams b = a;
  const TrainStats sa = train(a, ds.bundle, cfg);
  const TrainStats sb = train(b, ds.bundle, cfg);
  CHECK(a == b);
  REQUIRE(sa.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(sa.epochs[e].total == sb.epochs[e].total);
    CHECK(sa.epochs[e].seconds == 0.0);
  }
  cfg.seed = 10;
  ModelParams c = init_for_dataset(ds.bundle, 6, SeedStreams(9).init);
  train(c, ds.bundle, cfg);
  CHECK_FALSE(a == c);
}

TEST_CASE("recorded epoch losses equal a replay of the same batches") {
  const SyntheticDataset ds = small_planted(5, 0.05);
  TrainConfig cfg = preset_config("synthetic");
  cfg.epochs = 2;
  cfg.batch_size = 7;
  cfg.seed = 21;
  ModelParams p = init_for_dataset(ds.bundle, 6, 1);
  ModelParams replay = p;
  const TrainStats stats = train(p, ds.bundle, cfg);

  SeedStreams streams(cfg.seed);
  AdamState st = AdamState::for_params(replay);
  const auto examples = ds.bundle.train_examples();
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), streams.shuffle);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<LabeledFeature> batch;
      std::vector<PairId> negs;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(examples[order[i]]);
        negs.push_back(sample_negative(ds.bundle.seen_pairs, batch.back().pair, streams.sampling));
      }
      const BatchLoss bl = batch_loss(replay, batch, negs, cfg.weights, {}, streams.sampling);
      sum += bl.total * static_cast<double>(batch.size());
      adam_step(replay, bl.grads, st, cfg);
    }
    CHECK(stats.epochs[e].total == doctest::Approx(sum / static_cast<double>(examples.size())).epsilon(1e-12));
  }
  CHECK(replay == p);
}

TEST_CASE("planted data: loss strictly decreases over the first 10 epochs") {
  SyntheticSpec spec;
  spec.seed = 1;
  const SyntheticDataset ds = generate_synthetic(spec);
  TrainConfig cfg = preset_config("synthetic");
  cfg.epochs = 10;
  cfg.seed = 1;
  ModelParams p = init_for_dataset(ds.bundle, 12, SeedStreams(1).init);
  const TrainStats st = train(p, ds.bundle, cfg);
  REQUIRE(st.epochs.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) CHECK(st.epochs[e].total < st.epochs[e - 1].total);
}

TEST_CASE("train rejects a mismatched model") {
  const SyntheticDataset ds = small_planted(1);
  ModelParams p = init_params(Vocab{{"q"}, {"r"}}, 6, 6, nullptr, 0);
  CHECK_THROWS_AS(train(p, ds.bundle, preset_config("synthetic")), ValidationError);
}

TEST_CASE("singular operators abort training with the epoch and batch") {
  const SyntheticDataset ds = small_planted(4);
  ModelParams p = init_for_dataset(ds.bundle, 6, 0);
  p.attrs.operators[0] = Mat(6, 6);
  TrainConfig cfg = preset_config("synthetic");
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train(p, ds.bundle, cfg), doctest::Contains("epoch 1, batch"), SingularMatrixError);
}

TEST_CASE("finite difference checker") {
  GradCheckProblem prob = make_gradcheck_problem(6, 4, 5, 4, 0);
  SUBCASE("all-zero weights give zero error") {
    const LossWeights zero{0.0, 0.0, 0.0, 0.0, 0.0, 0.5};
    const GradCheckResult r =
        finite_diff_check(prob.params, prob.batch, prob.negatives, zero, prob.antonyms, prob.rng, 1e-5);
    CHECK(r.max_rel_error == 0.0);
  }
  SUBCASE("all weights active on 20 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      GradCheckProblem q = make_gradcheck_problem(6, 4, 5, 4, seed);
      worst = std::max(worst, finite_diff_check(q.params, q.batch, q.negatives, LossWeights{}, q.antonyms, q.rng, 1e-5)
                                  .max_rel_error);
    }
    CHECK(worst <= 1e-4);
  }
  SUBCASE("a corrupted gradient entry is caught") {
    std::mt19937_64 rng = prob.rng;
    BatchLoss bl = batch_loss(prob.params, prob.batch, prob.negatives, LossWeights{}, prob.antonyms, rng);
    std::size_t k = 0;
    while (bl.grads.embedder.weight.span()[k] == 0.0) ++k;
    bl.grads.embedder.weight.span()[k] *= 2.0;
    const GradCheckResult r = finite_diff_check(prob.params, prob.batch, prob.negatives, LossWeights{},
                                                prob.antonyms, prob.rng, 1e-5, {}, &bl.grads);
    CHECK(r.max_rel_error > 0.1);
    CHECK(r.worst_tensor == "embedder.weight");
  }
  CHECK_THROWS_AS(finite_diff_check(prob.params, prob.batch, prob.negatives, LossWeights{}, prob.antonyms, prob.rng,
                                    1e-2),
                  ValidationError);
}

TEST_CASE("seed streams are distinct and reproducible") {
  SeedStreams a(7), b(7), c(8);
  CHECK(a.init == b.init);
  CHECK(a.shuffle() == b.shuffle());
  CHECK(a.init != c.init);
  SeedStreams d(7);
  CHECK(d.shuffle() != d.sampling());
}

TEST_CASE("validation split holds out pairs, not images") {
  SyntheticSpec spec;
  spec.seed = 3;
  spec.images_per_pair = 2;
  const SyntheticDataset ds = generate_synthetic(spec);
  const DatasetBundle v = validation_split(ds.bundle, 0.2, 1);
  CHECK(v.unseen_pairs.size() == 24);
  CHECK(v.seen_pairs.size() == 96);
  CHECK_NOTHROW(v.validate());
  for (PairId p : v.unseen_pairs)
    CHECK(std::find(ds.bundle.seen_pairs.begin(), ds.bundle.seen_pairs.end(), p) != ds.bundle.seen_pairs.end());
  CHECK(v.train.size() + v.test.size() == ds.bundle.train.size());
}
