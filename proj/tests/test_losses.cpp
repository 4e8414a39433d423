#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "attrop/errors.hpp"
#include "attrop/losses.hpp"
#include "attrop/training.hpp"

using namespace attrop;

namespace {

// Central differences over every parameter, written independently of the
// library's checker.
double fd_max_rel_error(const ModelParams& params, const GradAccumulator& analytic,
                        const std::function<double(const ModelParams&)>& loss, double eps = 1e-5) {
  std::vector<std::span<const double>> grads;
  visit_tensors(analytic, [&](TensorGroup, const std::string&, std::span<const double> s) { grads.push_back(s); });
  ModelParams work = params;
  std::vector<std::span<double>> slots;
  visit_tensors(work, [&](TensorGroup, const std::string&, std::span<double> s) { slots.push_back(s); });
  REQUIRE(grads.size() == slots.size());
  double worst = 0.0;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    for (std::size_t i = 0; i < slots[t].size(); ++i) {
      const double saved = slots[t][i];
      slots[t][i] = saved + eps;
      const double hi = loss(work);
      slots[t][i] = saved - eps;
      const double lo = loss(work);
      slots[t][i] = saved;
      const double numeric = (hi - lo) / (2 * eps);
      const double a = grads[t][i];
      const double denom = std::max({std::abs(numeric), std::abs(a), 1e-8});
      worst = std::max(worst, std::abs(numeric - a) / denom);
    }
  }
  return worst;
}

ModelParams two_dim_params(std::size_t attrs, std::size_t objs) {
  Vocab v;
  for (std::size_t i = 0; i < attrs; ++i) v.attributes.push_back("a" + std::to_string(i));
  for (std::size_t i = 0; i < objs; ++i) v.objects.push_back("o" + std::to_string(i));
  return init_params(v, 2, 2, nullptr, 0);
}

bool all_zero(const GradAccumulator& g) {
  bool zero = true;
  visit_tensors(g, [&](TensorGroup, const std::string&, std::span<const double> s) {
    for (double x : s) zero = zero && x == 0.0;
  });
  return zero;
}

}  // namespace

TEST_CASE("loss weights validation") {
  CHECK_NOTHROW(LossWeights{}.validate());
  LossWeights w;
  w.aux = -1.0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  LossWeights m;
  m.margin = 0.0;
  CHECK_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("triplet term arithmetic") {
  ModelParams p = two_dim_params(1, 3);
  p.embedder.weight = Mat(2, 2);
  p.embedder.bias = Vec(2);
  const EmbeddedImage img = embed(p, Vec{0.3, 0.7});
  REQUIRE(img.emb == Vec{0.0, 0.0});

  SUBCASE("violated margin") {
    p.objects.vectors[0] = Vec{2.0, 0.0};
    p.objects.vectors[1] = Vec{1.0, 0.0};
    GradAccumulator g = GradAccumulator::zeros_like(p);
    CHECK(triplet_term(img, {0, 0}, {0, 1}, p, 0.5, &g) == doctest::Approx(1.5));
    CHECK_FALSE(all_zero(g));
  }
  SUBCASE("satisfied margin gives zero loss and zero gradient") {
    p.objects.vectors[0] = Vec{1.0, 0.0};
    p.objects.vectors[1] = Vec{0.0, 2.0};
    GradAccumulator g = GradAccumulator::zeros_like(p);
    CHECK(triplet_term(img, {0, 0}, {0, 1}, p, 0.5, &g) == 0.0);
    CHECK(all_zero(g));
  }
  SUBCASE("exactly on the margin") {
    p.objects.vectors[0] = Vec{1.0, 0.0};
    p.objects.vectors[1] = Vec{0.0, 1.5};
    GradAccumulator g = GradAccumulator::zeros_like(p);
    CHECK(triplet_term(img, {0, 0}, {0, 1}, p, 0.5, &g) == 0.0);
    CHECK(all_zero(g));
  }
}

TEST_CASE("aux term") {
  Vocab v;
  for (int i = 0; i < 5; ++i) v.attributes.push_back("a" + std::to_string(i));
  for (int i = 0; i < 10; ++i) v.objects.push_back("o" + std::to_string(i));
  ModelParams p = init_params(v, 4, 4, nullptr, 2);
  for (double& x : p.aux.attr_weight.span()) x = 0.0;
  for (double& x : p.aux.obj_weight.span()) x = 0.0;
  p.aux.attr_bias = Vec(5);
  p.aux.obj_bias = Vec(10);
  CHECK(aux_term({1, 3}, p, nullptr) == doctest::Approx(std::log(5.0) + std::log(10.0)).epsilon(1e-12));
  CHECK(aux_term({1, 3}, p, nullptr) == doctest::Approx(3.912).epsilon(1e-4));

  p.aux.attr_bias[1] = 100.0;
  p.aux.obj_bias[3] = 100.0;
  CHECK(aux_term({1, 3}, p, nullptr) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("inv term under identity operators equals the margin") {
  const ModelParams p = init_params(Vocab{{"a", "b", "c"}, {"x", "y"}}, 4, 3, nullptr, 5);
  const EmbeddedImage img = embed(p, Vec{0.5, -1.0, 2.0});
  for (double m : {0.5, 0.2, 1.0}) CHECK(inv_term(img, 0, 2, 1, p, m, nullptr) == doctest::Approx(m));

  ModelParams q = p;
  q.attrs.operators[0] = Mat::from_rows({{1.2, 0.1, 0, 0}, {0, 0.9, 0, 0}, {0, 0, 1.1, 0.3}, {0, 0, 0, 1.0}});
  q.attrs.operators[1] = q.attrs.operators[0];
  CHECK(inv_term(embed(q, Vec{0.5, -1.0, 2.0}), 0, 1, 1, q, 0.5, nullptr) == doctest::Approx(0.5));
}

TEST_CASE("inv term reports a singular operator by attribute name") {
  ModelParams p = init_params(Vocab{{"sliced", "whole"}, {"apple"}}, 3, 3, nullptr, 1);
  p.attrs.operators[0] = Mat(3, 3);
  const EmbeddedImage img = embed(p, Vec{1.0, 1.0, 1.0});
  CHECK_THROWS_WITH_AS(inv_term(img, 0, 1, 0, p, 0.5, nullptr), doctest::Contains("sliced"), SingularMatrixError);
}

TEST_CASE("comm term") {
  ModelParams p = two_dim_params(2, 1);
  p.objects.vectors[0] = Vec{1.0, 1.0};
  SUBCASE("2x2 commutator") {
    p.attrs.operators[0] = Mat::from_rows({{0.0, 1.0}, {1.0, 0.0}});
    p.attrs.operators[1] = Mat::from_rows({{1.0, 0.0}, {0.0, -1.0}});
    CHECK(comm_term(0, 1, 0, p, nullptr) == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-14));
    CHECK(comm_term(1, 0, 0, p, nullptr) == comm_term(0, 1, 0, p, nullptr));
  }
  SUBCASE("equal operators commute") {
    p.attrs.operators[0] = Mat::from_rows({{0.3, 1.0}, {-2.0, 0.5}});
    p.attrs.operators[1] = p.attrs.operators[0];
    CHECK(comm_term(0, 1, 0, p, nullptr) == 0.0);
  }
  SUBCASE("diagonal operators commute") {
    p.attrs.operators[0] = Mat::from_rows({{2.0, 0.0}, {0.0, 3.0}});
    p.attrs.operators[1] = Mat::from_rows({{-1.0, 0.0}, {0.0, 0.5}});
    CHECK(comm_term(0, 1, 0, p, nullptr) == 0.0);
  }
}

TEST_CASE("ant term") {
  ModelParams p = two_dim_params(2, 1);
  p.objects.vectors[0] = Vec{1.0, 0.0};
  CHECK(ant_term(0, 1, 0, p, nullptr) == 0.0);
  p.attrs.operators[0] = Mat::from_rows({{2.0, 0.0}, {0.0, 2.0}});
  CHECK(ant_term(0, 1, 0, p, nullptr) == doctest::Approx(1.0));

  p.attrs.operators[0] = Mat::from_rows({{1.5, 0.4}, {-0.3, 0.8}});
  p.attrs.operators[1] = lu_invert(p.attrs.operators[0]);
  p.objects.vectors[0] = Vec{0.7, -1.3};
  CHECK(ant_term(0, 1, 0, p, nullptr) < 1e-14);
}

TEST_CASE("antonym list") {
  AntonymList list{{{0, 1}, {2, 0}}};
  CHECK_NOTHROW(list.validate(3));
  CHECK(list.partners_of(0) == std::vector<std::size_t>{1, 2});
  CHECK(list.partners_of(1) == std::vector<std::size_t>{0});
  CHECK(list.partners_of(2) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS((AntonymList{{{1, 1}}}).validate(3), ValidationError);
  CHECK_THROWS_AS((AntonymList{{{0, 3}}}).validate(3), ValidationError);
}

TEST_CASE("every term is nonnegative and comm is symmetric on random instances") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    GradCheckProblem prob = make_gradcheck_problem(5, 4, 3, 2, seed);
    const ModelParams& p = prob.params;
    const EmbeddedImage img = embed(p, prob.batch[0].feat);
    CHECK(triplet_term(img, prob.batch[0].pair, prob.negatives[0], p, 0.5, nullptr) >= 0.0);
    CHECK(aux_term(prob.batch[0].pair, p, nullptr) >= 0.0);
    CHECK(inv_term(img, 0, 1, 2, p, 0.5, nullptr) >= 0.0);
    CHECK(comm_term(1, 3, 0, p, nullptr) >= 0.0);
    CHECK(comm_term(1, 3, 0, p, nullptr) == doctest::Approx(comm_term(3, 1, 0, p, nullptr)).epsilon(1e-14));
    CHECK(ant_term(2, 0, 1, p, nullptr) >= 0.0);
  }
}

TEST_CASE("per-term gradients match central differences at 20 random points") {
  double worst_no_inverse = 0.0, worst_inverse = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GradCheckProblem prob = make_gradcheck_problem(6, 4, 5, 1, seed);
    const ModelParams& p = prob.params;
    const Vec feat = prob.batch[0].feat;
    const PairId pos = prob.batch[0].pair;
    const PairId neg = prob.negatives[0];
    const std::size_t a = pos.attr, b = (pos.attr + 1) % 4, o = pos.obj;

    auto check = [&](const std::function<double(const ModelParams&, GradAccumulator*)>& term, double& worst) {
      GradAccumulator g = GradAccumulator::zeros_like(p);
      term(p, &g);
      worst = std::max(worst, fd_max_rel_error(p, g, [&](const ModelParams& q) { return term(q, nullptr); }));
    };
    // A wide margin keeps the hinge active so its gradient is exercised.
    check([&](const ModelParams& q, GradAccumulator* g) { return triplet_term(embed(q, feat), pos, neg, q, 5.0, g); },
          worst_no_inverse);
    check([&](const ModelParams& q, GradAccumulator* g) { return aux_term(pos, q, g); }, worst_no_inverse);
    check([&](const ModelParams& q, GradAccumulator* g) { return comm_term(a, b, o, q, g); }, worst_no_inverse);
    check([&](const ModelParams& q, GradAccumulator* g) { return ant_term(a, b, o, q, g); }, worst_no_inverse);
    check([&](const ModelParams& q, GradAccumulator* g) { return inv_term(embed(q, feat), a, b, o, q, 5.0, g); },
          worst_inverse);
  }
  CHECK(worst_no_inverse <= 1e-5);
  CHECK(worst_inverse <= 1e-4);
}

TEST_CASE("batch loss") {
  GradCheckProblem prob = make_gradcheck_problem(6, 5, 4, 4, 3);
  const ModelParams& p = prob.params;

  SUBCASE("only the triplet weight on a batch of one equals the triplet term") {
    LossWeights w{1.0, 0.0, 0.0, 0.0, 0.0, 0.5};
    std::mt19937_64 rng(1);
    const BatchLoss bl = batch_loss(p, std::span(prob.batch).first(1), std::span(prob.negatives).first(1), w,
                                    prob.antonyms, rng);
    GradAccumulator g = GradAccumulator::zeros_like(p);
    const double t = triplet_term(embed(p, prob.batch[0].feat), prob.batch[0].pair, prob.negatives[0], p, 0.5, &g);
    CHECK(bl.total == doctest::Approx(t).epsilon(1e-15));
    CHECK(bl.grads == g);
  }

  SUBCASE("satisfied margins with only the triplet weight give zero") {
    ModelParams q = p;
    q.embedder.weight = Mat(q.dim, q.feat_dim);
    q.embedder.bias = Vec(q.dim);
    for (std::size_t i = 0; i < q.objects.vectors.size(); ++i) {
      q.objects.vectors[i] = Vec(q.dim);
      q.objects.vectors[i][0] = 10.0 * static_cast<double>(i);
    }
    for (Mat& m : q.attrs.operators) m = Mat::identity(q.dim);
    // every image sits on object 0, every negative is elsewhere
    std::vector<LabeledFeature> batch;
    std::vector<PairId> negs;
    for (std::size_t i = 0; i < 3; ++i) {
      batch.push_back({Vec(q.feat_dim), {i, 0}});
      negs.push_back({i, 1 + i});
    }
    std::mt19937_64 rng(1);
    const BatchLoss bl = batch_loss(q, batch, negs, LossWeights{1.0, 0.0, 0.0, 0.0, 0.0, 0.5}, {}, rng);
    CHECK(bl.total == 0.0);
    CHECK(all_zero(bl.grads));
  }

  SUBCASE("all weights: total is the weighted mean of per-term oracles") {
    const LossWeights w{1.0, 2.0, 0.5, 3.0, 1.5, 0.5};
    std::mt19937_64 rng(11);
    std::mt19937_64 replay = rng;
    const BatchLoss bl = batch_loss(p, prob.batch, prob.negatives, w, prob.antonyms, rng);

    double total = 0.0;
    for (std::size_t i = 0; i < prob.batch.size(); ++i) {
      const auto& ex = prob.batch[i];
      const EmbeddedImage img = embed(p, ex.feat);
      const std::size_t a_prime = uniform_index_excluding(replay, p.vocab.num_attrs(), ex.pair.attr);
      const std::size_t b = uniform_index_excluding(replay, p.vocab.num_attrs(), ex.pair.attr);
      double s = w.triplet * triplet_term(img, ex.pair, prob.negatives[i], p, w.margin, nullptr);
      s += w.aux * aux_term(ex.pair, p, nullptr);
      s += w.inv * inv_term(img, ex.pair.attr, a_prime, ex.pair.obj, p, w.margin, nullptr);
      s += w.comm * comm_term(ex.pair.attr, b, ex.pair.obj, p, nullptr);
      for (std::size_t partner : prob.antonyms.partners_of(ex.pair.attr))
        s += w.ant * ant_term(ex.pair.attr, partner, ex.pair.obj, p, nullptr);
      total += s;
    }
    total /= static_cast<double>(prob.batch.size());
    CHECK(bl.total == doctest::Approx(total).epsilon(1e-12));

    const std::mt19937_64 start(11);
    const double err = fd_max_rel_error(p, bl.grads, [&](const ModelParams& q) {
      std::mt19937_64 r = start;
      return batch_loss(q, prob.batch, prob.negatives, w, prob.antonyms, r).total;
    });
    CHECK(err <= 1e-4);
  }

  SUBCASE("deterministic for a fixed rng seed") {
    std::mt19937_64 r1(5), r2(5);
    const BatchLoss a = batch_loss(p, prob.batch, prob.negatives, LossWeights{}, prob.antonyms, r1);
    const BatchLoss b = batch_loss(p, prob.batch, prob.negatives, LossWeights{}, prob.antonyms, r2);
    CHECK(a.total == b.total);
    CHECK(a.grads == b.grads);
  }

  SUBCASE("misaligned negatives and empty batches are rejected") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(batch_loss(p, prob.batch, std::span(prob.negatives).first(2), LossWeights{}, {}, rng),
                    ValidationError);
    CHECK_THROWS_AS(batch_loss(p, {}, {}, LossWeights{}, {}, rng), ValidationError);
  }
}

TEST_CASE("detaching the inverse drops the inverse-path gradient") {
  GradCheckProblem prob = make_gradcheck_problem(5, 4, 3, 1, 2);
  const ModelParams& p = prob.params;
  const EmbeddedImage img = embed(p, prob.batch[0].feat);
  GradAccumulator full = GradAccumulator::zeros_like(p), detached = GradAccumulator::zeros_like(p);
  const double v1 = inv_term(img, 0, 1, 2, p, 5.0, &full);
  const double v2 = inv_term(img, 0, 1, 2, p, 5.0, &detached, nullptr, true);
  CHECK(v1 == v2);
  CHECK_FALSE(full.embedder == detached.embedder);
}

TEST_CASE("uniform_index_excluding never returns the excluded index") {
  std::mt19937_64 rng(0);
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 4000; ++i) ++hits[uniform_index_excluding(rng, 4, 2)];
  CHECK(hits[2] == 0);
  for (int k : {0, 1, 3}) CHECK(hits[k] > 1100);
}
