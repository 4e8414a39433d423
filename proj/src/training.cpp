#include "attrop/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "attrop/errors.hpp"
#include "attrop/evaluation.hpp"
#include "attrop/text_io.hpp"

namespace attrop {

void TrainConfig::validate() const {
  if (!(lr_main > 0.0) || !(lr_attr > 0.0)) throw ValidationError("learning rates must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  weights.validate();
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig cfg;
  if (name == "mit-like") {
    cfg.epochs = 800;
    cfg.weights.aux = 1000.0;
  } else if (name == "zappos-like") {
    cfg.epochs = 1000;
  } else if (name == "synthetic") {
    // Desk-scale runs see a few thousand images, so they use larger steps
    // and smaller batches than the full-size presets.
    cfg.epochs = 300;
    cfg.lr_main = 1e-3;
    cfg.lr_attr = 1e-4;
    cfg.batch_size = 64;
  } else {
    throw ValidationError("unknown preset '" + name + "'");
  }
  return cfg;
}

std::vector<std::string> preset_names() { return {"mit-like", "zappos-like", "synthetic"}; }

AdamState AdamState::for_params(const ModelParams& params) {
  return {GradAccumulator::zeros_like(params), GradAccumulator::zeros_like(params), 0};
}

namespace {

template <class T>
std::vector<std::span<double>> tensor_spans(T& x) {
  std::vector<std::span<double>> out;
  visit_tensors(x, [&](TensorGroup, const std::string&, std::span<double> t) { out.push_back(t); });
  return out;
}

template <class T>
std::vector<std::span<const double>> tensor_spans_const(const T& x) {
  std::vector<std::span<const double>> out;
  visit_tensors(x, [&](TensorGroup, const std::string&, std::span<const double> t) { out.push_back(t); });
  return out;
}

}  // namespace

void adam_step(ModelParams& params, const GradAccumulator& grads, AdamState& state, const TrainConfig& cfg) {
  const auto g = tensor_spans_const(grads);
  const auto m = tensor_spans(state.first_moment);
  const auto v = tensor_spans(state.second_moment);

  std::size_t k = 0;
  visit_tensors(params, [&](TensorGroup, const std::string& name, std::span<double> p) {
    if (k >= g.size() || g[k].size() != p.size() || m[k].size() != p.size() || v[k].size() != p.size()) {
      throw ShapeError("adam_step: gradient/moment shape mismatch at " + name);
    }
    if (!all_finite(g[k])) throw NonFiniteError("non-finite gradient in tensor " + name);
    ++k;
  });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, t);

  k = 0;
  visit_tensors(params, [&](TensorGroup group, const std::string&, std::span<double> p) {
    const std::size_t idx = k++;
    if (group == TensorGroup::Objects && cfg.freeze_objects) return;
    const double lr = group == TensorGroup::Operators ? cfg.lr_attr : cfg.lr_main;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[idx][i];
      m[idx][i] = AdamState::kBeta1 * m[idx][i] + (1.0 - AdamState::kBeta1) * gi;
      v[idx][i] = AdamState::kBeta2 * v[idx][i] + (1.0 - AdamState::kBeta2) * gi * gi;
      const double m_hat = m[idx][i] / correction1;
      const double v_hat = v[idx][i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  });
}

PairId sample_negative(std::span<const PairId> seen_pairs, PairId current, std::mt19937_64& rng) {
  const auto pos = std::find(seen_pairs.begin(), seen_pairs.end(), current);
  const std::size_t excluded =
      pos == seen_pairs.end() ? seen_pairs.size() : static_cast<std::size_t>(pos - seen_pairs.begin());
  const std::size_t candidates = seen_pairs.size() - (pos == seen_pairs.end() ? 0 : 1);
  if (candidates < 1 || seen_pairs.size() < 2) {
    throw ValidationError("sample_negative: need at least two distinct seen pairs");
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates - 1);
  std::size_t i = pick(rng);
  if (i >= excluded) ++i;
  return seen_pairs[i];
}

SeedStreams::SeedStreams(std::uint64_t master_seed) {
  auto derive = [&](std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32), stream};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  };
  init = derive(0);
  shuffle.seed(derive(1));
  sampling.seed(derive(2));
}

ModelParams init_for_dataset(const DatasetBundle& data, std::size_t dim, std::uint64_t seed) {
  const NamedVectors* vectors = data.object_vectors ? &*data.object_vectors : nullptr;
  return init_params(data.vocab, dim, data.feat_dim, vectors, seed);
}

TrainStats train(ModelParams& params, const DatasetBundle& data, const TrainConfig& cfg, const StepObserver& observer) {
  cfg.validate();
  validate_shapes(params);
  if (params.vocab != data.vocab) throw ValidationError("model vocabulary does not match the dataset");
  if (params.feat_dim != data.feat_dim) throw ValidationError("model feature dimension does not match the dataset");
  TrainStats stats;
  if (cfg.epochs == 0) return stats;
  if (data.train.empty()) throw ValidationError("no training instances");

  const std::vector<LabeledFeature> examples = data.train_examples();
  const AntonymList antonyms = data.antonyms.value_or(AntonymList{});
  SeedStreams streams(cfg.seed);
  AdamState state = AdamState::for_params(params);
  const LossOptions options{cfg.detach_inverse};

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledFeature> batch;
  std::vector<PairId> negatives;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), streams.shuffle);
    EpochStats es;
    es.epoch = epoch + 1;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      negatives.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(examples[order[i]]);
        negatives.push_back(sample_negative(data.seen_pairs, batch.back().pair, streams.sampling));
      }

      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index + 1);
      BatchLoss loss;
      try {
        loss = batch_loss(params, batch, negatives, cfg.weights, antonyms, streams.sampling, options);
        if (!std::isfinite(loss.total)) throw NonFiniteError("non-finite loss");
        adam_step(params, loss.grads, state, cfg);
      } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(where + ": " + e.what());
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(where + ": " + e.what());
      }

      const double n = static_cast<double>(stop - start);
      es.total += n * loss.total;
      es.terms.triplet += n * loss.terms.triplet;
      es.terms.aux += n * loss.terms.aux;
      es.terms.inv += n * loss.terms.inv;
      es.terms.comm += n * loss.terms.comm;
      es.terms.ant += n * loss.terms.ant;
      if (observer) observer(epoch, batch_index, loss);
    }

    const double n = static_cast<double>(examples.size());
    es.total /= n;
    es.terms.triplet /= n;
    es.terms.aux /= n;
    es.terms.inv /= n;
    es.terms.comm /= n;
    es.terms.ant /= n;
    // Wall-clock time would make deterministic runs differ, so it is only
    // recorded for non-deterministic ones.
    if (!cfg.deterministic) {
      es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    stats.epochs.push_back(es);
  }
  return stats;
}

void write_stats_csv(const TrainStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write stats '" + path.string() + "'");
  out << "epoch,total,triplet,aux,inv,comm,ant,seconds\n";
  for (const auto& e : stats.epochs) {
    out << e.epoch << ',' << text::format_double(e.total) << ',' << text::format_double(e.terms.triplet) << ','
        << text::format_double(e.terms.aux) << ',' << text::format_double(e.terms.inv) << ','
        << text::format_double(e.terms.comm) << ',' << text::format_double(e.terms.ant) << ','
        << text::format_double(e.seconds) << '\n';
  }
}

GradCheckResult finite_diff_check(const ModelParams& params, std::span<const LabeledFeature> batch,
                                  std::span<const PairId> negatives, const LossWeights& weights,
                                  const AntonymList& antonyms, const std::mt19937_64& rng, double eps,
                                  const LossOptions& options, const GradAccumulator* analytic) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ValidationError("finite_diff_check: eps must lie in [1e-7, 1e-3]");

  auto loss_at = [&](const ModelParams& p) {
    std::mt19937_64 local = rng;
    return batch_loss(p, batch, negatives, weights, antonyms, local, options);
  };
  GradAccumulator own;
  if (analytic == nullptr) {
    own = loss_at(params).grads;
    analytic = &own;
  }
  const auto expected = tensor_spans_const(*analytic);

  ModelParams work = params;
  GradCheckResult result;
  std::size_t k = 0;
  visit_tensors(work, [&](TensorGroup, const std::string& name, std::span<double> t) {
    const auto ana = expected.at(k++);
    if (ana.size() != t.size()) throw ShapeError("finite_diff_check: gradient shape mismatch at " + name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double original = t[i];
      t[i] = original + eps;
      const double plus = loss_at(work).total;
      t[i] = original - eps;
      const double minus = loss_at(work).total;
      t[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(numeric), std::abs(ana[i]), kRelErrorFloor});
      const double rel = std::abs(numeric - ana[i]) / denom;
      if (rel > result.max_rel_error) {
        result = {rel, name, i, ana[i], numeric};
      }
    }
  });
  return result;
}

GradCheckProblem make_gradcheck_problem(std::size_t dim, std::size_t num_attrs, std::size_t num_objs,
                                        std::size_t batch_size, std::uint64_t seed) {
  if (num_attrs < 2 || num_objs < 1 || dim < 1 || batch_size < 1) {
    throw ValidationError("gradcheck problem needs >= 2 attributes, >= 1 object, dim >= 1, batch >= 1");
  }
  Vocab vocab;
  for (std::size_t a = 0; a < num_attrs; ++a) vocab.attributes.push_back("a" + std::to_string(a));
  for (std::size_t o = 0; o < num_objs; ++o) vocab.objects.push_back("o" + std::to_string(o));

  GradCheckProblem prob{init_params(vocab, dim, dim, nullptr, seed), {}, {}, {}, std::mt19937_64(seed ^ 0x5eedULL)};
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 0.3 / std::sqrt(static_cast<double>(dim));
  for (auto& m : prob.params.attrs.operators)
    for (double& x : m.span()) x += scale * normal(rng);
  for (auto& v : prob.params.objects.vectors)
    for (double& x : v) x = normal(rng);

  std::uniform_int_distribution<std::size_t> pick_attr(0, num_attrs - 1);
  std::uniform_int_distribution<std::size_t> pick_obj(0, num_objs - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    LabeledFeature ex;
    ex.pair = {pick_attr(rng), pick_obj(rng)};
    // Features near the true composition keep most triplet hinges active.
    const Vec composed = compose(prob.params, ex.pair);
    ex.feat = Vec(dim);
    for (std::size_t j = 0; j < dim; ++j) ex.feat[j] = composed[j] + normal(rng);
    PairId neg;
    do {
      neg = {pick_attr(rng), pick_obj(rng)};
    } while (neg == ex.pair);
    prob.batch.push_back(std::move(ex));
    prob.negatives.push_back(neg);
  }
  for (std::size_t a = 0; a + 1 < num_attrs && prob.antonyms.pairs.size() < 2; a += 2) {
    prob.antonyms.pairs.emplace_back(a, a + 1);
  }
  return prob;
}

DatasetBundle validation_split(const DatasetBundle& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("validation fraction must lie in (0, 1)");
  const std::size_t n = data.seen_pairs.size();
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (held == 0 || held + 2 > n) throw ValidationError("too few seen pairs to hold out a validation split");

  std::mt19937_64 rng(seed);
  std::vector<PairId> pairs = data.seen_pairs;
  for (int attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    std::vector<bool> attr_cov(data.vocab.num_attrs()), obj_cov(data.vocab.num_objs());
    for (std::size_t i = held; i < n; ++i) {
      attr_cov[pairs[i].attr] = true;
      obj_cov[pairs[i].obj] = true;
    }
    if (!std::all_of(attr_cov.begin(), attr_cov.end(), [](bool x) { return x; }) ||
        !std::all_of(obj_cov.begin(), obj_cov.end(), [](bool x) { return x; })) {
      continue;
    }
    DatasetBundle out;
    out.vocab = data.vocab;
    out.feat_dim = data.feat_dim;
    out.antonyms = data.antonyms;
    out.object_vectors = data.object_vectors;
    out.unseen_pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(held));
    out.seen_pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(held), pairs.end());
    std::sort(out.unseen_pairs.begin(), out.unseen_pairs.end());
    std::sort(out.seen_pairs.begin(), out.seen_pairs.end());
    const std::set<PairId> held_set(out.unseen_pairs.begin(), out.unseen_pairs.end());
    for (const auto& inst : data.train) (held_set.count(inst.pair) ? out.test : out.train).push_back(inst);
    out.validate();
    return out;
  }
  throw ValidationError("no validation split keeps every attribute and object in training pairs");
}

AuxTuning tune_aux_weight(const DatasetBundle& data, const TrainConfig& cfg, std::size_t dim) {
  const DatasetBundle split = validation_split(data, 0.2, cfg.seed);
  const auto test = split.test_examples();
  AuxTuning out;
  double best = -1.0;
  for (double w : kAuxWeightGrid) {
    TrainConfig trial = cfg;
    trial.weights.aux = w;
    ModelParams params = init_for_dataset(split, dim, SeedStreams(cfg.seed).init);
    train(params, split, trial);
    const double open = evaluate(params, test, split.seen_pairs, split.unseen_pairs).open_top1;
    out.open_accuracy.emplace_back(w, open);
    if (open > best) {
      best = open;
      out.best_weight = w;
    }
  }
  return out;
}

}  // namespace attrop
