#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attrop/dataset.hpp"
#include "attrop/losses.hpp"
#include "attrop/model.hpp"

namespace attrop {

struct TrainConfig {
  double lr_main = 1e-4;
  double lr_attr = 1e-5;  // attribute operators only
  std::size_t batch_size = 512;
  std::size_t epochs = 300;
  LossWeights weights;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool freeze_objects = false;
  bool detach_inverse = false;

  void validate() const;
};

// Named configurations. "mit-like": 800 epochs, aux weight 1000.
// "zappos-like": 1000 epochs, all weights 1. "synthetic": the desk-scale
// setting used for planted-model runs.
TrainConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  GradAccumulator first_moment;
  GradAccumulator second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& params);
};

// One bias-corrected Adam update. Operators use lr_attr, everything else
// lr_main; object vectors are skipped when frozen. Throws NonFiniteError
// naming the tensor if a gradient entry is NaN or infinite.
void adam_step(ModelParams& params, const GradAccumulator& grads, AdamState& state, const TrainConfig& cfg);

// Uniform over `seen_pairs` with `current` removed.
PairId sample_negative(std::span<const PairId> seen_pairs, PairId current, std::mt19937_64& rng);

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0.0;
  TermBreakdown terms;
  double seconds = 0.0;
};

struct TrainStats {
  std::vector<EpochStats> epochs;
};

// The three RNG streams a training run draws from, all derived from the
// master seed: parameter init, batch shuffling, negative/partner sampling.
struct SeedStreams {
  std::uint64_t init = 0;
  std::mt19937_64 shuffle;
  std::mt19937_64 sampling;
  explicit SeedStreams(std::uint64_t master_seed);
};

// Invoked after every optimizer step with (epoch, batch index, loss).
using StepObserver = std::function<void(std::size_t, std::size_t, const BatchLoss&)>;

// Epochs of seeded shuffled mini-batches over the training split; per batch
// one negative per example, batch_loss, then adam_step. Throws
// NumericalError with the epoch and batch on a singular operator or a
// non-finite loss.
TrainStats train(ModelParams& params, const DatasetBundle& data, const TrainConfig& cfg,
                 const StepObserver& observer = {});

// init_params for a dataset, honoring its object vectors when present.
ModelParams init_for_dataset(const DatasetBundle& data, std::size_t dim, std::uint64_t seed);

// Writes "epoch,total,triplet,aux,inv,comm,ant,seconds".
void write_stats_csv(const TrainStats& stats, const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline constexpr double kRelErrorFloor = 1e-8;

// Central differences on every scalar parameter against `analytic` (usually
// batch_loss's own gradient). The loss is re-evaluated with a copy of
// `rng` each time so stochastic choices stay fixed. ε must lie in
// [1e-7, 1e-3].
GradCheckResult finite_diff_check(const ModelParams& params, std::span<const LabeledFeature> batch,
                                  std::span<const PairId> negatives, const LossWeights& weights,
                                  const AntonymList& antonyms, const std::mt19937_64& rng, double eps,
                                  const LossOptions& options = {}, const GradAccumulator* analytic = nullptr);

// A random gradient-check instance: non-trivial parameters, a small batch
// with negatives and a couple of antonym pairs.
struct GradCheckProblem {
  ModelParams params;
  std::vector<LabeledFeature> batch;
  std::vector<PairId> negatives;
  AntonymList antonyms;
  std::mt19937_64 rng;
};

GradCheckProblem make_gradcheck_problem(std::size_t dim, std::size_t num_attrs, std::size_t num_objs,
                                        std::size_t batch_size, std::uint64_t seed);

// Splits the seen pairs into a training part and a held-out 20% validation
// part (every attribute and object still covered by training pairs). The
// returned bundle trains on the remaining pairs and tests on the held-out
// ones.
DatasetBundle validation_split(const DatasetBundle& data, double fraction, std::uint64_t seed);

struct AuxTuning {
  double best_weight = 0.0;
  std::vector<std::pair<double, double>> open_accuracy;  // (w_aux, open top-1)
};

inline constexpr double kAuxWeightGrid[] = {1.0, 10.0, 100.0, 1000.0};

// Grid search over the auxiliary weight, scored by open-world accuracy on
// the validation split.
AuxTuning tune_aux_weight(const DatasetBundle& data, const TrainConfig& cfg, std::size_t dim);

}  // namespace attrop
