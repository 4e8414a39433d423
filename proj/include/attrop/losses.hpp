#pragma once

// The five loss terms and their analytic gradients with respect to every
// learnable tensor, plus the weighted per-batch objective.
//
// Each term returns its value and adds its gradient into a GradAccumulator.
// Terms that need the image embedding take an EmbeddedImage so the raw
// feature is available for the embedder's gradient.

#include <random>
#include <span>
#include <utility>
#include <vector>

#include "attrop/linalg.hpp"
#include "attrop/model.hpp"

namespace attrop {

struct LossWeights {
  double triplet = 1.0;
  double aux = 1.0;
  double inv = 1.0;
  double comm = 1.0;
  double ant = 1.0;
  double margin = 0.5;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Same layout as the learnable part of ModelParams.
struct GradAccumulator {
  ObjectTable objects;
  AttributeBank attrs;
  ImageEmbedder embedder;
  AuxHeads aux;

  static GradAccumulator zeros_like(const ModelParams& params);
  void scale(double alpha);
  void add(const GradAccumulator& other);
  bool operator==(const GradAccumulator&) const = default;
};

struct AntonymList {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  // Indices in range and no self-pairs.
  void validate(std::size_t num_attrs) const;
  // Every attribute paired with `attr`, in list order, either side of the pair.
  std::vector<std::size_t> partners_of(std::size_t attr) const;
  bool empty() const { return pairs.empty(); }
};

struct EmbeddedImage {
  Vec feat;
  Vec emb;  // embed_image(params, feat)
};

EmbeddedImage embed(const ModelParams& params, const Vec& feat);

// max(0, d(f(x), M_pos·o_pos) − d(f(x), M_neg·o_neg) + m). Gradients are only
// accumulated while the hinge is active.
double triplet_term(const EmbeddedImage& img, PairId pos, PairId neg, const ModelParams& params, double margin,
                    GradAccumulator* grads);

// Cross-entropy of both auxiliary heads on the composed vector M_a·o.
// Gradients reach the heads and, through the composition, M_a and o.
double aux_term(PairId pair, const ModelParams& params, GradAccumulator* grads);

// Attribute swap: f(x') = M_a'·M_a⁻¹·f(x), then a hinge with (a', o) as the
// positive and the original (a, o) as the negative. Gradients flow through
// the inverse unless `detach_inverse` is set, in which case f(x') is treated
// as a constant. `inverse_of_a` may carry a precomputed M_a⁻¹.
// Throws SingularMatrixError naming attribute a when M_a cannot be inverted.
double inv_term(const EmbeddedImage& img, std::size_t a, std::size_t a_prime, std::size_t obj,
                const ModelParams& params, double margin, GradAccumulator* grads,
                const Mat* inverse_of_a = nullptr, bool detach_inverse = false);

// ‖M_a·M_b·o − M_b·M_a·o‖ on object `obj`.
double comm_term(std::size_t a, std::size_t b, std::size_t obj, const ModelParams& params, GradAccumulator* grads);

// ‖M_a'·M_a·o − o‖ on object `obj`.
double ant_term(std::size_t a, std::size_t a_prime, std::size_t obj, const ModelParams& params,
                GradAccumulator* grads);

struct LabeledFeature {
  Vec feat;
  PairId pair;
  bool operator==(const LabeledFeature&) const = default;
};

struct TermBreakdown {
  double triplet = 0.0;
  double aux = 0.0;
  double inv = 0.0;
  double comm = 0.0;
  double ant = 0.0;
};

struct BatchLoss {
  double total = 0.0;
  TermBreakdown terms;  // unweighted per-example means
  GradAccumulator grads;
};

struct LossOptions {
  bool detach_inverse = false;
};

// Mean over the batch of the weighted sum of all five terms. Per example the
// swap attribute a' ≠ a and the commutator partner b ≠ a are drawn uniformly
// from `rng` (in that order, each only when its weight is non-zero), and the
// antonym term runs once per antonym partner of a.
BatchLoss batch_loss(const ModelParams& params, std::span<const LabeledFeature> batch,
                     std::span<const PairId> negatives, const LossWeights& weights, const AntonymList& antonyms,
                     std::mt19937_64& rng, const LossOptions& options = {});

// Uniform draw from [0, n) excluding `excluded`; n ≥ 2.
std::size_t uniform_index_excluding(std::mt19937_64& rng, std::size_t n, std::size_t excluded);

}  // namespace attrop
