#include "attrop/losses.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "attrop/errors.hpp"

namespace attrop {

void LossWeights::validate() const {
  for (double w : {triplet, aux, inv, comm, ant}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be finite and non-negative");
  }
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ValidationError("triplet margin must be positive");
}

GradAccumulator GradAccumulator::zeros_like(const ModelParams& params) {
  GradAccumulator g;
  g.objects.vectors.assign(params.objects.vectors.size(), Vec(params.dim));
  g.attrs.operators.assign(params.attrs.operators.size(), Mat(params.dim, params.dim));
  g.embedder.weight = Mat(params.embedder.weight.rows(), params.embedder.weight.cols());
  g.embedder.bias = Vec(params.embedder.bias.size());
  g.aux.attr_weight = Mat(params.aux.attr_weight.rows(), params.aux.attr_weight.cols());
  g.aux.attr_bias = Vec(params.aux.attr_bias.size());
  g.aux.obj_weight = Mat(params.aux.obj_weight.rows(), params.aux.obj_weight.cols());
  g.aux.obj_bias = Vec(params.aux.obj_bias.size());
  return g;
}

void GradAccumulator::scale(double alpha) {
  visit_tensors(*this, [&](TensorGroup, const std::string&, std::span<double> t) {
    for (double& x : t) x *= alpha;
  });
}

void GradAccumulator::add(const GradAccumulator& other) {
  std::vector<std::span<const double>> src;
  visit_tensors(other, [&](TensorGroup, const std::string&, std::span<const double> t) { src.push_back(t); });
  std::size_t k = 0;
  visit_tensors(*this, [&](TensorGroup, const std::string& name, std::span<double> t) {
    if (k >= src.size() || src[k].size() != t.size()) throw ShapeError("GradAccumulator::add: mismatch at " + name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += src[k][i];
    ++k;
  });
}

void AntonymList::validate(std::size_t num_attrs) const {
  for (const auto& [a, b] : pairs) {
    if (a >= num_attrs || b >= num_attrs) throw ValidationError("antonym pair references an unknown attribute index");
    if (a == b) throw ValidationError("antonym pair pairs attribute " + std::to_string(a) + " with itself");
  }
}

std::vector<std::size_t> AntonymList::partners_of(std::size_t attr) const {
  std::vector<std::size_t> out;
  for (const auto& [a, b] : pairs) {
    if (a == attr) out.push_back(b);
    if (b == attr) out.push_back(a);
  }
  return out;
}

EmbeddedImage embed(const ModelParams& params, const Vec& feat) { return {feat, embed_image(params, feat)}; }

std::size_t uniform_index_excluding(std::mt19937_64& rng, std::size_t n, std::size_t excluded) {
  if (n < 2) throw ValidationError("cannot draw an index distinct from " + std::to_string(excluded) + " out of " +
                                   std::to_string(n));
  std::uniform_int_distribution<std::size_t> pick(0, n - 2);
  std::size_t i = pick(rng);
  if (excluded < n && i >= excluded) ++i;
  return i;
}

namespace {

// Backprop of v = M·x into M and x, scaled by w.
void backprop_matvec(Mat& dm, Vec& dx, const Mat& m, const Vec& x, const Vec& dv, double w) {
  add_outer(dm, dv, x, w);
  axpy(dx, w, matvec_transposed(m, dv));
}

void backprop_embedding(GradAccumulator& g, const EmbeddedImage& img, const Vec& de, double w) {
  add_outer(g.embedder.weight, de, img.feat, w);
  axpy(g.embedder.bias, w, de);
}

double triplet_impl(const EmbeddedImage& img, PairId pos, PairId neg, const ModelParams& params, double margin,
                    GradAccumulator* grads, double w) {
  validate_pair(params, pos);
  validate_pair(params, neg);
  const Mat& m_pos = params.attrs.operators[pos.attr];
  const Mat& m_neg = params.attrs.operators[neg.attr];
  const Vec& o_pos = params.objects.vectors[pos.obj];
  const Vec& o_neg = params.objects.vectors[neg.obj];
  const Vec pos_vec = matvec(m_pos, o_pos);
  const Vec neg_vec = matvec(m_neg, o_neg);

  const double hinge = euclidean_distance(img.emb, pos_vec) - euclidean_distance(img.emb, neg_vec) + margin;
  if (!(hinge > 0.0)) return 0.0;
  if (grads == nullptr || w == 0.0) return hinge;

  const Vec g_pos = distance_gradient(img.emb, pos_vec);
  const Vec g_neg = distance_gradient(img.emb, neg_vec);
  backprop_embedding(*grads, img, subtract(g_pos, g_neg), w);
  backprop_matvec(grads->attrs.operators[pos.attr], grads->objects.vectors[pos.obj], m_pos, o_pos, g_pos, -w);
  backprop_matvec(grads->attrs.operators[neg.attr], grads->objects.vectors[neg.obj], m_neg, o_neg, g_neg, w);
  return hinge;
}

double aux_impl(PairId pair, const ModelParams& params, GradAccumulator* grads, double w) {
  validate_pair(params, pair);
  const Mat& m = params.attrs.operators[pair.attr];
  const Vec& o = params.objects.vectors[pair.obj];
  const Vec composed = matvec(m, o);

  Vec attr_logits = matvec(params.aux.attr_weight, composed);
  axpy(attr_logits, 1.0, params.aux.attr_bias);
  Vec obj_logits = matvec(params.aux.obj_weight, composed);
  axpy(obj_logits, 1.0, params.aux.obj_bias);

  const CrossEntropy attr_ce = softmax_cross_entropy(attr_logits, pair.attr);
  const CrossEntropy obj_ce = softmax_cross_entropy(obj_logits, pair.obj);
  if (grads != nullptr && w != 0.0) {
    add_outer(grads->aux.attr_weight, attr_ce.grad, composed, w);
    axpy(grads->aux.attr_bias, w, attr_ce.grad);
    add_outer(grads->aux.obj_weight, obj_ce.grad, composed, w);
    axpy(grads->aux.obj_bias, w, obj_ce.grad);
    Vec d_composed = matvec_transposed(params.aux.attr_weight, attr_ce.grad);
    axpy(d_composed, 1.0, matvec_transposed(params.aux.obj_weight, obj_ce.grad));
    backprop_matvec(grads->attrs.operators[pair.attr], grads->objects.vectors[pair.obj], m, o, d_composed, w);
  }
  return attr_ce.loss + obj_ce.loss;
}

Mat invert_operator(const ModelParams& params, std::size_t attr) {
  try {
    return lu_invert(params.attrs.operators[attr]);
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError("operator for attribute '" + params.vocab.attributes.at(attr) +
                              "' is singular: " + e.what());
  }
}

double inv_impl(const EmbeddedImage& img, std::size_t a, std::size_t a_prime, std::size_t obj,
                const ModelParams& params, double margin, GradAccumulator* grads, const Mat* inverse_of_a,
                bool detach_inverse, double w) {
  validate_pair(params, {a, obj});
  validate_pair(params, {a_prime, obj});
  if (a == a_prime) throw ValidationError("inverse-consistency swap needs two distinct attributes");

  std::optional<Mat> local_inverse;
  if (inverse_of_a == nullptr) {
    local_inverse = invert_operator(params, a);
    inverse_of_a = &*local_inverse;
  }
  const Mat& m_a = params.attrs.operators[a];
  const Mat& m_swap = params.attrs.operators[a_prime];
  const Vec& o = params.objects.vectors[obj];

  const Vec stripped = matvec(*inverse_of_a, img.emb);  // M_a⁻¹·f(x)
  const Vec pseudo = matvec(m_swap, stripped);          // f(x')
  const Vec pos_vec = matvec(m_swap, o);
  const Vec neg_vec = matvec(m_a, o);

  const double hinge = euclidean_distance(pseudo, pos_vec) - euclidean_distance(pseudo, neg_vec) + margin;
  if (!(hinge > 0.0)) return 0.0;
  if (grads == nullptr || w == 0.0) return hinge;

  const Vec g_pos = distance_gradient(pseudo, pos_vec);
  const Vec g_neg = distance_gradient(pseudo, neg_vec);
  backprop_matvec(grads->attrs.operators[a_prime], grads->objects.vectors[obj], m_swap, o, g_pos, -w);
  backprop_matvec(grads->attrs.operators[a], grads->objects.vectors[obj], m_a, o, g_neg, w);
  if (detach_inverse) return hinge;

  const Vec g_pseudo = subtract(g_pos, g_neg);
  add_outer(grads->attrs.operators[a_prime], g_pseudo, stripped, w);
  const Vec g_stripped = matvec_transposed(m_swap, g_pseudo);
  // d(M⁻¹) = −M⁻¹·dM·M⁻¹, so ∂/∂M_a = −z·yᵀ and ∂/∂f(x) = z with z = M_a⁻ᵀ·g_y.
  const Vec z = matvec_transposed(*inverse_of_a, g_stripped);
  add_outer(grads->attrs.operators[a], z, stripped, -w);
  backprop_embedding(*grads, img, z, w);
  return hinge;
}

double comm_impl(std::size_t a, std::size_t b, std::size_t obj, const ModelParams& params, GradAccumulator* grads,
                 double w) {
  validate_pair(params, {a, obj});
  validate_pair(params, {b, obj});
  const Mat& m_a = params.attrs.operators[a];
  const Mat& m_b = params.attrs.operators[b];
  const Vec& o = params.objects.vectors[obj];
  const Vec b_o = matvec(m_b, o);
  const Vec a_o = matvec(m_a, o);
  const Vec residual = subtract(matvec(m_a, b_o), matvec(m_b, a_o));
  const double value = norm(residual);
  if (grads == nullptr || w == 0.0) return value;

  const Vec g = unit_direction(residual);
  Vec& d_o = grads->objects.vectors[obj];
  // +M_a·(M_b·o)
  add_outer(grads->attrs.operators[a], g, b_o, w);
  backprop_matvec(grads->attrs.operators[b], d_o, m_b, o, matvec_transposed(m_a, g), w);
  // −M_b·(M_a·o)
  add_outer(grads->attrs.operators[b], g, a_o, -w);
  backprop_matvec(grads->attrs.operators[a], d_o, m_a, o, matvec_transposed(m_b, g), -w);
  return value;
}

double ant_impl(std::size_t a, std::size_t a_prime, std::size_t obj, const ModelParams& params,
                GradAccumulator* grads, double w) {
  validate_pair(params, {a, obj});
  validate_pair(params, {a_prime, obj});
  const Mat& m_a = params.attrs.operators[a];
  const Mat& m_undo = params.attrs.operators[a_prime];
  const Vec& o = params.objects.vectors[obj];
  const Vec a_o = matvec(m_a, o);
  const Vec residual = subtract(matvec(m_undo, a_o), o);
  const double value = norm(residual);
  if (grads == nullptr || w == 0.0) return value;

  const Vec g = unit_direction(residual);
  Vec& d_o = grads->objects.vectors[obj];
  add_outer(grads->attrs.operators[a_prime], g, a_o, w);
  backprop_matvec(grads->attrs.operators[a], d_o, m_a, o, matvec_transposed(m_undo, g), w);
  axpy(d_o, -w, g);
  return value;
}

}  // namespace

double triplet_term(const EmbeddedImage& img, PairId pos, PairId neg, const ModelParams& params, double margin,
                    GradAccumulator* grads) {
  return triplet_impl(img, pos, neg, params, margin, grads, 1.0);
}

double aux_term(PairId pair, const ModelParams& params, GradAccumulator* grads) {
  return aux_impl(pair, params, grads, 1.0);
}

double inv_term(const EmbeddedImage& img, std::size_t a, std::size_t a_prime, std::size_t obj,
                const ModelParams& params, double margin, GradAccumulator* grads, const Mat* inverse_of_a,
                bool detach_inverse) {
  return inv_impl(img, a, a_prime, obj, params, margin, grads, inverse_of_a, detach_inverse, 1.0);
}

double comm_term(std::size_t a, std::size_t b, std::size_t obj, const ModelParams& params, GradAccumulator* grads) {
  return comm_impl(a, b, obj, params, grads, 1.0);
}

double ant_term(std::size_t a, std::size_t a_prime, std::size_t obj, const ModelParams& params,
                GradAccumulator* grads) {
  return ant_impl(a, a_prime, obj, params, grads, 1.0);
}

BatchLoss batch_loss(const ModelParams& params, std::span<const LabeledFeature> batch,
                     std::span<const PairId> negatives, const LossWeights& weights, const AntonymList& antonyms,
                     std::mt19937_64& rng, const LossOptions& options) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  if (negatives.size() != batch.size()) {
    throw ShapeError("batch_loss: " + std::to_string(negatives.size()) + " negatives for a batch of " +
                     std::to_string(batch.size()));
  }
  weights.validate();
  antonyms.validate(params.vocab.num_attrs());

  const std::size_t num_attrs = params.vocab.num_attrs();
  const double per_example = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  out.grads = GradAccumulator::zeros_like(params);
  GradAccumulator* g = &out.grads;
  std::vector<std::optional<Mat>> inverses(num_attrs);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairId pair = batch[i].pair;
    const EmbeddedImage img = embed(params, batch[i].feat);
    TermBreakdown t;

    t.triplet = triplet_impl(img, pair, negatives[i], params, weights.margin, g, weights.triplet * per_example);
    t.aux = aux_impl(pair, params, weights.aux > 0.0 ? g : nullptr, weights.aux * per_example);

    if (weights.inv > 0.0 && num_attrs >= 2) {
      const std::size_t swap = uniform_index_excluding(rng, num_attrs, pair.attr);
      if (!inverses[pair.attr]) inverses[pair.attr] = invert_operator(params, pair.attr);
      t.inv = inv_impl(img, pair.attr, swap, pair.obj, params, weights.margin, g, &*inverses[pair.attr],
                       options.detach_inverse, weights.inv * per_example);
    }
    if (weights.comm > 0.0 && num_attrs >= 2) {
      const std::size_t other = uniform_index_excluding(rng, num_attrs, pair.attr);
      t.comm = comm_impl(pair.attr, other, pair.obj, params, g, weights.comm * per_example);
    }
    if (weights.ant > 0.0) {
      for (std::size_t partner : antonyms.partners_of(pair.attr)) {
        t.ant += ant_impl(pair.attr, partner, pair.obj, params, g, weights.ant * per_example);
      }
    }

    out.terms.triplet += t.triplet;
    out.terms.aux += t.aux;
    out.terms.inv += t.inv;
    out.terms.comm += t.comm;
    out.terms.ant += t.ant;
  }

  out.terms.triplet *= per_example;
  out.terms.aux *= per_example;
  out.terms.inv *= per_example;
  out.terms.comm *= per_example;
  out.terms.ant *= per_example;
  out.total = weights.triplet * out.terms.triplet + weights.aux * out.terms.aux + weights.inv * out.terms.inv +
              weights.comm * out.terms.comm + weights.ant * out.terms.ant;
  return out;
}

}  // namespace attrop
