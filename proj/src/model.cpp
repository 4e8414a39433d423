#include "attrop/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "attrop/errors.hpp"

namespace attrop {

namespace {

std::optional<std::size_t> find_name(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

void require_unique(const std::vector<std::string>& names, const char* what) {
  if (names.empty()) throw ValidationError(std::string("vocabulary has no ") + what);
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw ValidationError(std::string("empty ") + what + " name");
    if (!seen.insert(n).second) throw ValidationError(std::string("duplicate ") + what + " name '" + n + "'");
  }
}

void fill_normal(std::span<double> out, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& x : out) x = normal(rng);
}

}  // namespace

std::optional<std::size_t> Vocab::find_attr(const std::string& name) const { return find_name(attributes, name); }
std::optional<std::size_t> Vocab::find_obj(const std::string& name) const { return find_name(objects, name); }

std::size_t Vocab::attr_index(const std::string& name) const {
  if (auto i = find_attr(name)) return *i;
  throw ValidationError("unknown attribute '" + name + "'");
}

std::size_t Vocab::obj_index(const std::string& name) const {
  if (auto i = find_obj(name)) return *i;
  throw ValidationError("unknown object '" + name + "'");
}

void Vocab::validate() const {
  require_unique(attributes, "attribute");
  require_unique(objects, "object");
}

std::string pair_name(const Vocab& vocab, PairId p) {
  return vocab.attributes.at(p.attr) + " " + vocab.objects.at(p.obj);
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  visit_tensors(params, [&](TensorGroup, const std::string&, std::span<const double> t) { n += t.size(); });
  return n;
}

ModelParams init_params(const Vocab& vocab, std::size_t dim, std::size_t feat_dim,
                        const NamedVectors* object_init, std::uint64_t seed) {
  vocab.validate();
  if (dim == 0 || feat_dim == 0) throw ValidationError("init_params: D and F must be at least 1");

  ModelParams p;
  p.vocab = vocab;
  p.dim = dim;
  p.feat_dim = feat_dim;
  std::mt19937_64 rng(seed);

  const double object_std = 1.0 / std::sqrt(static_cast<double>(dim));
  p.objects.vectors.assign(vocab.num_objs(), Vec(dim));
  for (auto& v : p.objects.vectors) fill_normal(v.span(), object_std, rng);

  if (object_init != nullptr) {
    for (std::size_t i = 0; i < object_init->names.size(); ++i) {
      const auto& name = object_init->names[i];
      const auto& vec = object_init->vectors[i];
      if (vec.size() != dim) {
        throw ValidationError("object vector '" + name + "' has dimension " + std::to_string(vec.size()) +
                              " but the model is configured with D=" + std::to_string(dim));
      }
      auto idx = vocab.find_obj(name);
      if (!idx) throw ValidationError("object vector file names unknown object '" + name + "'");
      p.objects.vectors[*idx] = vec;
    }
  }

  p.attrs.operators.assign(vocab.num_attrs(), Mat::identity(dim));

  p.embedder.weight = Mat(dim, feat_dim);
  p.embedder.bias = Vec(dim);
  const double feat_std = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  fill_normal(p.embedder.weight.span(), feat_std, rng);
  fill_normal(p.embedder.bias.span(), feat_std, rng);

  p.aux.attr_weight = Mat(vocab.num_attrs(), dim);
  p.aux.attr_bias = Vec(vocab.num_attrs());
  p.aux.obj_weight = Mat(vocab.num_objs(), dim);
  p.aux.obj_bias = Vec(vocab.num_objs());
  const double head_std = 1.0 / std::sqrt(static_cast<double>(dim));
  fill_normal(p.aux.attr_weight.span(), head_std, rng);
  fill_normal(p.aux.attr_bias.span(), head_std, rng);
  fill_normal(p.aux.obj_weight.span(), head_std, rng);
  fill_normal(p.aux.obj_bias.span(), head_std, rng);
  return p;
}

void validate_shapes(const ModelParams& p) {
  const std::size_t d = p.dim;
  const std::size_t na = p.vocab.num_attrs();
  const std::size_t no = p.vocab.num_objs();
  auto fail = [](const std::string& what) { throw ShapeError("model shapes inconsistent: " + what); };
  if (p.objects.vectors.size() != no) fail("object count");
  for (const auto& v : p.objects.vectors)
    if (v.size() != d) fail("object vector length");
  if (p.attrs.operators.size() != na) fail("operator count");
  for (const auto& m : p.attrs.operators)
    if (m.rows() != d || m.cols() != d) fail("operator shape " + shape_string(m));
  if (p.embedder.weight.rows() != d || p.embedder.weight.cols() != p.feat_dim)
    fail("embedder weight " + shape_string(p.embedder.weight));
  if (p.embedder.bias.size() != d) fail("embedder bias");
  if (p.aux.attr_weight.rows() != na || p.aux.attr_weight.cols() != d) fail("attribute head");
  if (p.aux.attr_bias.size() != na) fail("attribute head bias");
  if (p.aux.obj_weight.rows() != no || p.aux.obj_weight.cols() != d) fail("object head");
  if (p.aux.obj_bias.size() != no) fail("object head bias");
}

void validate_pair(const ModelParams& params, PairId p) {
  if (p.attr >= params.vocab.num_attrs() || p.obj >= params.vocab.num_objs()) {
    throw ShapeError("pair (" + std::to_string(p.attr) + ", " + std::to_string(p.obj) +
                     ") out of range for vocabulary of " + std::to_string(params.vocab.num_attrs()) +
                     " attributes and " + std::to_string(params.vocab.num_objs()) + " objects");
  }
}

Vec embed_image(const ModelParams& params, const Vec& feat) {
  if (feat.size() != params.feat_dim) {
    throw ShapeError("embed_image: feature length " + std::to_string(feat.size()) + ", expected " +
                     std::to_string(params.feat_dim));
  }
  Vec out = matvec(params.embedder.weight, feat);
  axpy(out, 1.0, params.embedder.bias);
  return out;
}

Vec compose(const ModelParams& params, PairId p) {
  validate_pair(params, p);
  return matvec(params.attrs.operators[p.attr], params.objects.vectors[p.obj]);
}

Vec compose_with_vector(const ModelParams& params, std::size_t attr, const Vec& obj_vec) {
  if (attr >= params.vocab.num_attrs()) throw ShapeError("compose_with_vector: attribute index out of range");
  if (obj_vec.size() != params.dim) {
    throw ShapeError("compose_with_vector: object vector length " + std::to_string(obj_vec.size()) +
                     ", expected " + std::to_string(params.dim));
  }
  return matvec(params.attrs.operators[attr], obj_vec);
}

std::vector<Vec> compose_all(const ModelParams& params, std::span<const PairId> pairs) {
  std::vector<Vec> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(compose(params, p));
  return out;
}

std::vector<PairId> all_pairs(const Vocab& vocab) {
  std::vector<PairId> out;
  out.reserve(vocab.num_attrs() * vocab.num_objs());
  for (std::size_t a = 0; a < vocab.num_attrs(); ++a)
    for (std::size_t o = 0; o < vocab.num_objs(); ++o) out.push_back({a, o});
  return out;
}

}  // namespace attrop
