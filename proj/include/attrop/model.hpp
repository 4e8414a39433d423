#pragma once

// Learnable parameters of the attribute-operator model and the two embedding
// functions: images through an affine map, attribute-object pairs through
// the attribute's operator applied to the object's prototype vector.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrop/linalg.hpp"

namespace attrop {

struct Vocab {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;

  std::size_t num_attrs() const { return attributes.size(); }
  std::size_t num_objs() const { return objects.size(); }

  std::optional<std::size_t> find_attr(const std::string& name) const;
  std::optional<std::size_t> find_obj(const std::string& name) const;
  // Throw ValidationError naming the unknown label.
  std::size_t attr_index(const std::string& name) const;
  std::size_t obj_index(const std::string& name) const;

  // Non-empty lists with unique names.
  void validate() const;

  bool operator==(const Vocab&) const = default;
};

struct PairId {
  std::size_t attr = 0;
  std::size_t obj = 0;
  auto operator<=>(const PairId&) const = default;
};

std::string pair_name(const Vocab& vocab, PairId p);

struct ObjectTable {
  std::vector<Vec> vectors;
  bool operator==(const ObjectTable&) const = default;
};

struct AttributeBank {
  std::vector<Mat> operators;
  bool operator==(const AttributeBank&) const = default;
};

struct ImageEmbedder {
  Mat weight;  // D×F
  Vec bias;    // D
  bool operator==(const ImageEmbedder&) const = default;
};

struct AuxHeads {
  Mat attr_weight;  // |A|×D
  Vec attr_bias;
  Mat obj_weight;  // |O|×D
  Vec obj_bias;
  bool operator==(const AuxHeads&) const = default;
};

struct ModelParams {
  Vocab vocab;
  std::size_t dim = 0;
  std::size_t feat_dim = 0;
  ObjectTable objects;
  AttributeBank attrs;
  ImageEmbedder embedder;
  AuxHeads aux;

  bool operator==(const ModelParams&) const = default;
};

// Named vectors as read from a word-vector style file.
struct NamedVectors {
  std::vector<std::string> names;
  std::vector<Vec> vectors;
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

enum class TensorGroup { Objects, Operators, Embedder, AuxHeads };

// Calls f(group, name, span) for every parameter tensor in a fixed order.
// Works on ModelParams and on anything with the same four members
// (GradAccumulator, optimizer moment buffers).
template <class Params, class F>
void visit_tensors(Params& p, F&& f) {
  for (std::size_t i = 0; i < p.objects.vectors.size(); ++i)
    f(TensorGroup::Objects, "object[" + std::to_string(i) + "]", p.objects.vectors[i].span());
  for (std::size_t i = 0; i < p.attrs.operators.size(); ++i)
    f(TensorGroup::Operators, "operator[" + std::to_string(i) + "]", p.attrs.operators[i].span());
  f(TensorGroup::Embedder, "embedder.weight", p.embedder.weight.span());
  f(TensorGroup::Embedder, "embedder.bias", p.embedder.bias.span());
  f(TensorGroup::AuxHeads, "aux.attr_weight", p.aux.attr_weight.span());
  f(TensorGroup::AuxHeads, "aux.attr_bias", p.aux.attr_bias.span());
  f(TensorGroup::AuxHeads, "aux.obj_weight", p.aux.obj_weight.span());
  f(TensorGroup::AuxHeads, "aux.obj_bias", p.aux.obj_bias.span());
}

std::size_t parameter_count(const ModelParams& params);

// Operators start at the identity. Object vectors come from `object_init`
// where it names them and are drawn N(0, 1/√D) otherwise; the embedder and
// auxiliary heads are N(0, 1/√fan_in). Deterministic for a fixed seed.
ModelParams init_params(const Vocab& vocab, std::size_t dim, std::size_t feat_dim,
                        const NamedVectors* object_init, std::uint64_t seed);

// Throws ShapeError if any sub-shape disagrees with vocab/dim/feat_dim.
void validate_shapes(const ModelParams& params);

void validate_pair(const ModelParams& params, PairId p);

Vec embed_image(const ModelParams& params, const Vec& feat);
Vec compose(const ModelParams& params, PairId p);
Vec compose_with_vector(const ModelParams& params, std::size_t attr, const Vec& obj_vec);
std::vector<Vec> compose_all(const ModelParams& params, std::span<const PairId> pairs);

// Every (attr, obj) in the vocabulary cross-product, attribute-major.
std::vector<PairId> all_pairs(const Vocab& vocab);

}  // namespace attrop
