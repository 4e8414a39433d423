#pragma once

// Dataset bundles: loading and validation of the on-disk text formats,
// writing them back, and the planted-operator synthetic generator.
//
// A dataset directory holds
//   pairs.txt            attr obj {seen|unseen}
//   train_features.txt   "N F" header, then: image_id attr obj f1 ... fF   (seen pairs only)
//   test_features.txt    same layout                                       (unseen pairs only)
//   antonyms.txt         attr attr                (optional)
//   object_vectors.txt   obj v1 ... vD            (optional)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attrop/losses.hpp"
#include "attrop/model.hpp"

namespace attrop {

struct Instance {
  std::string image_id;
  Vec feat;
  PairId pair;
  bool operator==(const Instance&) const = default;
};

struct DatasetBundle {
  Vocab vocab;
  std::size_t feat_dim = 0;
  std::vector<Instance> train;
  std::vector<Instance> test;
  std::vector<PairId> seen_pairs;
  std::vector<PairId> unseen_pairs;
  std::optional<AntonymList> antonyms;
  std::optional<NamedVectors> object_vectors;

  // Disjoint splits, train labels in the seen split, test labels in the
  // unseen split, every attribute and object covered by some seen pair, at
  // least two seen pairs.
  void validate() const;

  std::vector<LabeledFeature> train_examples() const;
  std::vector<LabeledFeature> test_examples() const;
};

struct DatasetPaths {
  std::filesystem::path pairs;
  std::filesystem::path train_features;
  std::filesystem::path test_features;
  std::optional<std::filesystem::path> antonyms;
  std::optional<std::filesystem::path> object_vectors;

  // Standard file names inside `dir`; optional files only when present.
  static DatasetPaths in_directory(const std::filesystem::path& dir);
};

DatasetBundle load_dataset(const DatasetPaths& paths);
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);

NamedVectors read_named_vectors(const std::filesystem::path& path);
void write_named_vectors(const NamedVectors& vectors, const std::filesystem::path& path);
AntonymList read_antonyms(const std::filesystem::path& path, const Vocab& vocab);

struct SyntheticSpec {
  std::size_t num_attrs = 10;
  std::size_t num_objs = 15;
  std::size_t dim = 12;  // features live in the same space: F = D
  std::size_t images_per_pair = 50;
  double unseen_fraction = 0.2;
  double noise_sigma = 0.0;
  double operator_perturbation = 0.2;
  std::uint64_t seed = 0;
  bool misspecified = false;
  // Extra prototypes outside the vocabulary, for out-of-domain queries.
  std::size_t novel_objects = 0;

  void validate() const;
};

struct GroundTruth {
  ObjectTable objects;
  AttributeBank operators;
  NamedVectors novel_objects;
  // Fixed nonlinearity mixing matrix when misspecified, else empty.
  Mat distortion;
};

struct SyntheticDataset {
  DatasetBundle bundle;
  GroundTruth truth;
};

inline constexpr double kMaxPlantedCondition = 1e3;
inline constexpr int kMaxPartitionAttempts = 1000;

// Features are M*_a·o* (optionally distorted) plus N(0, σ²) noise.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Noiseless feature of attribute `attr` applied to prototype `obj_vec`
// under the generator's ground truth.
Vec planted_feature(const GroundTruth& truth, std::size_t attr, const Vec& obj_vec);

// Upper bound ‖M‖_F·‖M⁻¹‖_F on the 2-norm condition number.
double condition_bound(const Mat& m);

}  // namespace attrop
