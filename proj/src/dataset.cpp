#include "attrop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "attrop/errors.hpp"
#include "attrop/text_io.hpp"

namespace attrop {

namespace fs = std::filesystem;

namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  return out;
}

void write_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) out << ' ' << text::format_double(v);
}

std::string padded_name(const std::string& stem, std::size_t i, std::size_t count) {
  std::string digits = std::to_string(i);
  const std::size_t width = std::max<std::size_t>(2, std::to_string(count - 1).size());
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return stem + digits;
}

struct PairsFile {
  Vocab vocab;
  std::vector<PairId> seen;
  std::vector<PairId> unseen;
  std::map<std::string, std::size_t> attr_line;
  std::map<std::string, std::size_t> obj_line;
};

PairsFile read_pairs(const fs::path& path) {
  auto in = open_input(path);
  text::LineReader reader(in, path.string());
  struct Row {
    std::string attr, obj;
    bool seen;
    std::size_t line;
  };
  std::vector<Row> rows;
  while (auto tokens = reader.next()) {
    reader.expect_tokens(*tokens, 3, "pair line");
    const auto status = (*tokens)[2];
    if (status != "seen" && status != "unseen") {
      reader.fail("pair status must be 'seen' or 'unseen', got '" + std::string(status) + "'");
    }
    rows.push_back({std::string((*tokens)[0]), std::string((*tokens)[1]), status == "seen", reader.line_number()});
  }
  if (rows.empty()) throw ValidationError(path.string() + ": no pairs declared");

  PairsFile out;
  std::set<std::string> attrs, objs;
  for (const auto& r : rows) {
    attrs.insert(r.attr);
    objs.insert(r.obj);
    out.attr_line.emplace(r.attr, r.line);
    out.obj_line.emplace(r.obj, r.line);
  }
  out.vocab.attributes.assign(attrs.begin(), attrs.end());
  out.vocab.objects.assign(objs.begin(), objs.end());

  std::set<PairId> declared;
  for (const auto& r : rows) {
    const PairId p{out.vocab.attr_index(r.attr), out.vocab.obj_index(r.obj)};
    if (!declared.insert(p).second) {
      throw ValidationError(path.string() + ":" + std::to_string(r.line) + ": pair '" + r.attr + " " + r.obj +
                            "' declared twice");
    }
    (r.seen ? out.seen : out.unseen).push_back(p);
  }
  return out;
}

std::vector<Instance> read_features(const fs::path& path, const PairsFile& pairs, bool train_split,
                                    std::size_t& feat_dim) {
  auto in = open_input(path);
  text::LineReader reader(in, path.string());
  auto header = reader.next();
  if (!header) throw ValidationError(path.string() + ": empty features file");
  reader.expect_tokens(*header, 2, "features header 'N F'");
  const std::size_t count = reader.to_count((*header)[0]);
  const std::size_t dim = reader.to_count((*header)[1]);
  if (dim == 0) reader.fail("feature dimension must be at least 1");
  if (feat_dim != 0 && dim != feat_dim) {
    reader.fail("feature dimension " + std::to_string(dim) + " disagrees with " + std::to_string(feat_dim));
  }
  feat_dim = dim;

  const std::set<PairId> seen(pairs.seen.begin(), pairs.seen.end());
  const std::set<PairId> unseen(pairs.unseen.begin(), pairs.unseen.end());
  std::vector<Instance> out;
  while (auto tokens = reader.next()) {
    if (out.size() == count) reader.fail("more instances than the header's N=" + std::to_string(count));
    reader.expect_tokens(*tokens, 3 + dim, "instance line");
    Instance inst;
    inst.image_id = std::string((*tokens)[0]);
    const std::string attr((*tokens)[1]);
    const std::string obj((*tokens)[2]);
    auto a = pairs.vocab.find_attr(attr);
    auto o = pairs.vocab.find_obj(obj);
    if (!a) reader.fail("unknown attribute '" + attr + "'");
    if (!o) reader.fail("unknown object '" + obj + "'");
    inst.pair = {*a, *o};
    const bool in_seen = seen.count(inst.pair) > 0;
    const bool in_unseen = unseen.count(inst.pair) > 0;
    if (!in_seen && !in_unseen) reader.fail("pair '" + attr + " " + obj + "' is not declared in the pairs file");
    if (train_split && in_unseen) {
      reader.fail("training instance '" + inst.image_id + "' is labeled with unseen pair '" + attr + " " + obj + "'");
    }
    if (!train_split && in_seen) {
      reader.fail("test instance '" + inst.image_id + "' is labeled with seen pair '" + attr + " " + obj + "'");
    }
    inst.feat = Vec(dim);
    for (std::size_t i = 0; i < dim; ++i) inst.feat[i] = reader.to_double((*tokens)[3 + i]);
    out.push_back(std::move(inst));
  }
  if (out.size() != count) {
    throw ValidationError(path.string() + ": header declares " + std::to_string(count) + " instances, found " +
                          std::to_string(out.size()));
  }
  return out;
}

void write_features(const fs::path& path, const std::vector<Instance>& instances, const Vocab& vocab,
                    std::size_t feat_dim) {
  auto out = open_output(path);
  out << instances.size() << ' ' << feat_dim << '\n';
  for (const auto& inst : instances) {
    out << inst.image_id << ' ' << vocab.attributes[inst.pair.attr] << ' ' << vocab.objects[inst.pair.obj];
    write_values(out, inst.feat.span());
    out << '\n';
  }
}

std::vector<LabeledFeature> to_examples(const std::vector<Instance>& instances) {
  std::vector<LabeledFeature> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back({inst.feat, inst.pair});
  return out;
}

}  // namespace

void DatasetBundle::validate() const {
  vocab.validate();
  if (feat_dim == 0) throw ValidationError("dataset feature dimension is 0");
  std::set<PairId> seen;
  for (PairId p : seen_pairs) {
    if (p.attr >= vocab.num_attrs() || p.obj >= vocab.num_objs()) throw ValidationError("seen pair out of range");
    if (!seen.insert(p).second) throw ValidationError("duplicate seen pair '" + pair_name(vocab, p) + "'");
  }
  std::set<PairId> unseen;
  for (PairId p : unseen_pairs) {
    if (p.attr >= vocab.num_attrs() || p.obj >= vocab.num_objs()) throw ValidationError("unseen pair out of range");
    if (seen.count(p)) throw ValidationError("pair '" + pair_name(vocab, p) + "' is both seen and unseen");
    if (!unseen.insert(p).second) throw ValidationError("duplicate unseen pair '" + pair_name(vocab, p) + "'");
  }
  if (seen.size() < 2) throw ValidationError("at least two seen pairs are required to sample triplet negatives");

  std::vector<bool> attr_seen(vocab.num_attrs()), obj_seen(vocab.num_objs());
  for (PairId p : seen) {
    attr_seen[p.attr] = true;
    obj_seen[p.obj] = true;
  }
  for (std::size_t a = 0; a < attr_seen.size(); ++a)
    if (!attr_seen[a]) throw ValidationError("attribute '" + vocab.attributes[a] + "' appears in no seen pair");
  for (std::size_t o = 0; o < obj_seen.size(); ++o)
    if (!obj_seen[o]) throw ValidationError("object '" + vocab.objects[o] + "' appears in no seen pair");

  for (const auto& inst : train) {
    if (inst.feat.size() != feat_dim) throw ValidationError("training instance '" + inst.image_id + "' has wrong length");
    if (!seen.count(inst.pair)) {
      throw ValidationError("training instance '" + inst.image_id + "' is not labeled with a seen pair");
    }
  }
  for (const auto& inst : test) {
    if (inst.feat.size() != feat_dim) throw ValidationError("test instance '" + inst.image_id + "' has wrong length");
    if (!unseen.count(inst.pair)) {
      throw ValidationError("test instance '" + inst.image_id + "' is not labeled with an unseen pair");
    }
  }
  if (antonyms) antonyms->validate(vocab.num_attrs());
  if (object_vectors) {
    for (const auto& name : object_vectors->names) {
      if (!vocab.find_obj(name)) throw ValidationError("object vector for unknown object '" + name + "'");
    }
  }
}

std::vector<LabeledFeature> DatasetBundle::train_examples() const { return to_examples(train); }
std::vector<LabeledFeature> DatasetBundle::test_examples() const { return to_examples(test); }

DatasetPaths DatasetPaths::in_directory(const fs::path& dir) {
  DatasetPaths p;
  p.pairs = dir / "pairs.txt";
  p.train_features = dir / "train_features.txt";
  p.test_features = dir / "test_features.txt";
  if (fs::exists(dir / "antonyms.txt")) p.antonyms = dir / "antonyms.txt";
  if (fs::exists(dir / "object_vectors.txt")) p.object_vectors = dir / "object_vectors.txt";
  return p;
}

DatasetBundle load_dataset(const DatasetPaths& paths) {
  const PairsFile pairs = read_pairs(paths.pairs);
  pairs.vocab.validate();

  std::vector<bool> attr_seen(pairs.vocab.num_attrs()), obj_seen(pairs.vocab.num_objs());
  for (PairId p : pairs.seen) {
    attr_seen[p.attr] = true;
    obj_seen[p.obj] = true;
  }
  for (std::size_t a = 0; a < attr_seen.size(); ++a) {
    if (!attr_seen[a]) {
      const auto& name = pairs.vocab.attributes[a];
      throw ValidationError(paths.pairs.string() + ":" + std::to_string(pairs.attr_line.at(name)) + ": attribute '" +
                            name + "' appears only in unseen pairs");
    }
  }
  for (std::size_t o = 0; o < obj_seen.size(); ++o) {
    if (!obj_seen[o]) {
      const auto& name = pairs.vocab.objects[o];
      throw ValidationError(paths.pairs.string() + ":" + std::to_string(pairs.obj_line.at(name)) + ": object '" +
                            name + "' appears only in unseen pairs");
    }
  }

  DatasetBundle b;
  b.vocab = pairs.vocab;
  b.seen_pairs = pairs.seen;
  b.unseen_pairs = pairs.unseen;
  b.train = read_features(paths.train_features, pairs, true, b.feat_dim);
  b.test = read_features(paths.test_features, pairs, false, b.feat_dim);
  if (paths.antonyms) b.antonyms = read_antonyms(*paths.antonyms, b.vocab);
  if (paths.object_vectors) b.object_vectors = read_named_vectors(*paths.object_vectors);
  b.validate();
  return b;
}

void save_dataset(const DatasetBundle& bundle, const fs::path& dir) {
  bundle.validate();
  if (!std::is_sorted(bundle.vocab.attributes.begin(), bundle.vocab.attributes.end()) ||
      !std::is_sorted(bundle.vocab.objects.begin(), bundle.vocab.objects.end())) {
    throw ValidationError("save_dataset: vocabulary must be in sorted order to survive a reload");
  }
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "pairs.txt");
    for (PairId p : bundle.seen_pairs) out << pair_name(bundle.vocab, p) << " seen\n";
    for (PairId p : bundle.unseen_pairs) out << pair_name(bundle.vocab, p) << " unseen\n";
  }
  write_features(dir / "train_features.txt", bundle.train, bundle.vocab, bundle.feat_dim);
  write_features(dir / "test_features.txt", bundle.test, bundle.vocab, bundle.feat_dim);
  if (bundle.antonyms) {
    auto out = open_output(dir / "antonyms.txt");
    for (const auto& [a, b] : bundle.antonyms->pairs)
      out << bundle.vocab.attributes[a] << ' ' << bundle.vocab.attributes[b] << '\n';
  } else {
    fs::remove(dir / "antonyms.txt");
  }
  if (bundle.object_vectors) {
    write_named_vectors(*bundle.object_vectors, dir / "object_vectors.txt");
  } else {
    fs::remove(dir / "object_vectors.txt");
  }
}

NamedVectors read_named_vectors(const fs::path& path) {
  auto in = open_input(path);
  text::LineReader reader(in, path.string());
  NamedVectors out;
  std::set<std::string> names;
  while (auto tokens = reader.next()) {
    if (tokens->size() < 2) reader.fail("expected 'name v1 ... vD'");
    const std::size_t dim = tokens->size() - 1;
    if (!out.vectors.empty() && dim != out.dim()) {
      reader.fail("vector has " + std::to_string(dim) + " values, earlier lines have " + std::to_string(out.dim()));
    }
    std::string name((*tokens)[0]);
    if (!names.insert(name).second) reader.fail("duplicate name '" + name + "'");
    Vec v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = reader.to_double((*tokens)[1 + i]);
    out.names.push_back(std::move(name));
    out.vectors.push_back(std::move(v));
  }
  if (out.vectors.empty()) throw ValidationError(path.string() + ": no vectors");
  return out;
}

void write_named_vectors(const NamedVectors& vectors, const fs::path& path) {
  auto out = open_output(path);
  for (std::size_t i = 0; i < vectors.names.size(); ++i) {
    out << vectors.names[i];
    write_values(out, vectors.vectors[i].span());
    out << '\n';
  }
}

AntonymList read_antonyms(const fs::path& path, const Vocab& vocab) {
  auto in = open_input(path);
  text::LineReader reader(in, path.string());
  AntonymList out;
  while (auto tokens = reader.next()) {
    reader.expect_tokens(*tokens, 2, "antonym line");
    const std::string a((*tokens)[0]);
    const std::string b((*tokens)[1]);
    auto ia = vocab.find_attr(a);
    auto ib = vocab.find_attr(b);
    if (!ia) reader.fail("unknown attribute '" + a + "'");
    if (!ib) reader.fail("unknown attribute '" + b + "'");
    if (*ia == *ib) reader.fail("attribute '" + a + "' cannot be its own antonym");
    out.pairs.emplace_back(*ia, *ib);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (num_attrs < 1 || num_objs < 1 || dim < 1) throw ValidationError("synthetic spec needs attrs, objs, dim >= 1");
  if (images_per_pair < 1) throw ValidationError("synthetic spec needs at least one image per pair");
  if (!(unseen_fraction > 0.0 && unseen_fraction < 1.0)) throw ValidationError("unseen fraction must lie in (0, 1)");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise sigma must be >= 0");
  if (!(operator_perturbation >= 0.0) || !std::isfinite(operator_perturbation)) {
    throw ValidationError("operator perturbation must be >= 0");
  }
}

double condition_bound(const Mat& m) {
  auto frobenius = [](const Mat& x) {
    double acc = 0.0;
    for (double v : x.span()) acc += v * v;
    return std::sqrt(acc);
  };
  return frobenius(m) * frobenius(lu_invert(m));
}

Vec planted_feature(const GroundTruth& truth, std::size_t attr, const Vec& obj_vec) {
  Vec x = matvec(truth.operators.operators.at(attr), obj_vec);
  if (truth.distortion.rows() == 0) return x;
  const Vec mixed = matvec(truth.distortion, x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.5 * std::tanh(mixed[i]);
  return x;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim;
  const std::size_t total_pairs = spec.num_attrs * spec.num_objs;
  const auto num_unseen =
      static_cast<std::size_t>(std::llround(spec.unseen_fraction * static_cast<double>(total_pairs)));
  if (num_unseen == 0 || num_unseen + 2 > total_pairs) {
    throw ValidationError("unseen fraction leaves " + std::to_string(num_unseen) + " unseen of " +
                          std::to_string(total_pairs) + " pairs; need at least one unseen and two seen");
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double entry_scale = 1.0 / std::sqrt(static_cast<double>(d));

  auto unit_prototype = [&] {
    Vec v(d);
    double n = 0.0;
    while (n < 1e-8) {
      for (double& x : v) x = normal(rng);
      n = norm(v);
    }
    return scaled(v, 1.0 / n);
  };

  SyntheticDataset out;
  GroundTruth& truth = out.truth;
  for (std::size_t o = 0; o < spec.num_objs; ++o) truth.objects.vectors.push_back(unit_prototype());

  for (std::size_t a = 0; a < spec.num_attrs; ++a) {
    Mat m = Mat::identity(d);
    if (spec.operator_perturbation > 0.0) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxPartitionAttempts) {
          throw ValidationError("could not draw a well-conditioned planted operator; lower the perturbation");
        }
        m = Mat::identity(d);
        for (double& x : m.span()) x += spec.operator_perturbation * entry_scale * normal(rng);
        try {
          if (condition_bound(m) <= kMaxPlantedCondition) break;
        } catch (const SingularMatrixError&) {
        }
      }
    }
    truth.operators.operators.push_back(std::move(m));
  }

  if (spec.misspecified) {
    truth.distortion = Mat(d, d);
    for (double& x : truth.distortion.span()) x = 2.0 * entry_scale * normal(rng);
  }

  DatasetBundle& b = out.bundle;
  for (std::size_t a = 0; a < spec.num_attrs; ++a) b.vocab.attributes.push_back(padded_name("attr", a, spec.num_attrs));
  for (std::size_t o = 0; o < spec.num_objs; ++o) b.vocab.objects.push_back(padded_name("obj", o, spec.num_objs));
  b.feat_dim = d;

  std::vector<PairId> grid = all_pairs(b.vocab);
  bool partitioned = false;
  for (int attempt = 0; attempt < kMaxPartitionAttempts && !partitioned; ++attempt) {
    std::shuffle(grid.begin(), grid.end(), rng);
    std::vector<bool> attr_seen(spec.num_attrs), obj_seen(spec.num_objs);
    for (std::size_t i = num_unseen; i < grid.size(); ++i) {
      attr_seen[grid[i].attr] = true;
      obj_seen[grid[i].obj] = true;
    }
    partitioned = std::all_of(attr_seen.begin(), attr_seen.end(), [](bool x) { return x; }) &&
                  std::all_of(obj_seen.begin(), obj_seen.end(), [](bool x) { return x; });
  }
  if (!partitioned) {
    throw ValidationError("no seen/unseen partition covering every attribute and object found in " +
                          std::to_string(kMaxPartitionAttempts) + " attempts");
  }
  b.unseen_pairs.assign(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(num_unseen));
  b.seen_pairs.assign(grid.begin() + static_cast<std::ptrdiff_t>(num_unseen), grid.end());
  std::sort(b.unseen_pairs.begin(), b.unseen_pairs.end());
  std::sort(b.seen_pairs.begin(), b.seen_pairs.end());

  auto emit = [&](const std::vector<PairId>& pairs, const char* prefix, std::vector<Instance>& dst) {
    std::size_t counter = 0;
    for (PairId p : pairs) {
      const Vec clean = planted_feature(truth, p.attr, truth.objects.vectors[p.obj]);
      for (std::size_t k = 0; k < spec.images_per_pair; ++k) {
        Instance inst;
        inst.image_id = prefix + std::to_string(counter++);
        inst.pair = p;
        inst.feat = clean;
        if (spec.noise_sigma > 0.0) {
          for (double& x : inst.feat) x += spec.noise_sigma * normal(rng);
        }
        dst.push_back(std::move(inst));
      }
    }
  };
  emit(b.seen_pairs, "train_", b.train);
  emit(b.unseen_pairs, "test_", b.test);

  // Drawn last so asking for novel objects leaves the bundle unchanged.
  for (std::size_t i = 0; i < spec.novel_objects; ++i) {
    truth.novel_objects.names.push_back(padded_name("novel", i, spec.novel_objects));
    truth.novel_objects.vectors.push_back(unit_prototype());
  }

  NamedVectors prototypes;
  prototypes.names = b.vocab.objects;
  prototypes.vectors = truth.objects.vectors;
  b.object_vectors = std::move(prototypes);

  b.validate();
  return out;
}

}  // namespace attrop
