#pragma once

// Nearest-composition inference, the closed / open / +obj evaluation
// protocols, and composition-to-image retrieval.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrop/losses.hpp"
#include "attrop/model.hpp"

namespace attrop {

// Closed world: unseen pairs only. Open world: seen followed by unseen.
enum class World { Closed, Open };

struct CandidateSet {
  std::vector<PairId> pairs;
  std::vector<Vec> embeddings;
  World world = World::Open;
};

CandidateSet build_candidates(const ModelParams& params, std::span<const PairId> seen,
                              std::span<const PairId> unseen, World world);

// Index of the candidate nearest to `image_emb`, optionally among those whose
// object is `restrict_obj`. Ties go to the lowest index.
std::size_t nearest_candidate(const Vec& image_emb, const CandidateSet& cands,
                              std::optional<std::size_t> restrict_obj = std::nullopt);

PairId predict_pair(const ModelParams& params, const Vec& feat, const CandidateSet& cands,
                    std::optional<std::size_t> restrict_obj = std::nullopt);

struct PairAccuracy {
  PairId pair;
  std::size_t count = 0;
  std::size_t closed_correct = 0;
  std::size_t open_correct = 0;
  std::size_t obj_oracle_correct = 0;
};

struct EvalReport {
  double closed_top1 = 0.0;
  double open_top1 = 0.0;
  double obj_oracle_top1 = 0.0;
  double h_mean = 0.0;
  std::size_t num_instances = 0;
  std::vector<PairAccuracy> per_pair;  // in unseen-pair order
};

// 2·open·closed / (open + closed), and 0 when both are 0.
double harmonic_mean(double open, double closed);

struct Predictions {
  std::vector<PairId> closed;
  std::vector<PairId> open;
  std::vector<PairId> obj_oracle;
};

// Accuracies of already-made predictions against `labels`.
EvalReport score_predictions(std::span<const PairId> labels, const Predictions& predictions,
                             std::span<const PairId> unseen);

// Runs all three protocols over `test` (labels must all be unseen pairs).
// The +obj oracle restricts the open candidate set to the true object.
// Throws InvariantViolation if an instance is right in the open world but
// wrong in the closed world or under the object oracle.
EvalReport evaluate(const ModelParams& params, std::span<const LabeledFeature> test, std::span<const PairId> seen,
                    std::span<const PairId> unseen);

// closed ≥ open and obj_oracle ≥ open.
void check_subset_dominance(const EvalReport& report);

// Percentages with one decimal.
std::string format_percent(double fraction);

struct ReportSections {
  bool closed = true;
  bool open = true;
  bool obj_oracle = true;
};

std::string format_report_table(const EvalReport& report, const Vocab& vocab, ReportSections sections = {});
void write_report_csv(const EvalReport& report, const Vocab& vocab, const std::filesystem::path& path);

// Ranks pool entries by distance between their image embedding and the
// composed query M_attr·obj_vec; ties keep pool order. Returns k ids.
std::vector<std::string> retrieve_topk(const ModelParams& params, std::size_t attr, const Vec& obj_vec,
                                       const NamedVectors& pool, std::size_t k);

// One line per attribute-object pair: "attr obj v1 ... vD".
void dump_embeddings(const ModelParams& params, const std::filesystem::path& path);

}  // namespace attrop
