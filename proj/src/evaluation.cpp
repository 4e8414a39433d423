#include "attrop/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "attrop/errors.hpp"
#include "attrop/text_io.hpp"

namespace attrop {

CandidateSet build_candidates(const ModelParams& params, std::span<const PairId> seen,
                              std::span<const PairId> unseen, World world) {
  const std::set<PairId> seen_set(seen.begin(), seen.end());
  for (PairId p : unseen) {
    if (seen_set.count(p)) {
      throw ValidationError("build_candidates: pair '" + pair_name(params.vocab, p) + "' is both seen and unseen");
    }
  }
  CandidateSet out;
  out.world = world;
  if (world == World::Open) out.pairs.assign(seen.begin(), seen.end());
  out.pairs.insert(out.pairs.end(), unseen.begin(), unseen.end());
  if (out.pairs.empty()) throw ValidationError("build_candidates: no candidate pairs");
  if (std::set<PairId>(out.pairs.begin(), out.pairs.end()).size() != out.pairs.size()) {
    throw ValidationError("build_candidates: duplicate candidate pairs");
  }
  out.embeddings = compose_all(params, out.pairs);
  return out;
}

std::size_t nearest_candidate(const Vec& image_emb, const CandidateSet& cands, std::optional<std::size_t> restrict_obj) {
  if (cands.pairs.empty()) throw ValidationError("nearest_candidate: empty candidate set");
  std::size_t best = cands.pairs.size();
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.pairs.size(); ++i) {
    if (restrict_obj && cands.pairs[i].obj != *restrict_obj) continue;
    const double d = euclidean_distance(image_emb, cands.embeddings[i]);
    if (d < best_dist || best == cands.pairs.size()) {
      best = i;
      best_dist = d;
    }
  }
  if (best == cands.pairs.size()) {
    throw ValidationError("nearest_candidate: no candidate has object index " + std::to_string(*restrict_obj));
  }
  return best;
}

PairId predict_pair(const ModelParams& params, const Vec& feat, const CandidateSet& cands,
                    std::optional<std::size_t> restrict_obj) {
  return cands.pairs[nearest_candidate(embed_image(params, feat), cands, restrict_obj)];
}

double harmonic_mean(double open, double closed) {
  const double sum = open + closed;
  if (!(sum > 0.0)) return 0.0;
  return 2.0 * open * closed / sum;
}

EvalReport score_predictions(std::span<const PairId> labels, const Predictions& predictions,
                             std::span<const PairId> unseen) {
  const std::size_t n = labels.size();
  if (n == 0) throw ValidationError("evaluation needs at least one test instance");
  if (predictions.closed.size() != n || predictions.open.size() != n || predictions.obj_oracle.size() != n) {
    throw ShapeError("score_predictions: prediction lists do not match the number of labels");
  }
  EvalReport r;
  r.num_instances = n;
  std::map<PairId, std::size_t> row;
  for (PairId p : unseen) {
    row.emplace(p, r.per_pair.size());
    r.per_pair.push_back({p});
  }
  std::size_t closed = 0, open = 0, oracle = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = row.find(labels[i]);
    if (it == row.end()) throw ValidationError("test label is not an unseen pair (split leakage)");
    PairAccuracy& acc = r.per_pair[it->second];
    ++acc.count;
    if (predictions.closed[i] == labels[i]) ++closed, ++acc.closed_correct;
    if (predictions.open[i] == labels[i]) ++open, ++acc.open_correct;
    if (predictions.obj_oracle[i] == labels[i]) ++oracle, ++acc.obj_oracle_correct;
  }
  const double total = static_cast<double>(n);
  r.closed_top1 = static_cast<double>(closed) / total;
  r.open_top1 = static_cast<double>(open) / total;
  r.obj_oracle_top1 = static_cast<double>(oracle) / total;
  r.h_mean = harmonic_mean(r.open_top1, r.closed_top1);
  return r;
}

EvalReport evaluate(const ModelParams& params, std::span<const LabeledFeature> test, std::span<const PairId> seen,
                    std::span<const PairId> unseen) {
  const std::set<PairId> unseen_set(unseen.begin(), unseen.end());
  for (const auto& ex : test) {
    if (!unseen_set.count(ex.pair)) {
      throw ValidationError("test instance labeled '" + pair_name(params.vocab, ex.pair) +
                            "' is not an unseen pair (split leakage)");
    }
  }
  const CandidateSet closed = build_candidates(params, seen, unseen, World::Closed);
  const CandidateSet open = build_candidates(params, seen, unseen, World::Open);

  Predictions pred;
  std::vector<PairId> labels;
  for (const auto& ex : test) {
    const Vec emb = embed_image(params, ex.feat);
    pred.closed.push_back(closed.pairs[nearest_candidate(emb, closed)]);
    pred.open.push_back(open.pairs[nearest_candidate(emb, open)]);
    pred.obj_oracle.push_back(open.pairs[nearest_candidate(emb, open, ex.pair.obj)]);
    labels.push_back(ex.pair);
    const bool open_right = pred.open.back() == ex.pair;
    if (open_right && (pred.closed.back() != ex.pair || pred.obj_oracle.back() != ex.pair)) {
      throw InvariantViolation("instance correct in the open world but not in a restricted candidate set");
    }
  }
  EvalReport report = score_predictions(labels, pred, unseen);
  check_subset_dominance(report);
  return report;
}

void check_subset_dominance(const EvalReport& r) {
  if (r.closed_top1 < r.open_top1) {
    throw InvariantViolation("closed-world accuracy " + format_percent(r.closed_top1) + " below open-world " +
                             format_percent(r.open_top1));
  }
  if (r.obj_oracle_top1 < r.open_top1) {
    throw InvariantViolation("+obj accuracy " + format_percent(r.obj_oracle_top1) + " below open-world " +
                             format_percent(r.open_top1));
  }
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * fraction);
  return buf;
}

std::string format_report_table(const EvalReport& r, const Vocab& vocab, ReportSections sections) {
  std::ostringstream out;
  out << "instances: " << r.num_instances << "\n";
  if (sections.closed) out << "closed   " << format_percent(r.closed_top1) << "%\n";
  if (sections.open) out << "open     " << format_percent(r.open_top1) << "%\n";
  if (sections.obj_oracle) out << "+obj     " << format_percent(r.obj_oracle_top1) << "%\n";
  if (sections.closed && sections.open) out << "h-mean   " << format_percent(r.h_mean) << "%\n";
  out << "\nper pair (n, closed, open, +obj):\n";
  for (const auto& p : r.per_pair) {
    if (p.count == 0) continue;
    const double n = static_cast<double>(p.count);
    out << "  " << pair_name(vocab, p.pair) << "  " << p.count << "  "
        << format_percent(static_cast<double>(p.closed_correct) / n) << "  "
        << format_percent(static_cast<double>(p.open_correct) / n) << "  "
        << format_percent(static_cast<double>(p.obj_oracle_correct) / n) << "\n";
  }
  return out.str();
}

void write_report_csv(const EvalReport& r, const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write report '" + path.string() + "'");
  out << "metric,value\n";
  out << "closed_top1," << text::format_double(r.closed_top1) << "\n";
  out << "open_top1," << text::format_double(r.open_top1) << "\n";
  out << "obj_oracle_top1," << text::format_double(r.obj_oracle_top1) << "\n";
  out << "h_mean," << text::format_double(r.h_mean) << "\n";
  out << "instances," << r.num_instances << "\n";
  out << "\nattr,obj,count,closed_correct,open_correct,obj_oracle_correct\n";
  for (const auto& p : r.per_pair) {
    out << vocab.attributes[p.pair.attr] << ',' << vocab.objects[p.pair.obj] << ',' << p.count << ','
        << p.closed_correct << ',' << p.open_correct << ',' << p.obj_oracle_correct << "\n";
  }
}

std::vector<std::string> retrieve_topk(const ModelParams& params, std::size_t attr, const Vec& obj_vec,
                                       const NamedVectors& pool, std::size_t k) {
  if (pool.vectors.empty()) throw ValidationError("retrieve_topk: empty pool");
  if (k > pool.vectors.size()) {
    throw ValidationError("retrieve_topk: k=" + std::to_string(k) + " exceeds pool size " +
                          std::to_string(pool.vectors.size()));
  }
  const Vec query = compose_with_vector(params, attr, obj_vec);
  std::vector<double> dist(pool.vectors.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = euclidean_distance(query, embed_image(params, pool.vectors[i]));
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool.names[order[i]]);
  return out;
}

void dump_embeddings(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  for (PairId p : all_pairs(params.vocab)) {
    out << params.vocab.attributes[p.attr] << ' ' << params.vocab.objects[p.obj];
    for (double v : compose(params, p)) out << ' ' << text::format_double(v);
    out << '\n';
  }
}

}  // namespace attrop
