// Command-line front end: synth, train, eval, retrieve, gradcheck,
// dump-embeddings.
//
// Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "attrop/checkpoint.hpp"
#include "attrop/dataset.hpp"
#include "attrop/errors.hpp"
#include "attrop/evaluation.hpp"
#include "attrop/text_io.hpp"
#include "attrop/training.hpp"

namespace fs = std::filesystem;
using namespace attrop;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct SynthOptions {
  SyntheticSpec spec;
  std::string out;
};

int run_synth(const SynthOptions& o) {
  const SyntheticDataset ds = generate_synthetic(o.spec);
  save_dataset(ds.bundle, o.out);
  if (!ds.truth.novel_objects.names.empty()) write_named_vectors(ds.truth.novel_objects, fs::path(o.out) / "novel_objects.txt");
  std::cout << "wrote " << ds.bundle.train.size() << " training and " << ds.bundle.test.size() << " test instances ("
            << ds.bundle.seen_pairs.size() << " seen / " << ds.bundle.unseen_pairs.size() << " unseen pairs) to "
            << o.out << "\n";
  return 0;
}

struct TrainOptions {
  std::string data;
  std::string preset;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> lr_attr;
  std::optional<std::size_t> batch;
  std::optional<double> w_triplet, w_aux, w_inv, w_comm, w_ant;
  std::string antonyms;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool freeze_objects = false;
  bool detach_inverse = false;
  bool tune_aux = false;
  std::string out;
  std::string stats;
};

std::size_t resolve_dim(std::optional<std::size_t> requested, const DatasetBundle& data) {
  if (requested) return *requested;
  if (data.object_vectors) return data.object_vectors->dim();
  return 300;
}

int run_train(const TrainOptions& o) {
  DatasetBundle data = load_dataset(DatasetPaths::in_directory(o.data));
  if (!o.antonyms.empty()) data.antonyms = read_antonyms(o.antonyms, data.vocab);

  TrainConfig cfg = o.preset.empty() ? TrainConfig{} : preset_config(o.preset);
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.lr) cfg.lr_main = *o.lr;
  if (o.lr_attr) cfg.lr_attr = *o.lr_attr;
  if (o.batch) cfg.batch_size = *o.batch;
  if (o.w_triplet) cfg.weights.triplet = *o.w_triplet;
  if (o.w_aux) cfg.weights.aux = *o.w_aux;
  if (o.w_inv) cfg.weights.inv = *o.w_inv;
  if (o.w_comm) cfg.weights.comm = *o.w_comm;
  if (o.w_ant) cfg.weights.ant = *o.w_ant;
  cfg.seed = o.seed;
  cfg.deterministic = o.deterministic;
  cfg.freeze_objects = o.freeze_objects;
  cfg.detach_inverse = o.detach_inverse;
  cfg.validate();

  const std::size_t dim = resolve_dim(o.dim, data);
  if (o.tune_aux) {
    const AuxTuning tuning = tune_aux_weight(data, cfg, dim);
    for (const auto& [w, acc] : tuning.open_accuracy)
      std::cerr << "w_aux " << w << ": validation open " << format_percent(acc) << "%\n";
    cfg.weights.aux = tuning.best_weight;
    std::cerr << "selected w_aux = " << cfg.weights.aux << "\n";
  }

  ModelParams params = init_for_dataset(data, dim, SeedStreams(cfg.seed).init);
  const std::size_t report_every = std::max<std::size_t>(1, cfg.epochs / 10);
  const TrainStats stats = train(params, data, cfg);
  for (const auto& e : stats.epochs) {
    if (e.epoch % report_every == 0 || e.epoch == stats.epochs.size()) {
      std::cerr << "epoch " << e.epoch << " loss " << e.total << "\n";
    }
  }

  save_checkpoint(params, o.out);
  const std::string stats_path = o.stats.empty() ? o.out + ".stats.csv" : o.stats;
  write_stats_csv(stats, stats_path);
  std::cout << "checkpoint: " << o.out << "\nstats: " << stats_path << "\n";
  return 0;
}

struct EvalOptions {
  std::string data;
  std::string ckpt;
  std::string world = "both";
  bool obj_oracle = false;
  std::string report;
};

int run_eval(const EvalOptions& o) {
  const DatasetBundle data = load_dataset(DatasetPaths::in_directory(o.data));
  const ModelParams params = load_checkpoint(o.ckpt);
  validate_shapes(params);
  if (params.vocab != data.vocab) throw ValidationError("checkpoint vocabulary does not match the dataset");
  if (params.feat_dim != data.feat_dim) throw ValidationError("checkpoint feature dimension does not match the dataset");

  const auto test = data.test_examples();
  const EvalReport report = evaluate(params, test, data.seen_pairs, data.unseen_pairs);
  ReportSections sections;
  sections.closed = o.world != "open";
  sections.open = o.world != "closed";
  sections.obj_oracle = o.obj_oracle;
  std::cout << format_report_table(report, data.vocab, sections);
  if (!o.report.empty()) write_report_csv(report, data.vocab, o.report);
  return 0;
}

struct RetrieveOptions {
  std::string ckpt;
  std::string attr;
  std::string obj;
  std::string obj_vec;
  std::string pool;
  std::size_t k = 5;
};

// Accepts either "v1 ... vD" or "name v1 ... vD" on the first non-blank line.
Vec read_query_vector(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  text::LineReader reader(in, path);
  auto tokens = reader.next();
  if (!tokens) throw ValidationError(path + ": empty object vector file");
  std::size_t first = 0;
  if (tokens->size() == dim + 1) first = 1;
  else if (tokens->size() != dim) reader.fail("expected " + std::to_string(dim) + " values");
  Vec v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = reader.to_double((*tokens)[first + i]);
  return v;
}

int run_retrieve(const RetrieveOptions& o) {
  const ModelParams params = load_checkpoint(o.ckpt);
  validate_shapes(params);
  const std::size_t attr = params.vocab.attr_index(o.attr);
  Vec query;
  if (!o.obj.empty()) query = params.objects.vectors[params.vocab.obj_index(o.obj)];
  else query = read_query_vector(o.obj_vec, params.dim);
  const NamedVectors pool = read_named_vectors(o.pool);
  if (pool.dim() != params.feat_dim) {
    throw ValidationError("pool features have dimension " + std::to_string(pool.dim()) + ", model expects " +
                          std::to_string(params.feat_dim));
  }
  const auto ranked = retrieve_topk(params, attr, query, pool, o.k);
  for (std::size_t i = 0; i < ranked.size(); ++i) std::cout << i + 1 << ' ' << ranked[i] << '\n';
  return 0;
}

struct GradcheckOptions {
  std::size_t dim = 8;
  std::size_t attrs = 5;
  std::size_t objs = 7;
  std::size_t batch = 6;
  double eps = 1e-5;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool detach_inverse = false;
};

int run_gradcheck(const GradcheckOptions& o) {
  GradCheckProblem prob = make_gradcheck_problem(o.dim, o.attrs, o.objs, o.batch, o.seed);
  const GradCheckResult r = finite_diff_check(prob.params, prob.batch, prob.negatives, o.weights, prob.antonyms,
                                              prob.rng, o.eps, LossOptions{o.detach_inverse});
  const double tolerance = o.weights.inv > 0.0 ? 1e-4 : 1e-5;
  std::cout << "parameters: " << parameter_count(prob.params) << "\n"
            << "max relative error: " << r.max_rel_error << " (tolerance " << tolerance << ")\n";
  if (r.max_rel_error > 0.0) {
    std::cout << "worst entry: " << r.worst_tensor << "[" << r.worst_index << "] analytic " << r.analytic
              << " numeric " << r.numeric << "\n";
  }
  if (r.max_rel_error > tolerance) {
    std::cout << "FAILED\n";
    return kExitNumerical;
  }
  std::cout << "OK\n";
  return 0;
}

struct DumpOptions {
  std::string ckpt;
  std::string out;
};

int run_dump(const DumpOptions& o) {
  const ModelParams params = load_checkpoint(o.ckpt);
  validate_shapes(params);
  dump_embeddings(params, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-operator compositional embeddings"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-operator synthetic dataset");
  synth_cmd->add_option("--attrs", synth.spec.num_attrs, "Number of attributes");
  synth_cmd->add_option("--objs", synth.spec.num_objs, "Number of objects");
  synth_cmd->add_option("--dim", synth.spec.dim, "Embedding and feature dimension");
  synth_cmd->add_option("--images-per-pair", synth.spec.images_per_pair, "Images per pair");
  synth_cmd->add_option("--unseen-frac", synth.spec.unseen_fraction, "Fraction of pairs held out as unseen");
  synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Feature noise standard deviation");
  synth_cmd->add_option("--perturb", synth.spec.operator_perturbation, "Planted operator perturbation scale");
  synth_cmd->add_option("--seed", synth.spec.seed, "Random seed");
  synth_cmd->add_option("--novel-objects", synth.spec.novel_objects, "Extra out-of-vocabulary prototypes");
  synth_cmd->add_flag("--misspecified", synth.spec.misspecified, "Distort features with a fixed nonlinearity");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--preset", tr.preset, "Configuration preset")
      ->check(CLI::IsMember({"mit-like", "zappos-like", "synthetic"}));
  train_cmd->add_option("--dim", tr.dim, "Embedding dimension D");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--lr", tr.lr, "Learning rate for all but the attribute operators");
  train_cmd->add_option("--lr-attr", tr.lr_attr, "Learning rate for attribute operators");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--w-triplet", tr.w_triplet, "Triplet loss weight");
  train_cmd->add_option("--w-aux", tr.w_aux, "Auxiliary loss weight");
  train_cmd->add_option("--w-inv", tr.w_inv, "Inverse-consistency weight");
  train_cmd->add_option("--w-comm", tr.w_comm, "Commutativity weight");
  train_cmd->add_option("--w-ant", tr.w_ant, "Antonym-consistency weight");
  train_cmd->add_option("--antonyms", tr.antonyms, "Antonym file");
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_flag("--deterministic", tr.deterministic, "Bitwise-reproducible run");
  train_cmd->add_flag("--freeze-objects", tr.freeze_objects, "Keep object vectors fixed");
  train_cmd->add_flag("--detach-inverse", tr.detach_inverse, "Treat swapped pseudo-instances as constants");
  train_cmd->add_flag("--tune-aux", tr.tune_aux, "Pick the auxiliary weight on a 20% validation split of seen pairs");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--stats", tr.stats, "Stats CSV path (default: <out>.stats.csv)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's unseen pairs");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--world", ev.world, "Which accuracies to print")->check(CLI::IsMember({"open", "closed", "both"}));
  eval_cmd->add_flag("--obj-oracle", ev.obj_oracle, "Also print the +obj oracle accuracy");
  eval_cmd->add_option("--report", ev.report, "CSV report path");

  RetrieveOptions rt;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank pool images for an attribute-object query");
  retrieve_cmd->add_option("--ckpt", rt.ckpt, "Checkpoint")->required();
  retrieve_cmd->add_option("--attr", rt.attr, "Attribute name")->required();
  auto* obj_opt = retrieve_cmd->add_option("--obj", rt.obj, "Object name");
  auto* vec_opt = retrieve_cmd->add_option("--obj-vec", rt.obj_vec, "File with an object vector");
  obj_opt->excludes(vec_opt);
  vec_opt->excludes(obj_opt);
  retrieve_cmd->add_option("--pool", rt.pool, "Pool file: id f1 ... fF per line")->required();
  retrieve_cmd->add_option("--k", rt.k, "Number of results");

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc_cmd->add_option("--dim", gc.dim, "Embedding dimension");
  gc_cmd->add_option("--attrs", gc.attrs, "Number of attributes");
  gc_cmd->add_option("--objs", gc.objs, "Number of objects");
  gc_cmd->add_option("--batch", gc.batch, "Examples in the checked batch");
  gc_cmd->add_option("--eps", gc.eps, "Finite-difference step");
  gc_cmd->add_option("--seed", gc.seed, "Random seed");
  gc_cmd->add_option("--w-triplet", gc.weights.triplet, "Triplet loss weight");
  gc_cmd->add_option("--w-aux", gc.weights.aux, "Auxiliary loss weight");
  gc_cmd->add_option("--w-inv", gc.weights.inv, "Inverse-consistency weight");
  gc_cmd->add_option("--w-comm", gc.weights.comm, "Commutativity weight");
  gc_cmd->add_option("--w-ant", gc.weights.ant, "Antonym-consistency weight");
  gc_cmd->add_flag("--detach-inverse", gc.detach_inverse, "Treat swapped pseudo-instances as constants");

  DumpOptions dump;
  auto* dump_cmd = app.add_subcommand("dump-embeddings", "Write every pair embedding as text");
  dump_cmd->add_option("--ckpt", dump.ckpt, "Checkpoint")->required();
  dump_cmd->add_option("--out", dump.out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*retrieve_cmd) {
      if (rt.obj.empty() == rt.obj_vec.empty()) throw ValidationError("retrieve needs exactly one of --obj or --obj-vec");
      return run_retrieve(rt);
    }
    if (*gc_cmd) return run_gradcheck(gc);
    if (*dump_cmd) return run_dump(dump);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
