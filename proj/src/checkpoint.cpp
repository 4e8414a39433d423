#include "attrop/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "attrop/errors.hpp"
#include "attrop/text_io.hpp"

namespace attrop {

namespace {

void write_rows(std::ostream& out, std::span<const double> values, std::size_t cols) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << text::format_double(values[i]) << ((i + 1) % cols == 0 ? '\n' : ' ');
  }
}

void write_names(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? " " : "") << names[i];
  out << '\n';
}

std::vector<std::string_view> require_line(text::LineReader& reader, const char* what) {
  auto tokens = reader.next();
  if (!tokens) throw ValidationError(reader.source() + ": truncated checkpoint, missing " + what);
  return *tokens;
}

void read_rows(text::LineReader& reader, std::span<double> dst, std::size_t cols, const char* what) {
  const std::size_t rows = cols == 0 ? 0 : dst.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    auto tokens = require_line(reader, what);
    reader.expect_tokens(tokens, cols, what);
    for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] = reader.to_double(tokens[c]);
  }
}

}  // namespace

void write_checkpoint(const ModelParams& params, std::ostream& out) {
  validate_shapes(params);
  const std::size_t d = params.dim;
  out << kCheckpointMagic << '\n';
  out << d << ' ' << params.feat_dim << ' ' << params.vocab.num_attrs() << ' ' << params.vocab.num_objs() << '\n';
  write_names(out, params.vocab.attributes);
  write_names(out, params.vocab.objects);
  for (const auto& v : params.objects.vectors) write_rows(out, v.span(), d);
  for (const auto& m : params.attrs.operators) write_rows(out, m.span(), d);
  write_rows(out, params.embedder.weight.span(), params.feat_dim);
  write_rows(out, params.embedder.bias.span(), d);
  write_rows(out, params.aux.attr_weight.span(), d);
  write_rows(out, params.aux.attr_bias.span(), params.vocab.num_attrs());
  write_rows(out, params.aux.obj_weight.span(), d);
  write_rows(out, params.aux.obj_bias.span(), params.vocab.num_objs());
}

ModelParams read_checkpoint(std::istream& in, const std::string& source) {
  text::LineReader reader(in, source);
  auto magic = require_line(reader, "header");
  if (magic.size() != 1 || magic[0] != kCheckpointMagic) {
    reader.fail("not a checkpoint: expected '" + std::string(kCheckpointMagic) + "' header");
  }
  auto dims = require_line(reader, "dimension line");
  reader.expect_tokens(dims, 4, "dimension line 'D F |A| |O|'");
  const std::size_t d = reader.to_count(dims[0]);
  const std::size_t f = reader.to_count(dims[1]);
  const std::size_t na = reader.to_count(dims[2]);
  const std::size_t no = reader.to_count(dims[3]);
  if (d == 0 || f == 0 || na == 0 || no == 0) reader.fail("dimensions must all be at least 1");

  ModelParams p;
  p.dim = d;
  p.feat_dim = f;
  auto attrs = require_line(reader, "attribute names");
  reader.expect_tokens(attrs, na, "attribute names");
  for (auto t : attrs) p.vocab.attributes.emplace_back(t);
  auto objs = require_line(reader, "object names");
  reader.expect_tokens(objs, no, "object names");
  for (auto t : objs) p.vocab.objects.emplace_back(t);
  try {
    p.vocab.validate();
  } catch (const ValidationError& e) {
    reader.fail(e.what());
  }

  p.objects.vectors.assign(no, Vec(d));
  for (auto& v : p.objects.vectors) read_rows(reader, v.span(), d, "object vector row");
  p.attrs.operators.assign(na, Mat(d, d));
  for (auto& m : p.attrs.operators) read_rows(reader, m.span(), d, "operator row");
  p.embedder.weight = Mat(d, f);
  read_rows(reader, p.embedder.weight.span(), f, "embedder weight row");
  p.embedder.bias = Vec(d);
  read_rows(reader, p.embedder.bias.span(), d, "embedder bias");
  p.aux.attr_weight = Mat(na, d);
  read_rows(reader, p.aux.attr_weight.span(), d, "attribute head row");
  p.aux.attr_bias = Vec(na);
  read_rows(reader, p.aux.attr_bias.span(), na, "attribute head bias");
  p.aux.obj_weight = Mat(no, d);
  read_rows(reader, p.aux.obj_weight.span(), d, "object head row");
  p.aux.obj_bias = Vec(no);
  read_rows(reader, p.aux.obj_bias.span(), no, "object head bias");

  if (reader.next()) reader.fail("unexpected data after the last parameter block");
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(params, out);
  if (!out) throw ValidationError("failed writing checkpoint '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in, path.string());
}

}  // namespace attrop
