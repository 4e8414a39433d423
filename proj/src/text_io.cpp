#include "attrop/text_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "attrop/errors.hpp"

namespace attrop::text {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf, static_cast<std::size_t>(n));
}

LineReader::LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

std::optional<std::vector<std::string_view>> LineReader::next() {
  while (std::getline(in_, line_)) {
    ++line_number_;
    auto tokens = split(line_);
    if (!tokens.empty()) return tokens;
  }
  return std::nullopt;
}

void LineReader::fail(const std::string& message) const {
  throw ValidationError(source_ + ":" + std::to_string(line_number_) + ": " + message);
}

double LineReader::to_double(std::string_view token) const {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) fail("expected a number, got '" + std::string(token) + "'");
  if (!std::isfinite(value)) fail("non-finite value '" + std::string(token) + "'");
  return value;
}

std::size_t LineReader::to_count(std::string_view token) const {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    fail("expected a non-negative integer, got '" + std::string(token) + "'");
  }
  return value;
}

void LineReader::expect_tokens(const std::vector<std::string_view>& tokens, std::size_t n, const char* what) const {
  if (tokens.size() != n) {
    fail(std::string(what) + ": expected " + std::to_string(n) + " fields, found " + std::to_string(tokens.size()));
  }
}

}  // namespace attrop::text
