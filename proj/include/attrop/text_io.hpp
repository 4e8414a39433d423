#pragma once

// Small helpers shared by the text file formats: whitespace tokenizing,
// strict number parsing with file:line diagnostics, and round-trippable
// double formatting.

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attrop::text {

std::vector<std::string_view> split(std::string_view line);

// 17 significant digits: parses back to the identical double.
std::string format_double(double x);

// Reads non-blank lines and remembers where it is, so parse errors can cite
// "path:line".
class LineReader {
 public:
  LineReader(std::istream& in, std::string source);

  // Next non-blank line, tokenized. nullopt at end of input.
  std::optional<std::vector<std::string_view>> next();
  std::size_t line_number() const { return line_number_; }
  const std::string& source() const { return source_; }

  // ValidationError prefixed with the current location.
  [[noreturn]] void fail(const std::string& message) const;

  double to_double(std::string_view token) const;
  std::size_t to_count(std::string_view token) const;
  // Exactly `n` tokens on the current line or fail.
  void expect_tokens(const std::vector<std::string_view>& tokens, std::size_t n, const char* what) const;

 private:
  std::istream& in_;
  std::string source_;
  std::string line_;
  std::size_t line_number_ = 0;
};

}  // namespace attrop::text
