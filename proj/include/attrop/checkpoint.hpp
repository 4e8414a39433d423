#pragma once

// Text checkpoints. Layout:
//
//   AOCKPT1
//   D F |A| |O|
//   attribute names (one line)
//   object names (one line)
//   object vectors          |O| rows of D
//   attribute operators     |A|·D rows of D
//   embedder weight         D rows of F
//   embedder bias           1 row of D
//   attribute head          |A| rows of D, then 1 bias row of |A|
//   object head             |O| rows of D, then 1 bias row of |O|
//
// Values use 17 significant digits, so a save/load cycle is bitwise exact.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "attrop/model.hpp"

namespace attrop {

inline constexpr const char* kCheckpointMagic = "AOCKPT1";

void write_checkpoint(const ModelParams& params, std::ostream& out);
ModelParams read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>");

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace attrop
