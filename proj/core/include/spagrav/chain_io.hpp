#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "spagrav/sampler.hpp"

namespace spagrav {

// Draw store: `# key=value` metadata lines, then a CSV with a `sweep`
// column followed by one column per scalar parameter. Numbers are written
// in shortest round-trip form, so a reload reproduces every bit.
void write_draws(std::ostream& out, const ChainOutput& chain);
ChainOutput read_draws(std::istream& in, const std::string& source = "<stream>");
void save_draws(const std::filesystem::path& path, const ChainOutput& chain);
ChainOutput load_draws(const std::filesystem::path& path);

// Resume file: the full chain state, the generator state and the draws
// stored so far, tagged with the schedule and config hash it belongs to.
struct CheckpointFile {
  Schedule schedule;
  std::string config_hash;
  std::size_t chain = 0;
  ChainCheckpoint checkpoint;
};

void write_checkpoint(std::ostream& out, const CheckpointFile& file);
CheckpointFile read_checkpoint(std::istream& in, const std::string& source = "<stream>");
void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

}  // namespace spagrav
