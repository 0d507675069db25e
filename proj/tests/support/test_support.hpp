#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "gnmap/rng.hpp"

namespace gnmap::testing {

/// FNV-1a over every regular file below `dir`: relative path, then bytes,
/// in sorted path order.
inline std::uint64_t directory_checksum(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const std::string& bytes) {
    for (char c : bytes) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& f : files) {
    mix(std::filesystem::relative(f, dir).generic_string());
    std::ifstream in(f, std::ios::binary);
    mix(std::string(std::istreambuf_iterator<char>(in), {}));
  }
  return h;
}

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Fresh empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("gnmap_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace gnmap::testing
