#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "featgen/featgen.hpp"

namespace testutil {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("featgen_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Eight standard-normal columns x1..x8 with a target built by `f`.
template <typename F>
featgen::DataTable gaussian_table(std::size_t n, std::uint64_t seed, F f) {
  featgen::Rng rng(seed);
  featgen::DataTable t;
  for (int j = 1; j <= 8; ++j) t.add_feature("x" + std::to_string(j), featgen::Column(n), 0);
  t.target.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& c : t.columns) c[i] = rng.normal();
    t.target[i] = f(t, i, rng);
  }
  return t;
}

}  // namespace testutil
