#pragma once

#include "nnml/dataset.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline nnml::Matrix gaussian(std::mt19937_64& rng, nnml::Index rows, nnml::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nnml::Matrix m(rows, cols);
  for (nnml::Index j = 0; j < cols; ++j) {
    for (nnml::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

inline nnml::Matrix random_psd(std::mt19937_64& rng, nnml::Index d) {
  const nnml::Matrix a = gaussian(rng, d, d);
  return a * a.transpose();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nnml_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
