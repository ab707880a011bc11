#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xrecap/common.hpp"

namespace testutil {

inline std::filesystem::path data(const std::string& rel) {
  return std::filesystem::path(XRECAP_TEST_DATA) / rel;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("xrecap_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Eigen::MatrixXd random_unit_rows(std::size_t n, std::size_t d, xrecap::Rng& rng) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
    m.row(i).normalize();
  }
  return m;
}

}  // namespace testutil
