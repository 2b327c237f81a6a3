#pragma once

#include "etcn/common.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

namespace etcn::test {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
    return random_matrix(rng, n, 1, scale).col(0);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
    return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("etcn-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace etcn::test
