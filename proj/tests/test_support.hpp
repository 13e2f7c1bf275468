#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mmfusion/matrix.hpp"
#include "mmfusion/model.hpp"

namespace testsupport {

using mmfusion::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = u(rng);
    return m;
}

/// Textbook triple loop; shares no code with the library kernels.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

/// The gradient-check dims: D_T=8, D_I=6, D_C=4, H_g=5, H_c=6.
inline mmfusion::HyperConfig small_config(mmfusion::ModelVariant v, std::uint64_t seed) {
    mmfusion::HyperConfig c;
    c.text_dim = 8;
    c.image_dim = 6;
    c.common_dim = 4;
    c.key_dim = 4;
    c.gate_hidden = 5;
    c.cls_hidden = 6;
    c.variant = v;
    c.init_seed = seed;
    return c;
}

inline mmfusion::FeatureRecord random_record(const mmfusion::HyperConfig& c, std::size_t text_len,
                                             std::size_t image_len, int label, std::mt19937_64& rng) {
    mmfusion::FeatureRecord r;
    r.id = "r";
    r.label = label;
    r.text_features = random_matrix(text_len, c.text_dim, rng);
    r.image_features = random_matrix(image_len, c.image_dim, rng);
    return r;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mmfusion_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::vector<std::uint8_t> out;
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) return out;
    int ch;
    while ((ch = std::fgetc(f)) != EOF) out.push_back(static_cast<std::uint8_t>(ch));
    std::fclose(f);
    return out;
}

}  // namespace testsupport
