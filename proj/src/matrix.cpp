#include "mmfusion/matrix.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

void require_positive(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
        throw DimensionError("matrix dimensions must be positive, got " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
    require_positive(rows, cols);
    values_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    require_positive(rows, cols);
    if (values_.size() != rows * cols) {
        throw DimensionError("matrix " + shape_string() + " needs " + std::to_string(rows * cols) +
                             " values, got " + std::to_string(values_.size()));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    require_positive(rows_, cols_);
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw DimensionError("ragged matrix literal");
        }
        values_.insert(values_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool operator==(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        return false;
    }
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i])) {
            return false;
        }
    }
    return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("max_abs_diff shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    double worst = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        worst = std::max(worst, std::abs(av[i] - bv[i]));
    }
    return worst;
}

const char* to_string(LoadError::Kind kind) noexcept {
    switch (kind) {
        case LoadError::Kind::Io: return "io error";
        case LoadError::Kind::BadMagic: return "bad magic";
        case LoadError::Kind::VersionMismatch: return "version mismatch";
        case LoadError::Kind::Truncated: return "truncated payload";
        case LoadError::Kind::DimInconsistent: return "dim inconsistency";
        case LoadError::Kind::InvalidRecord: return "invalid record";
        case LoadError::Kind::VariantMismatch: return "variant mismatch";
    }
    return "unknown";
}

}  // namespace mmfusion
