#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace clstream {

/// Dense row-major matrix of doubles. The one data container shared by
/// datasets, batches and logits.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    bool empty() const { return rows == 0; }

    /// Copy a subset of rows, in the given order.
    Matrix gather_rows(std::span<const int> ids) const {
        Matrix out(ids.size(), cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto r = static_cast<std::size_t>(ids[i]);
            if (r >= rows) throw std::out_of_range("gather_rows: row id out of range");
            std::copy(row(r).begin(), row(r).end(), out.row(i).begin());
        }
        return out;
    }
};

}  // namespace clstream
