#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace icegraph {

// Row-major dense matrix of 64-bit floats. Graphs here are tiny (n < 20),
// so no sparse or blocked backend.
class DenseMatrix {
public:
    DenseMatrix() : rows_(0), cols_(0) {}
    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    DenseMatrix transpose() const;
    bool all_finite() const;

    bool operator==(const DenseMatrix& other) const = default;

    // TSV rendering for debugging; one row per line, 17 significant digits.
    std::string to_tsv() const;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

// Matrix product. Throws ShapeError when inner dimensions disagree.
DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b);

// a*x + b*y elementwise. Throws ShapeError when shapes disagree.
DenseMatrix linear_combination(double a, const DenseMatrix& x, double b, const DenseMatrix& y);

double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace icegraph
