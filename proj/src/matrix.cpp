#include "icegraph/matrix.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "icegraph/errors.hpp"

namespace icegraph {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length does not match rows*cols");
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t.at(c, r) = at(r, c);
    return t;
}

bool DenseMatrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string DenseMatrix::to_tsv() const {
    std::string out;
    char buf[64];
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", at(r, c));
            if (c > 0) out += '\t';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("cannot multiply " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " by " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

DenseMatrix linear_combination(double a, const DenseMatrix& x, double b, const DenseMatrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw ShapeError("shape mismatch in linear combination");
    }
    DenseMatrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = a * x.data()[i] + b * y.data()[i];
    }
    return out;
}

double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("shape mismatch in max_abs_difference");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

}  // namespace icegraph
