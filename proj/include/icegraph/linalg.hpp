#pragma once

#include <vector>

#include "icegraph/matrix.hpp"

namespace icegraph {

// Thin Householder QR of an m x k matrix: M = Q R with Q (m x r) carrying
// orthonormal columns and R (r x k) upper trapezoidal, r = min(m, k).
struct ThinQr {
    DenseMatrix q;
    DenseMatrix r;
};

ThinQr thin_qr(const DenseMatrix& m);

// Full SVD of a small dense matrix by one-sided Jacobi rotations.
// Singular values are sorted descending; u is m x r and v is k x r with
// r = min(m, k). Columns of u belonging to (numerically) zero singular
// values are left as zero vectors.
struct SmallSvd {
    DenseMatrix u;
    std::vector<double> sigma;
    DenseMatrix v;
};

SmallSvd jacobi_svd(const DenseMatrix& a);

std::vector<double> matrix_vector(const DenseMatrix& m, const std::vector<double>& x);
double dot(const std::vector<double>& a, const std::vector<double>& b);
double l2_norm(const std::vector<double>& v);

}  // namespace icegraph
