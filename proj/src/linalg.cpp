#include "icegraph/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icegraph/errors.hpp"

namespace icegraph {

ThinQr thin_qr(const DenseMatrix& m) {
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    const std::size_t r = std::min(rows, cols);

    DenseMatrix a = m;
    // Householder vectors, one per eliminated column.
    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(r);

    for (std::size_t j = 0; j < r; ++j) {
        double norm = 0.0;
        for (std::size_t i = j; i < rows; ++i) norm += a.at(i, j) * a.at(i, j);
        norm = std::sqrt(norm);

        std::vector<double> v(rows - j, 0.0);
        if (norm > 0.0) {
            const double x0 = a.at(j, j);
            const double alpha = (x0 >= 0.0) ? -norm : norm;
            for (std::size_t i = j; i < rows; ++i) v[i - j] = a.at(i, j);
            v[0] -= alpha;
            double vnorm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
            if (vnorm > 0.0) {
                for (double& vi : v) vi /= vnorm;
                // Apply H = I - 2 v v^T to the trailing block.
                for (std::size_t c = j; c < cols; ++c) {
                    double proj = 0.0;
                    for (std::size_t i = j; i < rows; ++i) proj += v[i - j] * a.at(i, c);
                    proj *= 2.0;
                    for (std::size_t i = j; i < rows; ++i) a.at(i, c) -= proj * v[i - j];
                }
            } else {
                v.assign(rows - j, 0.0);
            }
        }
        reflectors.push_back(std::move(v));
    }

    ThinQr out;
    out.r = DenseMatrix(r, cols);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t c = i; c < cols; ++c) out.r.at(i, c) = a.at(i, c);
    }

    // Q = H_0 ... H_{r-1} applied to the first r columns of the identity.
    out.q = DenseMatrix(rows, r);
    std::vector<double> col(rows);
    for (std::size_t c = 0; c < r; ++c) {
        std::fill(col.begin(), col.end(), 0.0);
        col[c] = 1.0;
        for (std::size_t j = r; j-- > 0;) {
            const auto& v = reflectors[j];
            double proj = 0.0;
            for (std::size_t i = j; i < rows; ++i) proj += v[i - j] * col[i];
            proj *= 2.0;
            for (std::size_t i = j; i < rows; ++i) col[i] -= proj * v[i - j];
        }
        for (std::size_t i = 0; i < rows; ++i) out.q.at(i, c) = col[i];
    }
    return out;
}

namespace {

// One-sided Jacobi on a matrix with rows >= cols: orthogonalize columns,
// accumulating the right-rotations into V.
SmallSvd jacobi_svd_tall(const DenseMatrix& input) {
    const std::size_t rows = input.rows();
    const std::size_t cols = input.cols();
    DenseMatrix a = input;
    DenseMatrix v = DenseMatrix::identity(cols);

    constexpr double kTol = 1e-14;
    constexpr int kMaxSweeps = 100;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    app += a.at(i, p) * a.at(i, p);
                    aqq += a.at(i, q) * a.at(i, q);
                    apq += a.at(i, p) * a.at(i, q);
                }
                if (std::fabs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double ap = a.at(i, p), aq = a.at(i, q);
                    a.at(i, p) = c * ap - s * aq;
                    a.at(i, q) = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < cols; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double norm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) norm += a.at(i, j) * a.at(i, j);
        sigma[j] = std::sqrt(norm);
    }
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SmallSvd out;
    out.u = DenseMatrix(rows, cols);
    out.v = DenseMatrix(cols, cols);
    out.sigma.resize(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = sigma[src];
        if (sigma[src] > 0.0) {
            for (std::size_t i = 0; i < rows; ++i) out.u.at(i, j) = a.at(i, src) / sigma[src];
        }
        for (std::size_t i = 0; i < cols; ++i) out.v.at(i, j) = v.at(i, src);
    }
    return out;
}

}  // namespace

SmallSvd jacobi_svd(const DenseMatrix& a) {
    if (a.rows() == 0 || a.cols() == 0) return SmallSvd{DenseMatrix(a.rows(), 0), {},
                                                        DenseMatrix(a.cols(), 0)};
    if (a.rows() >= a.cols()) return jacobi_svd_tall(a);
    SmallSvd t = jacobi_svd_tall(a.transpose());
    return SmallSvd{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

std::vector<double> matrix_vector(const DenseMatrix& m, const std::vector<double>& x) {
    if (m.cols() != x.size()) throw ShapeError("matrix-vector shape mismatch");
    std::vector<double> y(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += m.at(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("dot product length mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double l2_norm(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace icegraph
