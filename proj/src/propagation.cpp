#include "icegraph/propagation.hpp"

#include <cmath>
#include <stdexcept>

#include "icegraph/errors.hpp"

namespace icegraph {

void AggregationConfig::validate() const {
    if (!(lambda >= 0.0 && lambda < 1.0)) {
        throw std::invalid_argument("lambda must lie in [0, 1)");
    }
    if (hops < 1) throw std::invalid_argument("hops must be >= 1");
}

DenseMatrix adjacency_matrix(const ThoughtGraph& g) {
    const std::size_t n = g.nodes.size();
    DenseMatrix a(n, n);
    for (const auto& [from, to] : g.edges) {
        a.at(static_cast<std::size_t>(from), static_cast<std::size_t>(to)) = 1.0;
    }
    return a;
}

DenseMatrix backtrack_matrix(const ThoughtGraph& g) {
    const std::size_t n = g.nodes.size();
    std::vector<bool> has_parent(n, false);
    for (const auto& [from, to] : g.edges) {
        (void)from;
        has_parent[static_cast<std::size_t>(to)] = true;
    }
    DenseMatrix b(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        if (has_parent[j]) continue;
        for (std::size_t i = 0; i < n; ++i) b.at(i, j) = 1.0;
    }
    return b;
}

DenseMatrix sym_normalize(const DenseMatrix& m) {
    if (m.rows() != m.cols()) throw ShapeError("sym_normalize requires a square matrix");
    const std::size_t n = m.rows();
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) row_sum += m.at(i, j);
        inv_sqrt[i] = 1.0 / std::sqrt(1.0 + row_sum);
    }
    DenseMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double mij = m.at(i, j) + (i == j ? 1.0 : 0.0);
            out.at(i, j) = inv_sqrt[i] * mij * inv_sqrt[j];
        }
    }
    return out;
}

DenseMatrix propagation_matrix(const DenseMatrix& a_norm, const DenseMatrix& b_norm,
                               double lambda) {
    return linear_combination(1.0 - lambda, a_norm, lambda, b_norm);
}

DenseMatrix aggregate(const DenseMatrix& p, const DenseMatrix& x, int hops) {
    if (p.rows() != p.cols()) throw ShapeError("propagation matrix must be square");
    if (p.cols() != x.rows()) throw ShapeError("propagation/feature shape mismatch");
    if (hops < 1) throw std::invalid_argument("hops must be >= 1");
    DenseMatrix z = x;
    for (int h = 0; h < hops; ++h) z = multiply(p, z);
    return z;
}

DenseMatrix aggregate_features(const ThoughtGraph& g, const DenseMatrix& x,
                               const AggregationConfig& cfg) {
    cfg.validate();
    const DenseMatrix p = propagation_matrix(sym_normalize(adjacency_matrix(g)),
                                             sym_normalize(backtrack_matrix(g)), cfg.lambda);
    return aggregate(p, x, cfg.hops);
}

std::vector<double> graph_embedding(const ThoughtGraph& g, const DenseMatrix& x,
                                    const AggregationConfig& cfg) {
    if (g.nodes.empty()) throw EmptyGraphError("cannot embed a graph with no vertices");
    const DenseMatrix z = aggregate_features(g, x, cfg);
    std::vector<double> mean(z.cols(), 0.0);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.cols(); ++j) mean[j] += z.at(i, j);
    }
    for (double& v : mean) v /= static_cast<double>(z.rows());
    return mean;
}

}  // namespace icegraph
