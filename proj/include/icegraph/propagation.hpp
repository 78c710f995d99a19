#pragma once

#include <vector>

#include "icegraph/frr.hpp"
#include "icegraph/matrix.hpp"

namespace icegraph {

// Feature-propagation settings: mixing weight for the backtrack operator
// and number of propagation hops.
struct AggregationConfig {
    double lambda = 0.2;  // in [0, 1)
    int hops = 3;         // >= 1

    void validate() const;
    bool operator==(const AggregationConfig&) const = default;
};

// n x n 0/1 matrix with A[i][j] = 1 iff the graph has edge i -> j.
DenseMatrix adjacency_matrix(const ThoughtGraph& g);

// n x n 0/1 matrix whose column j is all ones exactly when vertex j has
// in-degree zero. Models returning to the starting facts of the problem.
DenseMatrix backtrack_matrix(const ThoughtGraph& g);

// D^{-1/2} (M + I) D^{-1/2} with D diagonal, D_ii = 1 + sum_j M_ij.
// Throws ShapeError when M is not square.
DenseMatrix sym_normalize(const DenseMatrix& m);

// Elementwise (1 - lambda) * a_norm + lambda * b_norm.
DenseMatrix propagation_matrix(const DenseMatrix& a_norm, const DenseMatrix& b_norm,
                               double lambda);

// Applies P to X `hops` times: P^hops X, computed by sequential left
// multiplication (graphs are tiny; no eigendecomposition).
DenseMatrix aggregate(const DenseMatrix& p, const DenseMatrix& x, int hops);

// Builds P for the graph and the config and applies it to X.
DenseMatrix aggregate_features(const ThoughtGraph& g, const DenseMatrix& x,
                               const AggregationConfig& cfg);

// Mean over rows of the aggregated features; one vector per graph.
// Throws EmptyGraphError on a graph with no vertices.
std::vector<double> graph_embedding(const ThoughtGraph& g, const DenseMatrix& x,
                                    const AggregationConfig& cfg);

}  // namespace icegraph
