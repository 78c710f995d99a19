#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icegraph/embedding.hpp"
#include "icegraph/frr.hpp"
#include "icegraph/matrix.hpp"
#include "icegraph/propagation.hpp"

namespace icegraph {

// Raw node embeddings X (one row per vertex) and their propagated
// counterpart Z for a single thought graph.
struct GraphFeatures {
    DenseMatrix x;
    DenseMatrix z;
};

// Rank-1 thought pattern of one candidate: unit vectors with
// sigma = alpha^T X^T Z beta, the top singular value of X^T Z.
// Sign convention: the largest-magnitude entry of alpha is positive.
struct CandidateParams {
    std::vector<double> alpha;
    std::vector<double> beta;
    double sigma = 0.0;
};

struct CandidateInput {
    std::string id;
    std::string question;
    std::string answer;
    std::string frr;
};

struct CandidateRecord {
    std::string id;
    std::string question;
    std::string answer;
    std::string frr;
    bool degraded = false;  // FRR unusable; excluded from bilinear scoring
    CandidateParams params;
};

// Persisted candidate collection together with the exact embedder and
// aggregation config that produced it.
struct Index {
    int version = 1;
    EmbedderSpec embedder;
    AggregationConfig agg;
    std::vector<CandidateRecord> records;
};

struct RankedResult {
    std::string id;
    double score = 0.0;
    int rank = 0;  // dense from 1, descending score, ties by ascending id
};

struct BuildOptions {
    bool prune_numeric = false;
};

// Embeds each vertex's text into a row of X and propagates to Z.
// Throws EmptyGraphError on a graph with no vertices.
GraphFeatures graph_features(const ThoughtGraph& g, Embedder& embedder,
                             const AggregationConfig& cfg);

// Closed-form rank-1 fit: (alpha, beta) are the singular pair of the top
// singular value of X^T Z. The n_f x n_f product is never formed; X^T and
// Z^T are thin-QR factored and the SVD runs on the small core R_x R_z^T.
// Throws DegenerateError when X^T Z is numerically zero.
CandidateParams estimate_params(const GraphFeatures& f);

// alpha^T (X^q)^T Z^q beta, evaluated as (X^q alpha) . (Z^q beta).
double bilinear_score(const CandidateParams& p, const GraphFeatures& fq);

// Reported log-density up to the per-vertex normalization constants:
// -n * offset + alpha^T X^T Z beta. Diagnostics only; the offset is
// constant across candidates so ranking ignores it.
double log_density(const CandidateParams& p, const GraphFeatures& fq, double offset);

// One record per candidate, in input order. Candidates whose FRR cannot be
// turned into parameters are flagged degraded (still usable by text
// baselines). Throws only when every candidate fails, or on
// infrastructure errors (transport, dimension).
Index build_index(const std::vector<CandidateInput>& candidates, Embedder& embedder,
                  const AggregationConfig& cfg, const BuildOptions& opts = {});

// Top-k by bilinear score, descending, ties by ascending id; k past the
// end returns everything. Throws EmptyIndexError when no scorable record
// exists.
std::vector<RankedResult> retrieve(const Index& index, const GraphFeatures& fq, std::size_t k);

// S_ij = bilinear_score(params_i, features_j): row i scores candidate i as
// an in-context example for query j. Any per-record failure propagates.
DenseMatrix score_matrix(const std::vector<CandidateInput>& candidates, Embedder& embedder,
                         const AggregationConfig& cfg, const BuildOptions& opts = {});

// Linearly rescales all entries to [0, 1], then forces the diagonal to 1.
DenseMatrix rescale_unit_diagonal(const DenseMatrix& s);

struct RetrievalOutcome {
    std::vector<RankedResult> results;
    bool fallback = false;  // dense text retrieval was used instead
};

// Full query path: parse the FRR, featurize, score. A missing/unparseable
// FRR or an empty graph degrades to dense cosine retrieval over the
// indexed question texts, flagged in the outcome.
RetrievalOutcome retrieve_for_query(const Index& index, Embedder& embedder,
                                    const std::string& question,
                                    const std::optional<std::string>& frr, std::size_t k,
                                    const BuildOptions& opts = {});

// Throws ConfigMismatchError unless the index was built under exactly this
// embedder spec and aggregation config.
void ensure_compatible(const Index& index, const EmbedderSpec& spec,
                       const AggregationConfig& cfg);

void save_index(const Index& index, const std::filesystem::path& path);
Index load_index(const std::filesystem::path& path);

// Candidate JSONL: one object per line {id, question, answer, frr?}.
std::vector<CandidateInput> load_candidates(const std::filesystem::path& path);

}  // namespace icegraph
