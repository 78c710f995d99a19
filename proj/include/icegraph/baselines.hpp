#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "icegraph/retrieval.hpp"

namespace icegraph {

// Sorts (id, score) pairs by descending score, ties by ascending id,
// assigns dense ranks from 1 and keeps the top k.
std::vector<RankedResult> rank_top_k(std::vector<RankedResult> scored, std::size_t k);

// Seeded selection of k distinct ids, order of draw preserved. Uses a
// fixed Fisher-Yates with rejection sampling so results do not depend on
// the standard library's distribution internals.
std::vector<std::string> baseline_random(const std::vector<std::string>& ids, std::size_t k,
                                         std::uint64_t seed);

struct ScoredDoc {
    std::string id;
    std::string text;
};

// Okapi BM25 with k1 = 1.5, b = 0.75 and the IDF floored at zero. Query
// terms are deduplicated; documents tokenize like the hash embedder
// (lowercase alphanumeric runs).
std::vector<RankedResult> baseline_bm25(const std::vector<ScoredDoc>& corpus,
                                        const std::string& query, std::size_t k);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Dense retrieval by cosine similarity over precomputed vectors.
std::vector<RankedResult> baseline_dense(
    const std::vector<std::pair<std::string, std::vector<float>>>& corpus_vecs,
    const std::vector<float>& query_vec, std::size_t k);

// Complexity ranking: more line breaks first; CRLF counts once.
std::vector<RankedResult> baseline_complexity(
    const std::vector<std::pair<std::string, std::string>>& answers, std::size_t k);

// Cosine ranking over whole-graph embeddings (mean-pooled propagated
// features).
std::vector<RankedResult> baseline_graph_sim(
    const std::vector<std::pair<std::string, std::vector<double>>>& corpus_embs,
    const std::vector<double>& query_emb, std::size_t k);

std::size_t newline_count(const std::string& s);

std::vector<std::string> tokenize_lower(const std::string& text);

}  // namespace icegraph
