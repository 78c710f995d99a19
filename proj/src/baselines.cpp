#include "icegraph/baselines.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "icegraph/errors.hpp"

namespace icegraph {

std::vector<RankedResult> rank_top_k(std::vector<RankedResult> scored, std::size_t k) {
    std::sort(scored.begin(), scored.end(), [](const RankedResult& a, const RankedResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (scored.size() > k) scored.resize(k);
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = static_cast<int>(i) + 1;
    return scored;
}

namespace {

// Unbiased bounded draw; avoids implementation-defined std distributions.
std::uint64_t bounded(std::uint64_t bound, std::uint64_t& state) {
    auto next = [&state] {
        // splitmix64
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % bound;
}

}  // namespace

std::vector<std::string> baseline_random(const std::vector<std::string>& ids, std::size_t k,
                                         std::uint64_t seed) {
    if (k > ids.size()) {
        throw std::invalid_argument("cannot draw " + std::to_string(k) + " ids from " +
                                    std::to_string(ids.size()));
    }
    std::vector<std::string> pool = ids;
    std::vector<std::string> out;
    out.reserve(k);
    std::uint64_t state = seed;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + bounded(pool.size() - i, state);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> tokens;
    std::string token;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!token.empty()) {
            tokens.push_back(std::move(token));
            token.clear();
        }
    }
    if (!token.empty()) tokens.push_back(std::move(token));
    return tokens;
}

std::vector<RankedResult> baseline_bm25(const std::vector<ScoredDoc>& corpus,
                                        const std::string& query, std::size_t k) {
    constexpr double k1 = 1.5;
    constexpr double b = 0.75;

    const std::size_t n_docs = corpus.size();
    std::vector<std::unordered_map<std::string, std::size_t>> term_freq(n_docs);
    std::vector<std::size_t> doc_len(n_docs, 0);
    double total_len = 0.0;
    for (std::size_t d = 0; d < n_docs; ++d) {
        const auto tokens = tokenize_lower(corpus[d].text);
        doc_len[d] = tokens.size();
        total_len += static_cast<double>(tokens.size());
        for (const auto& t : tokens) ++term_freq[d][t];
    }
    const double avg_len = n_docs > 0 ? total_len / static_cast<double>(n_docs) : 0.0;

    std::unordered_set<std::string> seen;
    std::vector<std::string> query_terms;
    for (const auto& t : tokenize_lower(query)) {
        if (seen.insert(t).second) query_terms.push_back(t);
    }

    std::vector<RankedResult> scored;
    scored.reserve(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        double score = 0.0;
        for (const auto& term : query_terms) {
            auto it = term_freq[d].find(term);
            if (it == term_freq[d].end()) continue;
            std::size_t df = 0;
            for (std::size_t e = 0; e < n_docs; ++e) df += term_freq[e].count(term);
            const double idf = std::max(
                0.0, std::log((static_cast<double>(n_docs) - static_cast<double>(df) + 0.5) /
                              (static_cast<double>(df) + 0.5)));
            const double tf = static_cast<double>(it->second);
            const double denom =
                tf + k1 * (1.0 - b + b * static_cast<double>(doc_len[d]) /
                                         (avg_len > 0.0 ? avg_len : 1.0));
            score += idf * tf * (k1 + 1.0) / denom;
        }
        scored.push_back({corpus[d].id, score, 0});
    }
    return rank_top_k(std::move(scored), k);
}

namespace {

template <typename T>
double cosine_impl(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) throw DimensionError("cosine similarity length mismatch");
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    return cosine_impl(a, b);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_impl(a, b);
}

std::vector<RankedResult> baseline_dense(
    const std::vector<std::pair<std::string, std::vector<float>>>& corpus_vecs,
    const std::vector<float>& query_vec, std::size_t k) {
    std::vector<RankedResult> scored;
    scored.reserve(corpus_vecs.size());
    for (const auto& [id, vec] : corpus_vecs) {
        scored.push_back({id, cosine_similarity(vec, query_vec), 0});
    }
    return rank_top_k(std::move(scored), k);
}

std::size_t newline_count(const std::string& s) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\n') {
            ++count;
        } else if (s[i] == '\r') {
            ++count;
            if (i + 1 < s.size() && s[i + 1] == '\n') ++i;  // CRLF is one break
        }
    }
    return count;
}

std::vector<RankedResult> baseline_complexity(
    const std::vector<std::pair<std::string, std::string>>& answers, std::size_t k) {
    std::vector<RankedResult> scored;
    scored.reserve(answers.size());
    for (const auto& [id, answer] : answers) {
        scored.push_back({id, static_cast<double>(newline_count(answer)), 0});
    }
    return rank_top_k(std::move(scored), k);
}

std::vector<RankedResult> baseline_graph_sim(
    const std::vector<std::pair<std::string, std::vector<double>>>& corpus_embs,
    const std::vector<double>& query_emb, std::size_t k) {
    std::vector<RankedResult> scored;
    scored.reserve(corpus_embs.size());
    for (const auto& [id, emb] : corpus_embs) {
        scored.push_back({id, cosine_similarity(emb, query_emb), 0});
    }
    return rank_top_k(std::move(scored), k);
}

}  // namespace icegraph
