#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace icegraph {

enum class EmbedderKind { Remote, Hash };

// Which embedding provider to use and how. `dim` is the feature width n_f
// shared by every vector the provider returns.
struct EmbedderSpec {
    EmbedderKind kind = EmbedderKind::Hash;
    std::string model_id = "hash-v1";
    std::size_t dim = 256;
    std::string endpoint;  // required for remote
    std::chrono::milliseconds timeout{10000};
    std::size_t max_batch = 64;

    void validate() const;
    bool operator==(const EmbedderSpec&) const = default;
};

using EmbeddingVector = std::vector<float>;

// Deterministic offline embedder: lowercase tokens split on anything
// non-alphanumeric, each token hashed to a signed bucket, counts
// L2-normalized. Zero-token input returns the unit vector e_0. Never
// produces NaN/Inf.
EmbeddingVector hash_embed(const std::string& text, std::size_t dim);

// Max of v^T v over the inputs; the additive offset that keeps the
// inner-product distance positive. Constant across candidates, so it only
// matters for reported log-densities, never for ranking.
double norm_bound(const std::vector<EmbeddingVector>& vectors);

// Optional pre-pass that renames identifier tokens to short symbols
// (a, b, ..., z, v26, ...) in first-appearance order.
std::string anonymize_identifiers(const std::string& text);

using CacheKey = std::array<std::uint8_t, 32>;

CacheKey embedding_cache_key(const std::string& model_id, std::size_t dim,
                             const std::string& text);

// Append-only embedding cache: in-memory map mirrored to a binary file of
// {key: 32 bytes, dim: u32 LE, dim x f32 LE} records. A corrupt or
// truncated file is read up to the damage and then ignored with a warning.
class EmbeddingCache {
public:
    EmbeddingCache() = default;
    explicit EmbeddingCache(std::filesystem::path file);

    std::optional<EmbeddingVector> lookup(const CacheKey& key) const;
    void store(const CacheKey& key, const EmbeddingVector& vec);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<CacheKey, EmbeddingVector> entries_;
    std::filesystem::path file_;
    bool persistent_ = false;
};

// Batched embedding frontend. Remote calls go through a chat-completions
// style POST {model, input:[...]} -> {data:[{index, embedding}]} endpoint
// with bearer auth from ICEGRAPH_EMBED_TOKEN, retried with exponential
// backoff (5 attempts). Hash embedding is computed locally.
class Embedder {
public:
    explicit Embedder(EmbedderSpec spec,
                      std::optional<std::filesystem::path> cache_path = std::nullopt,
                      int max_inflight = 4);
    ~Embedder();

    // One vector per text, order preserving; requests are split into
    // chunks of at most spec.max_batch. Throws TransportError after
    // exhausted retries, DimensionError on a wrong-length response.
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts);

    const EmbedderSpec& spec() const { return spec_; }

private:
    std::vector<EmbeddingVector> fetch_remote(const std::vector<std::string>& texts);

    EmbedderSpec spec_;
    std::unique_ptr<EmbeddingCache> cache_;
    std::unique_ptr<class InflightGate> gate_;
};

}  // namespace icegraph
