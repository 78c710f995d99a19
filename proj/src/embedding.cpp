#include "icegraph/embedding.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

#include "icegraph/errors.hpp"
#include "icegraph/gate.hpp"
#include "httplib.h"
#include "nlohmann/json.hpp"

namespace icegraph {

namespace {

// FNV-1a, two independent streams (bucket and sign) via distinct seeds.
std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr std::uint64_t kBucketSeed = 14695981039346656037ULL;
constexpr std::uint64_t kSignSeed = 0x9e3779b97f4a7c15ULL;

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    append_u32_le(out, bits);
}

float read_f32_le(const unsigned char* p) {
    const std::uint32_t bits = read_u32_le(p);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

}  // namespace

void EmbedderSpec::validate() const {
    if (dim == 0) throw std::invalid_argument("embedder dim must be positive");
    if (max_batch == 0) throw std::invalid_argument("max_batch must be positive");
    if (kind == EmbedderKind::Remote && endpoint.empty()) {
        throw std::invalid_argument("remote embedder requires an endpoint");
    }
    if (kind == EmbedderKind::Hash && dim < 8) {
        throw std::invalid_argument("hash embedder requires dim >= 8");
    }
}

EmbeddingVector hash_embed(const std::string& text, std::size_t dim) {
    if (dim < 8) throw std::invalid_argument("hash embedder requires dim >= 8");
    EmbeddingVector vec(dim, 0.0f);
    std::string token;
    std::size_t tokens = 0;
    auto flush = [&] {
        if (token.empty()) return;
        const std::size_t bucket = fnv1a(token, kBucketSeed) % dim;
        const float sign = (fnv1a(token, kSignSeed) & 1u) ? 1.0f : -1.0f;
        vec[bucket] += sign;
        token.clear();
        ++tokens;
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    if (tokens == 0) {
        vec[0] = 1.0f;
        return vec;
    }
    double norm = 0.0;
    for (float v : vec) norm += static_cast<double>(v) * static_cast<double>(v);
    norm = std::sqrt(norm);
    if (norm == 0.0) {  // all signed counts cancelled
        vec.assign(dim, 0.0f);
        vec[0] = 1.0f;
        return vec;
    }
    for (float& v : vec) v = static_cast<float>(v / norm);
    return vec;
}

double norm_bound(const std::vector<EmbeddingVector>& vectors) {
    if (vectors.empty()) throw EmptyInputError("norm_bound requires at least one vector");
    double best = 0.0;
    for (const auto& v : vectors) {
        double sq = 0.0;
        for (float x : v) sq += static_cast<double>(x) * static_cast<double>(x);
        best = std::max(best, sq);
    }
    return best;
}

std::string anonymize_identifiers(const std::string& text) {
    std::map<std::string, std::string> names;
    auto symbol_for = [&](const std::string& ident) -> const std::string& {
        auto it = names.find(ident);
        if (it != names.end()) return it->second;
        const std::size_t n = names.size();
        std::string sym = (n < 26) ? std::string(1, static_cast<char>('a' + n))
                                   : "v" + std::to_string(n);
        return names.emplace(ident, std::move(sym)).first->second;
    };

    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
                ++j;
            }
            out += symbol_for(text.substr(i, j - i));
            i = j;
        } else {
            out += c;
            ++i;
        }
    }
    return out;
}

CacheKey embedding_cache_key(const std::string& model_id, std::size_t dim,
                             const std::string& text) {
    std::string payload = model_id;
    payload.push_back('\0');
    payload += std::to_string(dim);
    payload.push_back('\0');
    payload += text;

    CacheKey key{};
    unsigned int len = 0;
    EVP_Digest(payload.data(), payload.size(), key.data(), &len, EVP_sha256(), nullptr);
    return key;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path file)
    : file_(std::move(file)), persistent_(true) {
    std::ifstream in(file_, std::ios::binary);
    if (!in) return;  // nothing cached yet
    std::vector<unsigned char> header(36);
    while (in.read(reinterpret_cast<char*>(header.data()), 36)) {
        CacheKey key{};
        std::memcpy(key.data(), header.data(), 32);
        const std::uint32_t dim = read_u32_le(header.data() + 32);
        if (dim == 0 || dim > (1u << 20)) {
            std::fprintf(stderr, "warning: embedding cache %s corrupt, ignoring rest\n",
                         file_.string().c_str());
            return;
        }
        std::vector<unsigned char> body(static_cast<std::size_t>(dim) * 4);
        if (!in.read(reinterpret_cast<char*>(body.data()),
                     static_cast<std::streamsize>(body.size()))) {
            std::fprintf(stderr, "warning: embedding cache %s truncated, ignoring rest\n",
                         file_.string().c_str());
            return;
        }
        EmbeddingVector vec(dim);
        for (std::uint32_t i = 0; i < dim; ++i) vec[i] = read_f32_le(body.data() + 4 * i);
        entries_[key] = std::move(vec);
    }
}

std::optional<EmbeddingVector> EmbeddingCache::lookup(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::store(const CacheKey& key, const EmbeddingVector& vec) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(key, vec).second) return;  // already present
    if (!persistent_) return;
    std::string record;
    record.append(reinterpret_cast<const char*>(key.data()), key.size());
    append_u32_le(record, static_cast<std::uint32_t>(vec.size()));
    for (float f : vec) append_f32_le(record, f);
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    if (out) out.write(record.data(), static_cast<std::streamsize>(record.size()));
}

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

namespace {

struct ParsedUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("malformed endpoint URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

httplib::Headers bearer_headers(const char* env_var) {
    httplib::Headers headers;
    if (const char* token = std::getenv(env_var); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    return headers;
}

constexpr int kMaxAttempts = 5;
constexpr std::chrono::milliseconds kBackoffBase{50};

}  // namespace

Embedder::Embedder(EmbedderSpec spec, std::optional<std::filesystem::path> cache_path,
                   int max_inflight)
    : spec_(std::move(spec)), gate_(std::make_unique<InflightGate>(max_inflight)) {
    spec_.validate();
    if (cache_path) cache_ = std::make_unique<EmbeddingCache>(*cache_path);
}

Embedder::~Embedder() = default;

std::vector<EmbeddingVector> Embedder::fetch_remote(const std::vector<std::string>& texts) {
    const ParsedUrl url = split_url(spec_.endpoint);
    nlohmann::json body = {{"model", spec_.model_id}, {"input", texts}};
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(kBackoffBase * (1 << (attempt - 1)));

        httplib::Result res;
        {
            InflightSlot slot(*gate_);
            httplib::Client client(url.base);
            client.set_connection_timeout(spec_.timeout);
            client.set_read_timeout(spec_.timeout);
            res = client.Post(url.path, bearer_headers("ICEGRAPH_EMBED_TOKEN"), payload,
                              "application/json");
        }
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "server returned status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw TransportError("embedding service rejected request with status " +
                                 std::to_string(res->status));
        }

        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("unparseable response: ") + e.what();
            continue;
        }
        std::vector<EmbeddingVector> out(texts.size());
        std::vector<bool> filled(texts.size(), false);
        try {
            for (const auto& item : parsed.at("data")) {
                const std::size_t idx = item.at("index").get<std::size_t>();
                if (idx >= texts.size()) throw TransportError("response index out of range");
                const auto& emb = item.at("embedding");
                EmbeddingVector vec;
                vec.reserve(emb.size());
                for (const auto& x : emb) vec.push_back(x.get<float>());
                if (vec.size() != spec_.dim) {
                    throw DimensionError("embedding service returned " +
                                         std::to_string(vec.size()) + " floats, expected " +
                                         std::to_string(spec_.dim));
                }
                out[idx] = std::move(vec);
                filled[idx] = true;
            }
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("malformed response body: ") + e.what();
            continue;
        }
        for (bool f : filled) {
            if (!f) throw TransportError("embedding service response missing entries");
        }
        return out;
    }
    throw TransportError("embedding request failed after " + std::to_string(kMaxAttempts) +
                         " attempts: " + last_error);
}

std::vector<EmbeddingVector> Embedder::embed_batch(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};

    if (spec_.kind == EmbedderKind::Hash) {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(hash_embed(t, spec_.dim));
        return out;
    }

    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<CacheKey> keys(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        keys[i] = embedding_cache_key(spec_.model_id, spec_.dim, texts[i]);
        if (cache_) {
            if (auto hit = cache_->lookup(keys[i])) {
                out[i] = std::move(*hit);
                continue;
            }
        }
        missing.push_back(i);
    }

    for (std::size_t start = 0; start < missing.size(); start += spec_.max_batch) {
        const std::size_t end = std::min(missing.size(), start + spec_.max_batch);
        std::vector<std::string> chunk;
        chunk.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) chunk.push_back(texts[missing[k]]);
        std::vector<EmbeddingVector> fetched = fetch_remote(chunk);
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t idx = missing[k];
            if (cache_) cache_->store(keys[idx], fetched[k - start]);
            out[idx] = std::move(fetched[k - start]);
        }
    }
    return out;
}

}  // namespace icegraph
