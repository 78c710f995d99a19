#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "icegraph/embedding.hpp"
#include "icegraph/errors.hpp"
#include "nlohmann/json.hpp"
#include "test_support.hpp"

using namespace icegraph;

namespace {

std::filesystem::path temp_file(const std::string& stem) {
    static std::atomic<int> counter{0};
    return std::filesystem::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
}

// Deterministic fake service embedding: v[j] = ((len + j) % 7) - 3.
std::vector<float> service_vector(const std::string& text, std::size_t dim) {
    std::vector<float> out(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        out[j] = static_cast<float>(static_cast<int>((text.size() + j) % 7) - 3);
    }
    return out;
}

class EmbedServer {
public:
    explicit EmbedServer(std::size_t dim, int fail_first = 0, bool reverse_order = true,
                         std::size_t lie_dim = 0)
        : dim_(dim), fail_remaining_(fail_first), reverse_order_(reverse_order),
          lie_dim_(lie_dim) {
        server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            requests_.fetch_add(1);
            if (fail_remaining_.fetch_sub(1) > 0) {
                res.status = 500;
                return;
            }
            fail_remaining_.store(0);
            const auto body = nlohmann::json::parse(req.body);
            const auto& inputs = body.at("input");
            {
                std::lock_guard lock(mutex_);
                last_model_ = body.at("model").get<std::string>();
                batch_sizes_.push_back(inputs.size());
                if (auto it = req.headers.find("Authorization"); it != req.headers.end()) {
                    last_auth_ = it->second;
                }
            }
            const std::size_t emit_dim = lie_dim_ ? lie_dim_ : dim_;
            nlohmann::json data = nlohmann::json::array();
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                data.push_back({{"index", i},
                                {"embedding", service_vector(inputs[i].get<std::string>(),
                                                             emit_dim)}});
            }
            if (reverse_order_) std::reverse(data.begin(), data.end());
            res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        while (!server_.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }

    ~EmbedServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const {
        return "http://127.0.0.1:" + std::to_string(port_) + "/v1/embed";
    }
    int requests() const { return requests_.load(); }
    std::vector<std::size_t> batch_sizes() {
        std::lock_guard lock(mutex_);
        return batch_sizes_;
    }
    std::string last_model() {
        std::lock_guard lock(mutex_);
        return last_model_;
    }
    std::string last_auth() {
        std::lock_guard lock(mutex_);
        return last_auth_;
    }

private:
    std::size_t dim_;
    std::atomic<int> requests_{0};
    std::atomic<int> fail_remaining_;
    bool reverse_order_;
    std::size_t lie_dim_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mutex_;
    std::vector<std::size_t> batch_sizes_;
    std::string last_model_;
    std::string last_auth_;
};

EmbedderSpec remote_spec(const EmbedServer& server, std::size_t dim,
                         std::size_t max_batch = 64) {
    EmbedderSpec spec;
    spec.kind = EmbedderKind::Remote;
    spec.model_id = "test-encoder";
    spec.dim = dim;
    spec.endpoint = server.endpoint();
    spec.max_batch = max_batch;
    spec.timeout = std::chrono::milliseconds(2000);
    return spec;
}

}  // namespace

TEST_CASE("hash_embed basics") {
    SUBCASE("deterministic") {
        CHECK(hash_embed("three apples and a pear", 64) ==
              hash_embed("three apples and a pear", 64));
    }
    SUBCASE("unit norm") {
        for (const char* text : {"a", "a b c", "The Quick, Brown Fox!", "x1 y2 z3"}) {
            const auto v = hash_embed(text, 64);
            double norm = 0.0;
            for (float x : v) norm += static_cast<double>(x) * static_cast<double>(x);
            CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("zero-token input is the first basis vector") {
        const auto v = hash_embed("  .,;!  ", 16);
        CHECK(v[0] == 1.0f);
        for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i] == 0.0f);
    }
    SUBCASE("case and punctuation do not matter") {
        CHECK(hash_embed("Dave is Red.", 32) == hash_embed("dave is red", 32));
    }
    SUBCASE("width below 8 is rejected") {
        CHECK_THROWS_AS(hash_embed("x", 4), std::invalid_argument);
    }
    SUBCASE("always finite") {
        icegraph::testing::Rng rng(123);
        for (int i = 0; i < 100; ++i) {
            std::string text;
            const int len = icegraph::testing::uniform_int(rng, 0, 60);
            for (int c = 0; c < len; ++c) {
                text += static_cast<char>(icegraph::testing::uniform_int(rng, 1, 126));
            }
            for (float x : hash_embed(text, 32)) REQUIRE(std::isfinite(x));
        }
    }
}

namespace {

// Independent re-implementation of the signed hashing scheme, kept in the
// test so drifts in the library version are caught.
std::vector<double> reference_hash_embed(const std::string& text, std::size_t dim) {
    auto fnv = [](const std::string& s, std::uint64_t h) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    };
    std::vector<double> acc(dim, 0.0);
    std::string token;
    std::size_t tokens = 0;
    auto flush = [&] {
        if (token.empty()) return;
        const std::uint64_t bucket_hash = fnv(token, 14695981039346656037ULL);
        const std::uint64_t sign_hash = fnv(token, 0x9e3779b97f4a7c15ULL);
        acc[bucket_hash % dim] += (sign_hash & 1u) ? 1.0 : -1.0;
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
        acc.assign(dim, 0.0);
        acc[0] = 1.0;
        return acc;
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& v : acc) v /= norm;
    } else {
        acc.assign(dim, 0.0);
        acc[0] = 1.0;
    }
    return acc;
}

double cosine_f(const std::vector<float>& a, const std::vector<float>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    return num / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("hash_embed matches an independent reimplementation") {
    const std::string text_a = "alpha beta gamma delta";
    const std::string text_b = "epsilon zeta eta theta iota";
    const auto va = hash_embed(text_a, 64);
    const auto vb = hash_embed(text_b, 64);
    const auto ra = reference_hash_embed(text_a, 64);
    const auto rb = reference_hash_embed(text_b, 64);

    double ref_cos = 0.0, ref_na = 0.0, ref_nb = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        ref_cos += ra[i] * rb[i];
        ref_na += ra[i] * ra[i];
        ref_nb += rb[i] * rb[i];
    }
    ref_cos /= std::sqrt(ref_na * ref_nb);
    CHECK(cosine_f(va, vb) == doctest::Approx(ref_cos).epsilon(1e-6));

    for (std::size_t i = 0; i < 64; ++i) {
        REQUIRE(static_cast<double>(va[i]) == doctest::Approx(ra[i]).epsilon(1e-6));
    }
}

TEST_CASE("norm_bound") {
    SUBCASE("unit vectors give 1") {
        std::vector<EmbeddingVector> vecs = {{1.0f, 0.0f}, {0.0f, 1.0f}};
        CHECK(norm_bound(vecs) == doctest::Approx(1.0));
    }
    SUBCASE("picks the max squared norm") {
        std::vector<EmbeddingVector> vecs = {{3.0f, 4.0f}, {0.0f, 1.0f}};
        CHECK(norm_bound(vecs) == doctest::Approx(25.0));
    }
    SUBCASE("matches a naive scan") {
        icegraph::testing::Rng rng(321);
        std::vector<EmbeddingVector> vecs;
        for (int i = 0; i < 40; ++i) {
            EmbeddingVector v(8);
            for (auto& x : v) x = static_cast<float>(icegraph::testing::uniform(rng, -2, 2));
            vecs.push_back(std::move(v));
        }
        double naive = 0.0;
        for (const auto& v : vecs) {
            double sq = 0.0;
            for (float x : v) sq += static_cast<double>(x) * x;
            naive = std::max(naive, sq);
        }
        CHECK(norm_bound(vecs) == doctest::Approx(naive).epsilon(1e-12));
    }
    SUBCASE("empty input") {
        CHECK_THROWS_AS(norm_bound({}), EmptyInputError);
    }
}

TEST_CASE("embed_batch with the hash provider") {
    EmbedderSpec spec;  // defaults to hash
    spec.dim = 32;
    Embedder embedder(spec);
    CHECK(embedder.embed_batch({}).empty());
    const auto out = embedder.embed_batch({"same words", "other", "same words"});
    REQUIRE(out.size() == 3);
    CHECK(out[0] == out[2]);
    CHECK(out[0] == hash_embed("same words", 32));
}

TEST_CASE("remote embedding client") {
    constexpr std::size_t kDim = 12;

    SUBCASE("wire order is reconciled by the index field") {
        EmbedServer server(kDim);  // serves entries reversed
        Embedder embedder(remote_spec(server, kDim));
        const std::vector<std::string> texts = {"a", "bb", "ccc", "dddd"};
        const auto out = embedder.embed_batch(texts);
        REQUIRE(out.size() == texts.size());
        for (std::size_t i = 0; i < texts.size(); ++i) {
            REQUIRE(out[i] == service_vector(texts[i], kDim));
        }
        CHECK(server.last_model() == "test-encoder");
    }

    SUBCASE("requests split into max_batch chunks, order preserved") {
        EmbedServer server(kDim);
        Embedder embedder(remote_spec(server, kDim, 2));
        const std::vector<std::string> texts = {"t1", "t22", "t333", "t4444", "t55555"};
        const auto out = embedder.embed_batch(texts);
        for (std::size_t i = 0; i < texts.size(); ++i) {
            REQUIRE(out[i] == service_vector(texts[i], kDim));
        }
        CHECK(server.batch_sizes() == std::vector<std::size_t>{2, 2, 1});
    }

    SUBCASE("wrong response width raises DimensionError") {
        EmbedServer server(kDim, 0, false, kDim - 1);
        Embedder embedder(remote_spec(server, kDim));
        CHECK_THROWS_AS(embedder.embed_batch({"x"}), DimensionError);
    }

    SUBCASE("transient failures are retried") {
        EmbedServer server(kDim, 2);  // two 500s, then healthy
        Embedder embedder(remote_spec(server, kDim));
        const auto out = embedder.embed_batch({"retry me"});
        CHECK(out[0] == service_vector("retry me", kDim));
        CHECK(server.requests() == 3);
    }

    SUBCASE("hard client errors do not retry") {
        EmbedServer server(kDim);
        EmbedderSpec spec = remote_spec(server, kDim);
        spec.endpoint = server.endpoint() + "-missing";
        Embedder embedder(spec);
        CHECK_THROWS_AS(embedder.embed_batch({"x"}), TransportError);
        CHECK(server.requests() == 0);  // 404 from the server framework
    }

    SUBCASE("unreachable endpoint exhausts retries") {
        EmbedderSpec spec;
        spec.kind = EmbedderKind::Remote;
        spec.model_id = "m";
        spec.dim = kDim;
        spec.endpoint = "http://127.0.0.1:9/v1/embed";  // discard port, nothing listens
        spec.timeout = std::chrono::milliseconds(100);
        Embedder embedder(spec);
        CHECK_THROWS_AS(embedder.embed_batch({"x"}), TransportError);
    }

    SUBCASE("bearer token from the environment") {
        EmbedServer server(kDim);
        setenv("ICEGRAPH_EMBED_TOKEN", "sesame", 1);
        Embedder embedder(remote_spec(server, kDim));
        embedder.embed_batch({"x"});
        unsetenv("ICEGRAPH_EMBED_TOKEN");
        CHECK(server.last_auth() == "Bearer sesame");
    }
}

TEST_CASE("embedding cache") {
    constexpr std::size_t kDim = 12;

    SUBCASE("cache on vs off is bitwise identical, and hits skip the service") {
        const auto cache_path = temp_file("emb_cache");
        EmbedServer server(kDim);
        const std::vector<std::string> texts = {"one", "two", "three"};

        Embedder cached(remote_spec(server, kDim), cache_path);
        const auto first = cached.embed_batch(texts);
        const int after_first = server.requests();

        Embedder uncached(remote_spec(server, kDim));
        const auto plain = uncached.embed_batch(texts);
        REQUIRE(first == plain);

        // A fresh embedder over the same cache file never hits the wire.
        Embedder reloaded(remote_spec(server, kDim), cache_path);
        const int before = server.requests();
        const auto again = reloaded.embed_batch(texts);
        CHECK(server.requests() == before);
        CHECK(again == first);
        CHECK(after_first >= 1);
        std::filesystem::remove(cache_path);
    }

    SUBCASE("corrupt cache file is ignored, not fatal") {
        const auto cache_path = temp_file("emb_cache_bad");
        {
            std::ofstream f(cache_path, std::ios::binary);
            f << "this is not a cache";
        }
        EmbedServer server(kDim);
        Embedder embedder(remote_spec(server, kDim), cache_path);
        const auto out = embedder.embed_batch({"x"});
        CHECK(out[0] == service_vector("x", kDim));
        std::filesystem::remove(cache_path);
    }

    SUBCASE("store and reload through the file") {
        const auto cache_path = temp_file("emb_cache_rt");
        const CacheKey key = embedding_cache_key("m", 4, "text");
        {
            EmbeddingCache cache(cache_path);
            cache.store(key, {1.0f, -2.0f, 0.5f, 3.25f});
        }
        EmbeddingCache cache(cache_path);
        const auto hit = cache.lookup(key);
        REQUIRE(hit.has_value());
        CHECK(*hit == EmbeddingVector{1.0f, -2.0f, 0.5f, 3.25f});
        CHECK(!cache.lookup(embedding_cache_key("m", 4, "other")).has_value());
        std::filesystem::remove(cache_path);
    }
}

TEST_CASE("anonymize_identifiers") {
    CHECK(anonymize_identifiers("total = [add](x, total)") == "a = [b](c, a)");
    CHECK(anonymize_identifiers("36 + 4") == "36 + 4");
    CHECK(anonymize_identifiers("") == "");
    // 30 distinct identifiers overflow the single-letter range.
    std::string text, expect;
    for (int i = 0; i < 30; ++i) {
        text += "ident" + std::to_string(i) + " ";
        expect += (i < 26) ? std::string(1, static_cast<char>('a' + i))
                           : "v" + std::to_string(i);
        expect += " ";
    }
    CHECK(anonymize_identifiers(text) == expect);
}
