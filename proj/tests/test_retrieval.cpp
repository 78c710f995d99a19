#include <unistd.h>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "icegraph/baselines.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/linalg.hpp"
#include "icegraph/retrieval.hpp"
#include "test_support.hpp"

using namespace icegraph;
namespace tst = icegraph::testing;

namespace {

std::filesystem::path temp_file(const std::string& stem) {
    static std::atomic<int> counter{0};
    return std::filesystem::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
}

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out(static_cast<long>(i), static_cast<long>(j)) = m.at(i, j);
    return out;
}

// Brute-force reference: explicitly form the n_f x n_f product X^T Z.
Eigen::MatrixXd explicit_xtz(const GraphFeatures& f) {
    return to_eigen(f.x).transpose() * to_eigen(f.z);
}

GraphFeatures random_features(tst::Rng& rng, std::size_t n, std::size_t nf) {
    GraphFeatures f;
    f.x = tst::random_matrix(rng, n, nf);
    f.z = tst::random_matrix(rng, n, nf);
    return f;
}

std::vector<double> random_unit(tst::Rng& rng, std::size_t nf) {
    std::vector<double> v(nf);
    for (auto& x : v) x = tst::uniform(rng, -1.0, 1.0);
    const double norm = l2_norm(v);
    for (auto& x : v) x /= norm;
    return v;
}

std::vector<CandidateInput> synthetic_candidates(tst::Rng& rng, std::size_t count) {
    std::vector<CandidateInput> out;
    for (std::size_t i = 0; i < count; ++i) {
        CandidateInput cand;
        char buf[8];
        std::snprintf(buf, sizeof(buf), "c%03zu", i);
        cand.id = buf;
        cand.question = "How many widgets does factory " + std::to_string(i) +
                        " ship per day under plan " + std::to_string(i % 7) + "?";
        cand.answer = "They ship " + std::to_string(3 * i + 1) + " widgets.\n#### " +
                      std::to_string(3 * i + 1);
        cand.frr = tst::synthetic_frr(rng);
        out.push_back(std::move(cand));
    }
    return out;
}

EmbedderSpec hash_spec(std::size_t dim = 32) {
    EmbedderSpec spec;
    spec.dim = dim;
    return spec;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("graph_features") {
    Embedder embedder(hash_spec());
    const AggregationConfig cfg{0.2, 3};

    SUBCASE("single vertex: X and Z are that one embedding row") {
        const ThoughtGraph g = build_graph(parse_frr("a = 1", ParseMode::Strict));
        const GraphFeatures f = graph_features(g, embedder, cfg);
        REQUIRE(f.x.rows() == 1);
        REQUIRE(f.x.cols() == 32);
        CHECK(max_abs_difference(f.x, f.z) < 1e-15);
        const auto emb = hash_embed("a", 32);
        for (std::size_t j = 0; j < 32; ++j) {
            CHECK(f.x.at(0, j) == doctest::Approx(emb[j]).epsilon(1e-9));
        }
    }

    SUBCASE("chain at lambda 0, one hop: Z equals the normalized-adjacency product") {
        const ThoughtGraph g = build_graph(parse_frr("b = [f](a)", ParseMode::Strict));
        const GraphFeatures f = graph_features(g, embedder, {0.0, 1});
        const DenseMatrix a_norm = sym_normalize(adjacency_matrix(g));
        CHECK(max_abs_difference(f.z, multiply(a_norm, f.x)) < 1e-12);
    }

    SUBCASE("permuting vertex order permutes rows") {
        const ThoughtGraph g1 = build_graph(parse_frr("c = [f](a, b)", ParseMode::Strict));
        const ThoughtGraph g2 = build_graph(parse_frr("c = [f](b, a)", ParseMode::Strict));
        const GraphFeatures f1 = graph_features(g1, embedder, cfg);
        const GraphFeatures f2 = graph_features(g2, embedder, cfg);
        for (std::size_t j = 0; j < 32; ++j) {
            CHECK(f1.x.at(0, j) == doctest::Approx(f2.x.at(1, j)).epsilon(1e-12));
            CHECK(f1.z.at(0, j) == doctest::Approx(f2.z.at(1, j)).epsilon(1e-12));
        }
    }

    SUBCASE("empty graph") {
        CHECK_THROWS_AS(graph_features(ThoughtGraph{}, embedder, cfg), EmptyGraphError);
    }
}

TEST_CASE("estimate_params") {
    SUBCASE("single basis row gives that basis pair") {
        GraphFeatures f;
        f.x = DenseMatrix(1, 16);
        f.x.at(0, 0) = 1.0;
        f.z = f.x;
        const CandidateParams p = estimate_params(f);
        CHECK(p.sigma == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p.alpha[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p.beta[0] == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t i = 1; i < 16; ++i) {
            CHECK(p.alpha[i] == doctest::Approx(0.0).epsilon(1e-12));
        }
    }

    SUBCASE("agrees with a dense SVD of the explicitly formed product") {
        tst::Rng rng(10001);
        for (int iter = 0; iter < 120; ++iter) {
            const std::size_t n = 1 + static_cast<std::size_t>(tst::uniform_int(rng, 0, 9));
            const std::size_t nf = 8 + static_cast<std::size_t>(tst::uniform_int(rng, 0, 56));
            const GraphFeatures f = random_features(rng, n, nf);
            const CandidateParams p = estimate_params(f);

            const Eigen::MatrixXd m = explicit_xtz(f);
            const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
            const double sigma_max = svd.singularValues()(0);
            REQUIRE(p.sigma == doctest::Approx(sigma_max).epsilon(1e-9));

            // alpha^T (X^T Z) beta equals the top singular value.
            Eigen::VectorXd alpha(nf), beta(nf);
            for (std::size_t i = 0; i < nf; ++i) {
                alpha(static_cast<long>(i)) = p.alpha[i];
                beta(static_cast<long>(i)) = p.beta[i];
            }
            REQUIRE(alpha.transpose() * m * beta ==
                    doctest::Approx(sigma_max).epsilon(1e-9));
            REQUIRE(l2_norm(p.alpha) == doctest::Approx(1.0).epsilon(1e-9));
            REQUIRE(l2_norm(p.beta) == doctest::Approx(1.0).epsilon(1e-9));

            // No random unit pair beats the estimate.
            for (int pair = 0; pair < 50; ++pair) {
                const auto u = random_unit(rng, nf);
                const auto v = random_unit(rng, nf);
                Eigen::VectorXd ue(nf), ve(nf);
                for (std::size_t i = 0; i < nf; ++i) {
                    ue(static_cast<long>(i)) = u[i];
                    ve(static_cast<long>(i)) = v[i];
                }
                REQUIRE(static_cast<double>(ue.transpose() * m * ve) <= p.sigma + 1e-9);
            }
        }
    }

    SUBCASE("feature scaling leaves the vectors fixed and scales sigma") {
        tst::Rng rng(10002);
        const GraphFeatures f = random_features(rng, 6, 24);
        GraphFeatures scaled;
        scaled.x = f.x;
        scaled.z = f.z;
        for (auto& v : scaled.x.data()) v *= 10.0;
        for (auto& v : scaled.z.data()) v *= 10.0;
        const CandidateParams p1 = estimate_params(f);
        const CandidateParams p2 = estimate_params(scaled);
        CHECK(p2.sigma == doctest::Approx(100.0 * p1.sigma).epsilon(1e-9));
        for (std::size_t i = 0; i < 24; ++i) {
            CHECK(p2.alpha[i] == doctest::Approx(p1.alpha[i]).epsilon(1e-9));
            CHECK(p2.beta[i] == doctest::Approx(p1.beta[i]).epsilon(1e-9));
        }
    }

    SUBCASE("sign convention: the largest-magnitude alpha entry is positive") {
        tst::Rng rng(10003);
        for (int iter = 0; iter < 50; ++iter) {
            const GraphFeatures f = random_features(rng, 4, 16);
            const CandidateParams p = estimate_params(f);
            double best = 0.0;
            for (double a : p.alpha) best = std::max(best, std::fabs(a));
            bool found_positive = false;
            for (double a : p.alpha) {
                if (std::fabs(a) == best && a > 0.0) found_positive = true;
            }
            REQUIRE(found_positive);
        }
    }

    SUBCASE("numerically zero product is degenerate") {
        GraphFeatures f;
        f.x = DenseMatrix(3, 16);
        f.z = DenseMatrix(3, 16);
        CHECK_THROWS_AS(estimate_params(f), DegenerateError);
    }

    SUBCASE("shape mismatch") {
        GraphFeatures f;
        f.x = DenseMatrix(3, 16);
        f.z = DenseMatrix(2, 16);
        CHECK_THROWS_AS(estimate_params(f), ShapeError);
    }
}

TEST_CASE("bilinear_score") {
    SUBCASE("basis case") {
        CandidateParams p;
        p.alpha.assign(8, 0.0);
        p.beta.assign(8, 0.0);
        p.alpha[0] = 1.0;
        p.beta[0] = 1.0;
        GraphFeatures fq;
        fq.x = DenseMatrix(1, 8);
        fq.x.at(0, 0) = 1.0;
        fq.z = fq.x;
        CHECK(bilinear_score(p, fq) == doctest::Approx(1.0).epsilon(1e-15));
    }

    SUBCASE("joint sign flip is exactly neutral") {
        tst::Rng rng(10004);
        const GraphFeatures fq = random_features(rng, 5, 16);
        CandidateParams p;
        p.alpha = random_unit(rng, 16);
        p.beta = random_unit(rng, 16);
        CandidateParams flipped = p;
        for (auto& v : flipped.alpha) v = -v;
        for (auto& v : flipped.beta) v = -v;
        CHECK(bilinear_score(p, fq) == bilinear_score(flipped, fq));  // bitwise
    }

    SUBCASE("matches the naive dense evaluation") {
        tst::Rng rng(10005);
        for (int iter = 0; iter < 100; ++iter) {
            const std::size_t n = 1 + static_cast<std::size_t>(tst::uniform_int(rng, 0, 7));
            const std::size_t nf = 8 + static_cast<std::size_t>(tst::uniform_int(rng, 0, 24));
            const GraphFeatures fq = random_features(rng, n, nf);
            CandidateParams p;
            p.alpha = random_unit(rng, nf);
            p.beta = random_unit(rng, nf);

            const Eigen::MatrixXd m = explicit_xtz(fq);
            Eigen::VectorXd alpha(nf), beta(nf);
            for (std::size_t i = 0; i < nf; ++i) {
                alpha(static_cast<long>(i)) = p.alpha[i];
                beta(static_cast<long>(i)) = p.beta[i];
            }
            const double naive = alpha.transpose() * m * beta;
            REQUIRE(bilinear_score(p, fq) == doctest::Approx(naive).epsilon(1e-9));
        }
    }

    SUBCASE("dimension mismatch") {
        CandidateParams p;
        p.alpha.assign(8, 0.0);
        p.beta.assign(8, 0.0);
        GraphFeatures fq;
        fq.x = DenseMatrix(1, 16);
        fq.z = DenseMatrix(1, 16);
        CHECK_THROWS_AS(bilinear_score(p, fq), DimensionError);
    }
}

TEST_CASE("log_density is the trace term minus n times the offset") {
    tst::Rng rng(10006);
    const GraphFeatures fq = random_features(rng, 4, 16);
    CandidateParams p;
    p.alpha = random_unit(rng, 16);
    p.beta = random_unit(rng, 16);
    const double score = bilinear_score(p, fq);
    CHECK(log_density(p, fq, 2.5) == doctest::Approx(-4.0 * 2.5 + score).epsilon(1e-12));
}

TEST_CASE("build_index") {
    const AggregationConfig cfg{0.2, 3};

    SUBCASE("deterministic: two builds serialize to identical bytes") {
        tst::Rng rng(10007);
        const auto candidates = synthetic_candidates(rng, 6);
        Embedder e1(hash_spec());
        Embedder e2(hash_spec());
        const Index i1 = build_index(candidates, e1, cfg);
        const Index i2 = build_index(candidates, e2, cfg);
        const auto p1 = temp_file("idx_a"), p2 = temp_file("idx_b");
        save_index(i1, p1);
        save_index(i2, p2);
        CHECK(file_bytes(p1) == file_bytes(p2));
        CHECK(!file_bytes(p1).empty());
        std::filesystem::remove(p1);
        std::filesystem::remove(p2);
    }

    SUBCASE("unusable FRRs degrade but stay in the record list") {
        tst::Rng rng(10008);
        auto candidates = synthetic_candidates(rng, 3);
        candidates[1].frr = "?? not a statement ??";
        candidates[2].frr = "a = [f](b)\nb = [g](a)";  // cycle
        Embedder embedder(hash_spec());
        const Index index = build_index(candidates, embedder, cfg);
        REQUIRE(index.records.size() == 3);
        CHECK(!index.records[0].degraded);
        CHECK(index.records[1].degraded);
        CHECK(index.records[2].degraded);
    }

    SUBCASE("fatal only when every candidate fails") {
        std::vector<CandidateInput> candidates = {{"a", "q", "ans", "not parseable !!"}};
        Embedder embedder(hash_spec());
        CHECK_THROWS_AS(build_index(candidates, embedder, cfg), Error);
    }

    SUBCASE("synthetic corpus yields strictly positive sigmas") {
        tst::Rng rng(10009);
        const auto candidates = synthetic_candidates(rng, 25);
        Embedder embedder(hash_spec());
        const Index index = build_index(candidates, embedder, cfg);
        for (const auto& rec : index.records) {
            REQUIRE(!rec.degraded);
            REQUIRE(rec.params.sigma > 0.0);
        }
    }
}

TEST_CASE("retrieve") {
    Index index;
    index.embedder = hash_spec(8);
    index.agg = {0.2, 3};
    auto add = [&](const std::string& id, std::size_t basis) {
        CandidateRecord rec;
        rec.id = id;
        rec.params.alpha.assign(8, 0.0);
        rec.params.beta.assign(8, 0.0);
        rec.params.alpha[basis] = 1.0;
        rec.params.beta[basis] = 1.0;
        rec.params.sigma = 1.0;
        index.records.push_back(std::move(rec));
    };
    add("a", 0);
    add("b", 1);
    add("c", 2);

    GraphFeatures fq;
    fq.x = DenseMatrix(1, 8);
    fq.x.at(0, 0) = std::sqrt(0.3);
    fq.x.at(0, 1) = std::sqrt(0.9);
    fq.x.at(0, 2) = std::sqrt(0.5);
    fq.z = fq.x;

    SUBCASE("top-k by descending score") {
        const auto out = retrieve(index, fq, 2);
        REQUIRE(out.size() == 2);
        CHECK(out[0].id == "b");
        CHECK(out[0].rank == 1);
        CHECK(out[0].score == doctest::Approx(0.9));
        CHECK(out[1].id == "c");
        CHECK(out[1].rank == 2);
    }
    SUBCASE("k beyond the index returns everything") {
        CHECK(retrieve(index, fq, 8).size() == 3);
    }
    SUBCASE("ties break by ascending id") {
        fq.x.at(0, 0) = fq.x.at(0, 1) = fq.x.at(0, 2) = 1.0;
        fq.z = fq.x;
        const auto out = retrieve(index, fq, 3);
        CHECK(out[0].id == "a");
        CHECK(out[1].id == "b");
        CHECK(out[2].id == "c");
    }
    SUBCASE("degraded records never score") {
        index.records[1].degraded = true;
        const auto out = retrieve(index, fq, 3);
        REQUIRE(out.size() == 2);
        CHECK(out[0].id == "c");
    }
    SUBCASE("empty index") {
        Index empty;
        empty.embedder = index.embedder;
        CHECK_THROWS_AS(retrieve(empty, fq, 1), EmptyIndexError);
    }
}

TEST_CASE("score_matrix") {
    const AggregationConfig cfg{0.2, 3};
    Embedder embedder(hash_spec());

    SUBCASE("identical records score symmetrically; diagonal is sigma") {
        tst::Rng rng(10010);
        auto one = synthetic_candidates(rng, 1);
        std::vector<CandidateInput> pair = {one[0], one[0]};
        pair[1].id = "twin";
        const DenseMatrix s = score_matrix(pair, embedder, cfg);
        CHECK(s.at(0, 1) == doctest::Approx(s.at(1, 0)).epsilon(1e-12));
        const Index index = build_index({one[0]}, embedder, cfg);
        CHECK(s.at(0, 0) == doctest::Approx(index.records[0].params.sigma).epsilon(1e-9));
    }

    SUBCASE("generic corpus is asymmetric") {
        tst::Rng rng(10011);
        const auto candidates = synthetic_candidates(rng, 6);
        const DenseMatrix s = score_matrix(candidates, embedder, cfg);
        double max_gap = 0.0;
        for (std::size_t i = 0; i < s.rows(); ++i) {
            for (std::size_t j = 0; j < s.cols(); ++j) {
                max_gap = std::max(max_gap, std::fabs(s.at(i, j) - s.at(j, i)));
            }
        }
        CHECK(max_gap > 0.0);
    }

    SUBCASE("needs at least two records") {
        tst::Rng rng(10012);
        const auto one = synthetic_candidates(rng, 1);
        CHECK_THROWS_AS(score_matrix(one, embedder, cfg), std::invalid_argument);
    }
}

TEST_CASE("rescale_unit_diagonal") {
    DenseMatrix s(2, 2, {2.0, 6.0, 4.0, 10.0});
    const DenseMatrix out = rescale_unit_diagonal(s);
    CHECK(out.at(0, 1) == doctest::Approx(0.5));   // (6-2)/8
    CHECK(out.at(1, 0) == doctest::Approx(0.25));  // (4-2)/8
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(1, 1) == 1.0);
    const DenseMatrix flat =
        rescale_unit_diagonal(DenseMatrix(2, 2, {3.0, 3.0, 3.0, 3.0}));
    CHECK(flat.at(0, 1) == 0.0);
    CHECK(flat.at(0, 0) == 1.0);
}

TEST_CASE("index persistence") {
    tst::Rng rng(10013);
    const auto candidates = synthetic_candidates(rng, 4);
    Embedder embedder(hash_spec());
    const AggregationConfig cfg{0.1, 2};
    const Index index = build_index(candidates, embedder, cfg);
    const auto path = temp_file("idx_rt");
    save_index(index, path);

    SUBCASE("round trip preserves config and records") {
        const Index back = load_index(path);
        CHECK(back.embedder == index.embedder);
        CHECK(back.agg == index.agg);
        REQUIRE(back.records.size() == index.records.size());
        for (std::size_t i = 0; i < back.records.size(); ++i) {
            const auto& a = back.records[i];
            const auto& b = index.records[i];
            CHECK(a.id == b.id);
            CHECK(a.question == b.question);
            CHECK(a.answer == b.answer);
            CHECK(a.frr == b.frr);
            CHECK(a.degraded == b.degraded);
            CHECK(a.params.sigma == doctest::Approx(b.params.sigma).epsilon(1e-12));
            CHECK(l2_norm(a.params.alpha) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(l2_norm(a.params.beta) == doctest::Approx(1.0).epsilon(1e-9));
            for (std::size_t j = 0; j < a.params.alpha.size(); ++j) {
                CHECK(a.params.alpha[j] == doctest::Approx(b.params.alpha[j]).epsilon(1e-6));
            }
        }
    }

    SUBCASE("truncated file is rejected") {
        const std::string bytes = file_bytes(path);
        const auto broken = temp_file("idx_trunc");
        {
            std::ofstream f(broken, std::ios::binary);
            f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        }
        CHECK_THROWS_AS(load_index(broken), SchemaError);
        std::filesystem::remove(broken);
    }

    SUBCASE("wrong magic is rejected") {
        const auto bad = temp_file("idx_magic");
        {
            std::ofstream f(bad, std::ios::binary);
            f << "JUNKJUNKJUNK";
        }
        CHECK_THROWS_AS(load_index(bad), SchemaError);
        std::filesystem::remove(bad);
    }

    SUBCASE("config mismatch is refused") {
        const Index back = load_index(path);
        CHECK_NOTHROW(ensure_compatible(back, index.embedder, index.agg));
        AggregationConfig other = index.agg;
        other.lambda = 0.3;
        CHECK_THROWS_AS(ensure_compatible(back, index.embedder, other),
                        ConfigMismatchError);
        EmbedderSpec spec = index.embedder;
        spec.dim = 64;
        CHECK_THROWS_AS(ensure_compatible(back, spec, index.agg), ConfigMismatchError);
    }

    std::filesystem::remove(path);
}

TEST_CASE("retrieve_for_query") {
    tst::Rng rng(10014);
    const auto candidates = synthetic_candidates(rng, 5);
    Embedder embedder(hash_spec());
    const AggregationConfig cfg{0.2, 3};
    const Index index = build_index(candidates, embedder, cfg);

    SUBCASE("well-formed FRR uses bilinear scoring") {
        const auto outcome =
            retrieve_for_query(index, embedder, "some question", candidates[2].frr, 3);
        CHECK(!outcome.fallback);
        CHECK(outcome.results.size() == 3);
    }

    SUBCASE("garbage FRR falls back to dense text retrieval") {
        const auto outcome = retrieve_for_query(index, embedder, candidates[1].question,
                                                std::string("@@ nope @@"), 3);
        CHECK(outcome.fallback);
        REQUIRE(!outcome.results.empty());
        // The identical question text wins the cosine ranking.
        CHECK(outcome.results[0].id == candidates[1].id);
        CHECK(outcome.results[0].score == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("missing FRR falls back too") {
        const auto outcome =
            retrieve_for_query(index, embedder, candidates[0].question, std::nullopt, 2);
        CHECK(outcome.fallback);
    }

    SUBCASE("embedder mismatch is refused") {
        Embedder other(hash_spec(64));
        CHECK_THROWS_AS(
            retrieve_for_query(index, other, "q", std::nullopt, 2), ConfigMismatchError);
    }
}

TEST_CASE("load_candidates") {
    const auto path = temp_file("cands");
    {
        std::ofstream f(path);
        f << R"({"id": "a", "question": "q1", "answer": "x", "frr": "a = 1"})" << "\n";
        f << "\n";
        f << R"({"id": 7, "question": "q2", "answer": "y"})" << "\n";
    }
    const auto cands = load_candidates(path);
    REQUIRE(cands.size() == 2);
    CHECK(cands[0].id == "a");
    CHECK(cands[0].frr == "a = 1");
    CHECK(cands[1].id == "7");  // numeric ids are stringified
    CHECK(cands[1].frr.empty());
    std::filesystem::remove(path);

    const auto bad = temp_file("cands_bad");
    {
        std::ofstream f(bad);
        f << R"({"id": "a", "question": "q1"})" << "\n";  // missing answer
    }
    CHECK_THROWS_AS(load_candidates(bad), SchemaError);
    std::filesystem::remove(bad);
}
