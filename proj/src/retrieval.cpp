#include "icegraph/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "icegraph/baselines.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/linalg.hpp"
#include "nlohmann/json.hpp"

namespace icegraph {

GraphFeatures graph_features(const ThoughtGraph& g, Embedder& embedder,
                             const AggregationConfig& cfg) {
    if (g.nodes.empty()) throw EmptyGraphError("cannot featurize a graph with no vertices");
    std::vector<std::string> texts;
    texts.reserve(g.nodes.size());
    for (const auto& node : g.nodes) texts.push_back(node.text);
    const std::vector<EmbeddingVector> embs = embedder.embed_batch(texts);

    const std::size_t n = g.nodes.size();
    const std::size_t nf = embedder.spec().dim;
    DenseMatrix x(n, nf);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nf; ++j) x.at(i, j) = static_cast<double>(embs[i][j]);
    }
    GraphFeatures f;
    f.z = aggregate_features(g, x, cfg);
    f.x = std::move(x);
    return f;
}

CandidateParams estimate_params(const GraphFeatures& f) {
    if (f.x.rows() == 0) throw EmptyGraphError("estimate_params requires at least one vertex");
    if (f.x.rows() != f.z.rows() || f.x.cols() != f.z.cols()) {
        throw ShapeError("X and Z must share a shape");
    }

    // X^T Z = Qx (Rx Rz^T) Qz^T; the SVD runs on the small core only.
    const ThinQr qx = thin_qr(f.x.transpose());
    const ThinQr qz = thin_qr(f.z.transpose());
    const DenseMatrix core = multiply(qx.r, qz.r.transpose());
    const SmallSvd svd = jacobi_svd(core);

    constexpr double kDegenerate = 1e-12;
    if (svd.sigma.empty() || svd.sigma.front() < kDegenerate) {
        throw DegenerateError("X^T Z is numerically zero");
    }

    const std::size_t nf = f.x.cols();
    CandidateParams p;
    p.sigma = svd.sigma.front();
    p.alpha.assign(nf, 0.0);
    p.beta.assign(nf, 0.0);
    for (std::size_t i = 0; i < nf; ++i) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < svd.u.rows(); ++j) a += qx.q.at(i, j) * svd.u.at(j, 0);
        for (std::size_t j = 0; j < svd.v.rows(); ++j) b += qz.q.at(i, j) * svd.v.at(j, 0);
        p.alpha[i] = a;
        p.beta[i] = b;
    }

    // Largest-magnitude entry of alpha made positive; beta flipped jointly.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < nf; ++i) {
        if (std::fabs(p.alpha[i]) > std::fabs(p.alpha[arg])) arg = i;
    }
    if (p.alpha[arg] < 0.0) {
        for (double& v : p.alpha) v = -v;
        for (double& v : p.beta) v = -v;
    }
    return p;
}

double bilinear_score(const CandidateParams& p, const GraphFeatures& fq) {
    if (p.alpha.size() != fq.x.cols() || p.beta.size() != fq.z.cols()) {
        throw DimensionError("candidate parameters do not match query feature width");
    }
    return dot(matrix_vector(fq.x, p.alpha), matrix_vector(fq.z, p.beta));
}

double log_density(const CandidateParams& p, const GraphFeatures& fq, double offset) {
    return -static_cast<double>(fq.x.rows()) * offset + bilinear_score(p, fq);
}

namespace {

CandidateParams params_from_frr(const std::string& frr, Embedder& embedder,
                                const AggregationConfig& cfg, const BuildOptions& opts) {
    const std::vector<Statement> statements = parse_frr(frr, ParseMode::Lenient);
    if (statements.empty()) throw ExtractionError("FRR contains no parseable statements");
    ThoughtGraph g = build_graph(statements);
    if (opts.prune_numeric) g = prune_numeric_leaves(g);
    return estimate_params(graph_features(g, embedder, cfg));
}

// Candidate-data failures; infrastructure errors keep propagating.
bool is_degrading_error(const Error& e) {
    return dynamic_cast<const TransportError*>(&e) == nullptr &&
           dynamic_cast<const DimensionError*>(&e) == nullptr;
}

}  // namespace

Index build_index(const std::vector<CandidateInput>& candidates, Embedder& embedder,
                  const AggregationConfig& cfg, const BuildOptions& opts) {
    cfg.validate();
    Index index;
    index.embedder = embedder.spec();
    index.agg = cfg;
    index.records.reserve(candidates.size());

    std::size_t usable = 0;
    for (const auto& cand : candidates) {
        CandidateRecord rec;
        rec.id = cand.id;
        rec.question = cand.question;
        rec.answer = cand.answer;
        rec.frr = cand.frr;
        try {
            rec.params = params_from_frr(cand.frr, embedder, cfg, opts);
            ++usable;
        } catch (const Error& e) {
            if (!is_degrading_error(e)) throw;
            rec.degraded = true;
            std::fprintf(stderr, "warning: candidate %s degraded: %s\n", cand.id.c_str(),
                         e.what());
        }
        index.records.push_back(std::move(rec));
    }
    if (!candidates.empty() && usable == 0) {
        throw Error("every candidate failed parameter estimation");
    }
    return index;
}

std::vector<RankedResult> retrieve(const Index& index, const GraphFeatures& fq, std::size_t k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    std::vector<RankedResult> scored;
    for (const auto& rec : index.records) {
        if (rec.degraded) continue;
        scored.push_back({rec.id, bilinear_score(rec.params, fq), 0});
    }
    if (scored.empty()) throw EmptyIndexError("index has no scorable records");
    return rank_top_k(std::move(scored), k);
}

DenseMatrix score_matrix(const std::vector<CandidateInput>& candidates, Embedder& embedder,
                         const AggregationConfig& cfg, const BuildOptions& opts) {
    if (candidates.size() < 2) {
        throw std::invalid_argument("score matrix needs at least two records");
    }
    const std::size_t n = candidates.size();
    std::vector<CandidateParams> params;
    std::vector<GraphFeatures> features;
    params.reserve(n);
    features.reserve(n);
    for (const auto& cand : candidates) {
        const std::vector<Statement> statements = parse_frr(cand.frr, ParseMode::Lenient);
        if (statements.empty()) throw ExtractionError("FRR contains no parseable statements");
        ThoughtGraph g = build_graph(statements);
        if (opts.prune_numeric) g = prune_numeric_leaves(g);
        features.push_back(graph_features(g, embedder, cfg));
        params.push_back(estimate_params(features.back()));
    }
    DenseMatrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            s.at(i, j) = bilinear_score(params[i], features[j]);
        }
    }
    return s;
}

DenseMatrix rescale_unit_diagonal(const DenseMatrix& s) {
    DenseMatrix out = s;
    if (!out.data().empty()) {
        const auto [lo_it, hi_it] = std::minmax_element(out.data().begin(), out.data().end());
        const double lo = *lo_it, hi = *hi_it;
        const double span = hi - lo;
        for (double& v : out.data()) v = (span > 0.0) ? (v - lo) / span : 0.0;
    }
    for (std::size_t i = 0; i < std::min(out.rows(), out.cols()); ++i) out.at(i, i) = 1.0;
    return out;
}

RetrievalOutcome retrieve_for_query(const Index& index, Embedder& embedder,
                                    const std::string& question,
                                    const std::optional<std::string>& frr, std::size_t k,
                                    const BuildOptions& opts) {
    ensure_compatible(index, embedder.spec(), index.agg);
    if (frr && !frr->empty()) {
        try {
            const std::vector<Statement> statements = parse_frr(*frr, ParseMode::Lenient);
            if (!statements.empty()) {
                ThoughtGraph g = build_graph(statements);
                if (opts.prune_numeric) g = prune_numeric_leaves(g);
                const GraphFeatures fq = graph_features(g, embedder, index.agg);
                return {retrieve(index, fq, k), false};
            }
        } catch (const Error& e) {
            if (dynamic_cast<const TransportError*>(&e) != nullptr) throw;
            // fall through to dense retrieval
        }
    }

    if (index.records.empty()) throw EmptyIndexError("index has no records");
    std::vector<std::string> texts;
    texts.reserve(index.records.size() + 1);
    for (const auto& rec : index.records) texts.push_back(rec.question);
    texts.push_back(question);
    const std::vector<EmbeddingVector> embs = embedder.embed_batch(texts);

    std::vector<std::pair<std::string, std::vector<float>>> corpus;
    corpus.reserve(index.records.size());
    for (std::size_t i = 0; i < index.records.size(); ++i) {
        corpus.emplace_back(index.records[i].id, embs[i]);
    }
    return {baseline_dense(corpus, embs.back(), k), true};
}

void ensure_compatible(const Index& index, const EmbedderSpec& spec,
                       const AggregationConfig& cfg) {
    if (!(index.embedder == spec)) {
        throw ConfigMismatchError("index was built with a different embedder config");
    }
    if (!(index.agg == cfg)) {
        throw ConfigMismatchError("index was built with a different aggregation config");
    }
}

namespace {

constexpr char kIndexMagic[4] = {'I', 'C', 'E', 'G'};
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
}

void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(out, bits);
}

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw SchemaError("index file truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        return f;
    }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s = buf.substr(pos, len);
        pos += len;
        return s;
    }
};

void renormalize(std::vector<double>& v) {
    const double norm = l2_norm(v);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
}

}  // namespace

void save_index(const Index& index, const std::filesystem::path& path) {
    std::string out;
    out.append(kIndexMagic, sizeof(kIndexMagic));
    put_u32(out, kIndexVersion);
    out.push_back(index.embedder.kind == EmbedderKind::Hash ? 0 : 1);
    put_string(out, index.embedder.model_id);
    put_u32(out, static_cast<std::uint32_t>(index.embedder.dim));
    put_string(out, index.embedder.endpoint);
    put_u64(out, static_cast<std::uint64_t>(index.embedder.timeout.count()));
    put_u32(out, static_cast<std::uint32_t>(index.embedder.max_batch));
    put_f64(out, index.agg.lambda);
    put_u32(out, static_cast<std::uint32_t>(index.agg.hops));
    put_u64(out, index.records.size());
    for (const auto& rec : index.records) {
        put_string(out, rec.id);
        put_string(out, rec.question);
        put_string(out, rec.answer);
        put_string(out, rec.frr);
        out.push_back(rec.degraded ? 1 : 0);
        if (!rec.degraded) {
            for (double a : rec.params.alpha) put_f32(out, static_cast<float>(a));
            for (double b : rec.params.beta) put_f32(out, static_cast<float>(b));
            put_f64(out, rec.params.sigma);
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open index file for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing index file: " + path.string());
}

Index load_index(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open index file: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    r.need(4);
    if (std::memcmp(buf.data(), kIndexMagic, 4) != 0) {
        throw SchemaError("not an index file: " + path.string());
    }
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kIndexVersion) {
        throw SchemaError("unsupported index version " + std::to_string(version));
    }

    Index index;
    index.version = static_cast<int>(version);
    index.embedder.kind = r.u8() == 0 ? EmbedderKind::Hash : EmbedderKind::Remote;
    index.embedder.model_id = r.str();
    index.embedder.dim = r.u32();
    index.embedder.endpoint = r.str();
    index.embedder.timeout = std::chrono::milliseconds(static_cast<long long>(r.u64()));
    index.embedder.max_batch = r.u32();
    index.agg.lambda = r.f64();
    index.agg.hops = static_cast<int>(r.u32());

    const std::uint64_t count = r.u64();
    index.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        CandidateRecord rec;
        rec.id = r.str();
        rec.question = r.str();
        rec.answer = r.str();
        rec.frr = r.str();
        rec.degraded = r.u8() != 0;
        if (!rec.degraded) {
            rec.params.alpha.resize(index.embedder.dim);
            rec.params.beta.resize(index.embedder.dim);
            for (auto& a : rec.params.alpha) a = static_cast<double>(r.f32());
            for (auto& b : rec.params.beta) b = static_cast<double>(r.f32());
            rec.params.sigma = r.f64();
            // f32 storage rounds the unit norm; restore it exactly.
            renormalize(rec.params.alpha);
            renormalize(rec.params.beta);
        }
        index.records.push_back(std::move(rec));
    }
    if (r.pos != buf.size()) throw SchemaError("trailing bytes in index file");
    return index;
}

std::vector<CandidateInput> load_candidates(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open candidate file: " + path.string());
    std::vector<CandidateInput> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            CandidateInput cand;
            const auto& id = j.at("id");
            cand.id = id.is_string() ? id.get<std::string>() : id.dump();
            cand.question = j.at("question").get<std::string>();
            cand.answer = j.at("answer").get<std::string>();
            if (j.contains("frr")) cand.frr = j.at("frr").get<std::string>();
            out.push_back(std::move(cand));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("bad candidate record: ") + e.what(), line_no);
        }
    }
    return out;
}

}  // namespace icegraph
