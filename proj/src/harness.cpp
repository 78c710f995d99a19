#include "icegraph/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "icegraph/baselines.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/gate.hpp"
#include "icegraph/prompts.hpp"
#include "httplib.h"

namespace icegraph {

using nlohmann::json;

Task parse_task(const std::string& name) {
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "gsm8k") return Task::Gsm8k;
    if (lower == "aqua") return Task::Aqua;
    if (lower == "mbpp") return Task::Mbpp;
    if (lower == "proofwriter") return Task::ProofWriter;
    throw std::invalid_argument("unknown task: " + name);
}

std::string task_name(Task task) {
    switch (task) {
        case Task::Gsm8k: return "gsm8k";
        case Task::Aqua: return "aqua";
        case Task::Mbpp: return "mbpp";
        case Task::ProofWriter: return "proofwriter";
    }
    return "?";
}

namespace {

std::string json_id(const json& j) {
    return j.is_string() ? j.get<std::string>() : j.dump();
}

std::string require_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw SchemaError(std::string("missing or non-string field '") + key + "'", line);
    }
    return j.at(key).get<std::string>();
}

std::vector<std::string> require_string_list(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw SchemaError(std::string("missing or non-array field '") + key + "'", line);
    }
    std::vector<std::string> out;
    for (const auto& item : j.at(key)) {
        if (!item.is_string()) {
            throw SchemaError(std::string("field '") + key + "' must hold strings", line);
        }
        out.push_back(item.get<std::string>());
    }
    return out;
}

}  // namespace

std::vector<EvalRecord> load_dataset(const std::filesystem::path& path, Task task) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset: " + path.string());

    std::vector<EvalRecord> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (!j.is_object() || !j.contains("id")) {
            throw SchemaError("record must be an object with an 'id'", line_no);
        }
        EvalRecord rec;
        rec.id = json_id(j.at("id"));
        if (!ids.insert(rec.id).second) {
            throw SchemaError("duplicate id: " + rec.id, line_no);
        }
        rec.question = require_string(j, "question", line_no);
        rec.answer = require_string(j, "answer", line_no);
        if (j.contains("frr")) {
            if (!j.at("frr").is_string()) throw SchemaError("field 'frr' must be a string",
                                                            line_no);
            rec.frr = j.at("frr").get<std::string>();
        }
        if (task == Task::Aqua) {
            rec.options = require_string_list(j, "options", line_no);
            std::string joined;
            for (std::size_t i = 0; i < rec.options->size(); ++i) {
                if (i > 0) joined += ", ";
                joined += (*rec.options)[i];
            }
            rec.question += "\nOptions: " + joined;
        }
        if (task == Task::Mbpp) {
            rec.test_cases = require_string_list(j, "test_cases", line_no);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::string assemble_frr_prompt(Task task, const std::vector<FrrExemplar>& exemplars,
                                const EvalRecord& item, FrrPromptMode mode) {
    std::string prompt = frr_prompt_header(task);  // throws for the code task
    for (const auto& ex : exemplars) {
        prompt += "\n\nQ: " + ex.question;
        prompt += "\n\n" + frr_answer_marker(task) + " " + ex.answer;
        prompt += "\n\n" + frr_code_marker(task) + "\n" + ex.frr;
    }
    prompt += "\n\nQ: " + item.question;
    if (mode == FrrPromptMode::WithAnswer) {
        prompt += "\n\n" + frr_answer_marker(task) + " " + item.answer;
        prompt += "\n\n" + frr_code_marker(task);
    } else {
        prompt += "\n\n" + frr_answer_marker(task);
    }
    return prompt;
}

std::string extract_frr(Task task, const std::string& completion) {
    const std::string& marker = frr_code_marker(task);  // throws for the code task
    const std::size_t pos = completion.rfind(marker);
    if (pos == std::string::npos) {
        throw ExtractionError("completion has no '" + marker + "' marker");
    }
    std::string tail = completion.substr(pos + marker.size());

    std::vector<std::string> kept;
    std::size_t start = 0;
    bool in_block = false;
    while (start <= tail.size()) {
        const std::size_t nl = tail.find('\n', start);
        std::string line = (nl == std::string::npos) ? tail.substr(start)
                                                     : tail.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const bool blank = line.find_first_not_of(" \t") == std::string::npos;
        bool parses = false;
        if (!blank) {
            try {
                parse_statement(line);
                parses = true;
            } catch (const GrammarError&) {
            }
        }
        if (parses) {
            in_block = true;
            kept.push_back(line);
        } else if (in_block) {
            break;  // the consecutive run ended
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    if (kept.empty()) throw ExtractionError("no statement-shaped lines after marker");
    std::string out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i > 0) out += '\n';
        out += kept[i];
    }
    return out;
}

std::string assemble_icl_prompt(Task task, const std::vector<EvalRecord>& ices,
                                const EvalRecord& query) {
    std::string prompt;
    const auto join_cases = [](const std::vector<std::string>& cases) {
        std::string out;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            if (i > 0) out += '\n';
            out += cases[i];
        }
        return out;
    };

    if (task == Task::Mbpp) {
        for (const auto& ice : ices) {
            if (!ice.test_cases) {
                throw TemplateError("code-task example " + ice.id + " lacks test cases");
            }
            prompt += "Text: " + ice.question + "\n\n";
            prompt += "Test Cases: " + join_cases(*ice.test_cases) + "\n\n";
            prompt += "Code: " + ice.answer + "\n\n";
        }
        if (!query.test_cases) {
            throw TemplateError("code-task query " + query.id + " lacks test cases");
        }
        prompt += "Text: " + query.question + "\n\n";
        prompt += "Test Cases: " + join_cases(*query.test_cases) + "\n\n";
        prompt += "Code:";
        return prompt;
    }

    const std::string answer_tag = task == Task::ProofWriter ? "Proof:" : "A:";
    for (const auto& ice : ices) {
        prompt += "Q: " + ice.question + "\n\n";
        prompt += answer_tag + " " + ice.answer + "\n\n";
    }
    prompt += "Q: " + query.question + "\n\n";
    prompt += answer_tag;
    return prompt;
}

std::optional<std::string> canonical_decimal(const std::string& text) {
    std::size_t i = 0, end = text.size();
    while (i < end && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (end > i && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
    if (i >= end) return std::nullopt;

    bool negative = false;
    if (text[i] == '+' || text[i] == '-') {
        negative = text[i] == '-';
        ++i;
    }
    std::string int_part, frac_part;
    while (i < end && std::isdigit(static_cast<unsigned char>(text[i]))) int_part += text[i++];
    if (i < end && text[i] == '.') {
        ++i;
        while (i < end && std::isdigit(static_cast<unsigned char>(text[i]))) {
            frac_part += text[i++];
        }
    }
    if (i != end || (int_part.empty() && frac_part.empty())) return std::nullopt;

    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    std::size_t lead = 0;
    while (lead + 1 < int_part.size() && int_part[lead] == '0') ++lead;
    int_part = int_part.empty() ? "0" : int_part.substr(lead);

    std::string out = int_part;
    if (!frac_part.empty()) out += "." + frac_part;
    if (negative && out != "0" && !(int_part == "0" && frac_part.empty())) out = "-" + out;
    if (out == "-0") out = "0";
    return out;
}

namespace {

// First plain number in the text, commas and currency marks stripped.
std::optional<std::string> first_number(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        if (c == ',' || c == '$') continue;
        cleaned += c;
    }
    for (std::size_t i = 0; i < cleaned.size(); ++i) {
        const char c = cleaned[i];
        const bool digit_start =
            std::isdigit(static_cast<unsigned char>(c)) ||
            ((c == '-' || c == '+' || c == '.') && i + 1 < cleaned.size() &&
             std::isdigit(static_cast<unsigned char>(cleaned[i + 1])));
        if (!digit_start) continue;
        std::size_t j = i;
        if (cleaned[j] == '-' || cleaned[j] == '+') ++j;
        std::size_t digits = 0;
        while (j < cleaned.size() && std::isdigit(static_cast<unsigned char>(cleaned[j]))) {
            ++j;
            ++digits;
        }
        if (j < cleaned.size() && cleaned[j] == '.') {
            ++j;
            while (j < cleaned.size() && std::isdigit(static_cast<unsigned char>(cleaned[j]))) {
                ++j;
                ++digits;
            }
        }
        if (digits > 0) return canonical_decimal(cleaned.substr(i, j - i));
        i = j;
    }
    return std::nullopt;
}

// First standalone A-E option letter.
std::optional<std::string> first_option_letter(const std::string& text) {
    std::string token;
    auto check = [&]() -> std::optional<std::string> {
        if (token.size() == 1) {
            const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
            if (c >= 'A' && c <= 'E') return std::string(1, c);
        }
        return std::nullopt;
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += c;
        } else {
            if (auto hit = check()) return hit;
            token.clear();
        }
    }
    return check();
}

std::string trim_copy(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

constexpr const char* kAnswerMarker = "####";

}  // namespace

std::string extract_answer(Task task, const std::string& completion) {
    if (task == Task::Mbpp) return trim_copy(completion);

    const std::size_t pos = completion.rfind(kAnswerMarker);
    if (pos == std::string::npos) {
        throw ExtractionError("completion has no '####' answer marker");
    }
    const std::string tail = completion.substr(pos + 4);
    return normalize_reference(task, tail);
}

std::string normalize_reference(Task task, const std::string& reference) {
    switch (task) {
        case Task::Gsm8k:
            if (auto num = first_number(reference)) return *num;
            return trim_copy(reference);
        case Task::Aqua:
        case Task::ProofWriter:
            if (auto letter = first_option_letter(reference)) return *letter;
            return trim_copy(reference);
        case Task::Mbpp:
            return trim_copy(reference);
    }
    return trim_copy(reference);
}

bool answers_match(Task task, const std::string& extracted, const std::string& reference) {
    const std::string norm_ref = normalize_reference(task, reference);
    if (extracted == norm_ref) return true;
    // Numeric answers also compare as values: "1" should equal "1.0".
    const auto a = canonical_decimal(extracted);
    const auto b = canonical_decimal(norm_ref);
    return a && b && *a == *b;
}

// ---------------------------------------------------------------------------
// LLM transport

namespace {

struct ParsedUrl {
    std::string base;
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("malformed endpoint URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

httplib::Headers bearer_headers() {
    httplib::Headers headers;
    if (const char* token = std::getenv("ICEGRAPH_LLM_TOKEN"); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    return headers;
}

}  // namespace

HttpLlmClient::HttpLlmClient(LlmSpec spec, int max_inflight)
    : spec_(std::move(spec)), gate_(std::make_unique<InflightGate>(max_inflight)) {}

HttpLlmClient::~HttpLlmClient() = default;

void HttpLlmClient::probe() {
    const ParsedUrl url = split_url(spec_.endpoint);
    httplib::Client client(url.base);
    client.set_connection_timeout(spec_.timeout);
    client.set_read_timeout(spec_.timeout);
    // Any HTTP response at all proves reachability.
    if (auto res = client.Head(url.path); res || res.error() == httplib::Error::Read) return;
    if (auto res = client.Get(url.path); res) return;
    throw TransportError("LLM endpoint unreachable: " + spec_.endpoint);
}

std::string HttpLlmClient::complete(const std::string& prompt) {
    const ParsedUrl url = split_url(spec_.endpoint);
    const json body = {
        {"model", spec_.model_id},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
        {"temperature", spec_.temperature},
        {"max_tokens", spec_.max_tokens},
    };
    const std::string payload = body.dump();

    std::string last_error;
    const int attempts = std::max(1, spec_.max_retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50) * (1 << (attempt - 1)));
        }
        httplib::Result res;
        {
            InflightSlot slot(*gate_);
            httplib::Client client(url.base);
            client.set_connection_timeout(spec_.timeout);
            client.set_read_timeout(spec_.timeout);
            res = client.Post(url.path, bearer_headers(), payload, "application/json");
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
            throw TransportError("LLM endpoint rejected request with status " +
                                 std::to_string(res->status));
        }
        try {
            const json parsed = json::parse(res->body);
            return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("malformed completion body: ") + e.what();
        }
    }
    throw TransportError("LLM request failed after " + std::to_string(attempts) +
                         " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Evaluation loop

RetrieverKind parse_retriever(const std::string& name) {
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "graphic" || lower == "bn") return RetrieverKind::Graphic;
    if (lower == "random") return RetrieverKind::Random;
    if (lower == "bm25") return RetrieverKind::Bm25;
    if (lower == "dense" || lower == "text") return RetrieverKind::Dense;
    if (lower == "frr") return RetrieverKind::FrrText;
    if (lower == "graph") return RetrieverKind::Graph;
    if (lower == "graph-ppr" || lower == "graph_ppr") return RetrieverKind::GraphPpr;
    if (lower == "complexity") return RetrieverKind::Complexity;
    throw std::invalid_argument("unknown retriever: " + name);
}

std::string retriever_name(RetrieverKind kind) {
    switch (kind) {
        case RetrieverKind::Graphic: return "graphic";
        case RetrieverKind::Random: return "random";
        case RetrieverKind::Bm25: return "bm25";
        case RetrieverKind::Dense: return "dense";
        case RetrieverKind::FrrText: return "frr";
        case RetrieverKind::Graph: return "graph";
        case RetrieverKind::GraphPpr: return "graph-ppr";
        case RetrieverKind::Complexity: return "complexity";
    }
    return "?";
}

namespace {

bool retriever_needs_frr(RetrieverKind kind) {
    switch (kind) {
        case RetrieverKind::Graphic:
        case RetrieverKind::FrrText:
        case RetrieverKind::Graph:
        case RetrieverKind::GraphPpr:
            return true;
        default:
            return false;
    }
}

std::optional<ThoughtGraph> graph_from_frr(const std::string& frr, bool prune) {
    try {
        const auto statements = parse_frr(frr, ParseMode::Lenient);
        if (statements.empty()) return std::nullopt;
        ThoughtGraph g = build_graph(statements);
        if (prune) g = prune_numeric_leaves(g);
        if (g.nodes.empty()) return std::nullopt;
        return g;
    } catch (const CycleError&) {
        return std::nullopt;
    }
}

// Per-run precomputation shared by all items of one retriever kind.
struct RetrieverContext {
    std::vector<ScoredDoc> bm25_corpus;
    std::vector<std::pair<std::string, std::vector<float>>> question_vecs;
    std::vector<std::pair<std::string, std::vector<float>>> frr_vecs;
    std::vector<std::pair<std::string, std::vector<double>>> graph_embs;
    std::vector<std::pair<std::string, std::string>> answers;
    std::vector<std::string> ids;
};

RetrieverContext build_retriever_context(const Index& index, Embedder& embedder,
                                         const EvalOptions& opts) {
    RetrieverContext ctx;
    for (const auto& rec : index.records) ctx.ids.push_back(rec.id);

    switch (opts.retriever) {
        case RetrieverKind::Bm25:
            for (const auto& rec : index.records) ctx.bm25_corpus.push_back({rec.id,
                                                                             rec.question});
            break;
        case RetrieverKind::Complexity:
            for (const auto& rec : index.records) ctx.answers.emplace_back(rec.id, rec.answer);
            break;
        case RetrieverKind::Dense: {
            std::vector<std::string> texts;
            for (const auto& rec : index.records) texts.push_back(rec.question);
            auto vecs = embedder.embed_batch(texts);
            for (std::size_t i = 0; i < vecs.size(); ++i) {
                ctx.question_vecs.emplace_back(index.records[i].id, std::move(vecs[i]));
            }
            break;
        }
        case RetrieverKind::FrrText: {
            std::vector<std::string> texts;
            for (const auto& rec : index.records) texts.push_back(rec.frr);
            auto vecs = embedder.embed_batch(texts);
            for (std::size_t i = 0; i < vecs.size(); ++i) {
                ctx.frr_vecs.emplace_back(index.records[i].id, std::move(vecs[i]));
            }
            break;
        }
        case RetrieverKind::Graph:
        case RetrieverKind::GraphPpr: {
            AggregationConfig cfg = index.agg;
            if (opts.retriever == RetrieverKind::Graph) cfg.lambda = 0.0;
            for (const auto& rec : index.records) {
                auto g = graph_from_frr(rec.frr, opts.prune_numeric);
                if (!g) continue;  // unusable for graph similarity
                const GraphFeatures f = graph_features(*g, embedder, index.agg);
                ctx.graph_embs.emplace_back(rec.id, graph_embedding(*g, f.x, cfg));
            }
            break;
        }
        default:
            break;
    }
    return ctx;
}

std::uint64_t item_seed(std::uint64_t seed, std::size_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct RetrievalStep {
    std::vector<std::string> ids;  // best first
    bool fallback = false;
};

std::vector<RankedResult> dense_over_questions(const Index& index, Embedder& embedder,
                                               const std::string& question, std::size_t k) {
    std::vector<std::string> texts;
    texts.reserve(index.records.size() + 1);
    for (const auto& rec : index.records) texts.push_back(rec.question);
    texts.push_back(question);
    auto vecs = embedder.embed_batch(texts);
    std::vector<std::pair<std::string, std::vector<float>>> corpus;
    corpus.reserve(index.records.size());
    for (std::size_t i = 0; i < index.records.size(); ++i) {
        corpus.emplace_back(index.records[i].id, std::move(vecs[i]));
    }
    return baseline_dense(corpus, vecs.back(), k);
}

RetrievalStep run_retrieval(const Index& index, Embedder& embedder,
                            const RetrieverContext& ctx, const EvalOptions& opts,
                            const EvalRecord& item, std::size_t item_index,
                            const std::optional<std::string>& frr) {
    RetrievalStep step;
    auto take = [&](const std::vector<RankedResult>& ranked) {
        for (const auto& r : ranked) step.ids.push_back(r.id);
    };

    switch (opts.retriever) {
        case RetrieverKind::Graphic: {
            const RetrievalOutcome outcome = retrieve_for_query(
                index, embedder, item.question, frr, opts.k, {opts.prune_numeric});
            step.fallback = outcome.fallback;
            take(outcome.results);
            return step;
        }
        case RetrieverKind::Random: {
            const std::size_t k = std::min(opts.k, ctx.ids.size());
            step.ids = baseline_random(ctx.ids, k, item_seed(opts.seed, item_index));
            return step;
        }
        case RetrieverKind::Bm25:
            take(baseline_bm25(ctx.bm25_corpus, item.question, opts.k));
            return step;
        case RetrieverKind::Complexity:
            take(baseline_complexity(ctx.answers, opts.k));
            return step;
        case RetrieverKind::Dense: {
            const auto qv = embedder.embed_batch({item.question});
            take(baseline_dense(ctx.question_vecs, qv[0], opts.k));
            return step;
        }
        case RetrieverKind::FrrText: {
            if (frr && !frr->empty()) {
                const auto qv = embedder.embed_batch({*frr});
                take(baseline_dense(ctx.frr_vecs, qv[0], opts.k));
            } else {
                step.fallback = true;
                take(dense_over_questions(index, embedder, item.question, opts.k));
            }
            return step;
        }
        case RetrieverKind::Graph:
        case RetrieverKind::GraphPpr: {
            AggregationConfig cfg = index.agg;
            if (opts.retriever == RetrieverKind::Graph) cfg.lambda = 0.0;
            std::optional<ThoughtGraph> g;
            if (frr && !frr->empty()) g = graph_from_frr(*frr, opts.prune_numeric);
            if (g) {
                const GraphFeatures f = graph_features(*g, embedder, index.agg);
                take(baseline_graph_sim(ctx.graph_embs, graph_embedding(*g, f.x, cfg), opts.k));
            } else {
                step.fallback = true;
                take(dense_over_questions(index, embedder, item.question, opts.k));
            }
            return step;
        }
    }
    return step;
}

}  // namespace

RunReport run_eval(const std::vector<EvalRecord>& dataset, const Index& index,
                   Embedder& embedder, LlmClient& llm, Task task, const EvalOptions& opts,
                   const std::vector<EvalRecord>* ice_details) {
    llm.probe();  // fatal when unreachable

    std::unordered_map<std::string, const CandidateRecord*> by_id;
    for (const auto& rec : index.records) by_id[rec.id] = &rec;
    std::unordered_map<std::string, const EvalRecord*> detail_by_id;
    if (ice_details) {
        for (const auto& rec : *ice_details) detail_by_id[rec.id] = &rec;
    }

    const RetrieverContext ctx = build_retriever_context(index, embedder, opts);

    RunReport report;
    report.items.resize(dataset.size());
    report.n = dataset.size();

    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= dataset.size()) return;
            const EvalRecord& item = dataset[i];
            ItemResult& res = report.items[i];
            res.id = item.id;
            const auto started = std::chrono::steady_clock::now();
            try {
                // 1. Query FRR: given, or generated, or absent.
                std::optional<std::string> frr = item.frr;
                if (!frr && opts.generate_frr && retriever_needs_frr(opts.retriever) &&
                    task != Task::Mbpp) {
                    try {
                        const std::string prompt = assemble_frr_prompt(
                            task, default_frr_exemplars(task), item, FrrPromptMode::QueryOnly);
                        frr = extract_frr(task, llm.complete(prompt));
                    } catch (const ExtractionError&) {
                        frr = std::nullopt;  // degrade to dense retrieval
                    } catch (const TemplateError&) {
                        frr = std::nullopt;
                    }
                }

                // 2. Retrieval.
                RetrievalStep step =
                    run_retrieval(index, embedder, ctx, opts, item, i, frr);
                res.fallback = step.fallback;
                res.retrieved_ids = step.ids;

                // 3. In-context examples, worst first by default.
                std::vector<EvalRecord> ices;
                std::vector<std::string> order = step.ids;
                if (opts.ice_order == IceOrder::WorstFirst) {
                    std::reverse(order.begin(), order.end());
                }
                for (const auto& id : order) {
                    if (auto dit = detail_by_id.find(id); dit != detail_by_id.end()) {
                        ices.push_back(*dit->second);
                        continue;
                    }
                    const CandidateRecord* rec = by_id.at(id);
                    EvalRecord ice;
                    ice.id = rec->id;
                    ice.question = rec->question;
                    ice.answer = rec->answer;
                    ices.push_back(std::move(ice));
                }

                // 4. Prompt, completion, extraction, scoring.
                const std::string prompt = assemble_icl_prompt(task, ices, item);
                res.prompt_hash = sha256_hex(prompt);
                res.raw_completion = llm.complete(prompt);
                if (task == Task::Mbpp) {
                    res.extracted = extract_answer(task, res.raw_completion);
                    res.scored = false;  // code execution is out of band
                } else {
                    res.extracted = extract_answer(task, res.raw_completion);
                    res.correct = answers_match(task, res.extracted, item.answer);
                }
            } catch (const std::exception& e) {
                res.error = e.what();
                res.correct = false;
            }
            res.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();
        }
    };

    const int n_workers = std::max(1, std::min<int>(opts.concurrency,
                                                    static_cast<int>(dataset.size())));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_workers));
    for (int t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    std::size_t correct = 0;
    for (const auto& item : report.items) {
        if (!item.scored) continue;
        ++report.n_scored;
        if (item.correct) ++correct;
    }
    report.accuracy = report.n_scored > 0
                          ? static_cast<double>(correct) / static_cast<double>(report.n_scored)
                          : 0.0;

    report.config = {
        {"task", task_name(task)},
        {"retriever", retriever_name(opts.retriever)},
        {"k", opts.k},
        {"seed", opts.seed},
        {"ice_order", opts.ice_order == IceOrder::WorstFirst ? "worst_first" : "best_first"},
        {"prune_numeric", opts.prune_numeric},
        {"lambda", index.agg.lambda},
        {"hops", index.agg.hops},
        {"embedder",
         {{"kind", index.embedder.kind == EmbedderKind::Hash ? "hash" : "remote"},
          {"model_id", index.embedder.model_id},
          {"dim", index.embedder.dim}}},
    };
    return report;
}

json item_to_json(const ItemResult& item) {
    return {
        {"id", item.id},
        {"retrieved_ids", item.retrieved_ids},
        {"prompt_hash", item.prompt_hash},
        {"raw_completion", item.raw_completion},
        {"extracted", item.extracted},
        {"correct", item.correct},
        {"scored", item.scored},
        {"fallback", item.fallback},
        {"error", item.error},
        {"latency_ms", item.latency_ms},
    };
}

void write_report_jsonl(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open report file: " + path.string());
    for (const auto& item : report.items) f << item_to_json(item).dump() << '\n';
}

void write_report_summary(const RunReport& report, const std::filesystem::path& path) {
    const json j = {
        {"accuracy", report.accuracy},
        {"n", report.n},
        {"n_scored", report.n_scored},
        {"config", report.config},
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open summary file: " + path.string());
    f << j.dump(2) << '\n';
}

double default_lambda(const std::string& engine, Task task) {
    std::string lower;
    for (char c : engine) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "gpt-4o-mini") {
        switch (task) {
            case Task::Gsm8k: return 0.2;
            case Task::Aqua: return 0.2;
            case Task::Mbpp: return 0.1;
            case Task::ProofWriter: return 0.1;
        }
    }
    if (lower == "llama-3.1-8b-instruct") {
        switch (task) {
            case Task::Gsm8k: return 0.3;
            case Task::Aqua: return 0.2;
            case Task::Mbpp: return 0.2;
            case Task::ProofWriter: return 0.0;
        }
    }
    if (lower == "gpt-3.5-turbo" && task == Task::Gsm8k) return 0.3;
    return 0.2;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path.string());
    std::map<std::string, std::string> out;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string trimmed = trim_copy(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        if (trimmed.front() == '[' && trimmed.back() == ']') {
            section = trim_copy(trimmed.substr(1, trimmed.size() - 2));
            continue;
        }
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw SchemaError("config line is not 'key = value'", line_no);
        }
        std::string key = trim_copy(trimmed.substr(0, eq));
        std::string value = trim_copy(trimmed.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) throw SchemaError("empty config key", line_no);
        if (!section.empty()) key = section + "." + key;
        out[key] = value;
    }
    return out;
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

}  // namespace icegraph
