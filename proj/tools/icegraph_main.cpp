// icegraph: parse reasoning traces into thought graphs, index candidate
// examples, and pick in-context examples for LLM prompts by bilinear
// scoring over propagated node embeddings.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "icegraph/baselines.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/harness.hpp"
#include "icegraph/retrieval.hpp"

namespace {

using namespace icegraph;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitUpstream = 3;

struct GlobalOpts {
    double lambda = 0.2;
    bool lambda_set = false;
    int hops = 3;
    std::size_t k = 8;
    std::string embedder_kind = "hash";
    std::size_t dim = 256;
    std::string model_id;
    std::string endpoint;
    std::string index_path;
    std::uint64_t seed = 0;
    bool strict = false;
    std::string config_path;
    std::string cache_path;
    bool prune_numeric = false;
    bool anonymize = false;

    std::map<std::string, std::string> config;

    std::string cfg(const std::string& key, const std::string& fallback) const {
        auto it = config.find(key);
        return it == config.end() ? fallback : it->second;
    }
};

EmbedderSpec make_embedder_spec(const GlobalOpts& g) {
    EmbedderSpec spec;
    if (g.embedder_kind == "hash") {
        spec.kind = EmbedderKind::Hash;
        spec.model_id = g.model_id.empty() ? "hash-v1" : g.model_id;
    } else if (g.embedder_kind == "remote") {
        spec.kind = EmbedderKind::Remote;
        spec.model_id = g.model_id;
        spec.endpoint = g.endpoint;
    } else {
        throw CLI::ValidationError("--embedder must be 'hash' or 'remote'");
    }
    spec.dim = g.dim;
    spec.validate();
    return spec;
}

AggregationConfig make_agg_config(const GlobalOpts& g) {
    AggregationConfig cfg{g.lambda, g.hops};
    cfg.validate();
    return cfg;
}

std::optional<std::filesystem::path> cache_path_for(const GlobalOpts& g) {
    if (!g.cache_path.empty()) return std::filesystem::path(g.cache_path);
    return std::nullopt;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string maybe_anonymize(const GlobalOpts& g, const std::string& text) {
    return g.anonymize ? anonymize_identifiers(text) : text;
}

// ---------------------------------------------------------------------------

int cmd_parse(const GlobalOpts& g, const std::string& in_path, const std::string& json_out,
              const std::string& dot_out) {
    const std::string text = read_text_file(in_path);
    const auto statements =
        parse_frr(text, g.strict ? ParseMode::Strict : ParseMode::Lenient);
    ThoughtGraph graph = build_graph(statements);
    if (g.prune_numeric) graph = prune_numeric_leaves(graph);

    if (!dot_out.empty()) {
        std::ofstream f(dot_out, std::ios::trunc);
        if (!f) throw IoError("cannot write " + dot_out);
        f << to_dot(graph);
    }
    const std::string json_bytes = to_json(graph);
    if (!json_out.empty()) {
        std::ofstream f(json_out, std::ios::trunc);
        if (!f) throw IoError("cannot write " + json_out);
        f << json_bytes << '\n';
    }
    if (dot_out.empty() && json_out.empty()) std::cout << json_bytes << '\n';
    return kExitOk;
}

int cmd_index_build(const GlobalOpts& g, const std::string& candidates_path,
                    const std::string& out_path) {
    auto candidates = load_candidates(candidates_path);
    if (g.anonymize) {
        for (auto& cand : candidates) cand.frr = anonymize_identifiers(cand.frr);
    }
    Embedder embedder(make_embedder_spec(g), cache_path_for(g));
    const Index index =
        build_index(candidates, embedder, make_agg_config(g), {g.prune_numeric});
    save_index(index, out_path);
    std::size_t degraded = 0;
    for (const auto& rec : index.records) degraded += rec.degraded ? 1 : 0;
    std::fprintf(stderr, "indexed %zu candidates (%zu degraded) -> %s\n",
                 index.records.size(), degraded, out_path.c_str());
    return kExitOk;
}

int cmd_retrieve(const GlobalOpts& g, const std::string& frr_path,
                 const std::string& question, bool show_log_density) {
    const Index index = load_index(g.index_path);
    Embedder embedder(index.embedder, cache_path_for(g));

    std::optional<std::string> frr;
    if (!frr_path.empty()) frr = maybe_anonymize(g, read_text_file(frr_path));

    const RetrievalOutcome outcome =
        retrieve_for_query(index, embedder, question, frr, g.k, {g.prune_numeric});
    if (outcome.fallback) std::fprintf(stderr, "note: dense text fallback used\n");
    for (const auto& r : outcome.results) {
        std::printf("%s\t%.17g\n", r.id.c_str(), r.score);
    }
    if (show_log_density && !outcome.fallback && frr) {
        // Reported against the max squared embedding norm of the query graph.
        const auto statements = parse_frr(*frr, ParseMode::Lenient);
        ThoughtGraph graph = build_graph(statements);
        if (g.prune_numeric) graph = prune_numeric_leaves(graph);
        std::vector<std::string> texts;
        for (const auto& node : graph.nodes) texts.push_back(node.text);
        const double offset = norm_bound(embedder.embed_batch(texts));
        const GraphFeatures fq = graph_features(graph, embedder, index.agg);
        for (const auto& r : outcome.results) {
            for (const auto& rec : index.records) {
                if (rec.id != r.id || rec.degraded) continue;
                std::fprintf(stderr, "log-density %s\t%.17g\n", r.id.c_str(),
                             log_density(rec.params, fq, offset));
            }
        }
    }
    return kExitOk;
}

int cmd_score_matrix(const GlobalOpts& g, const std::string& candidates_path, bool rescale,
                     const std::string& out_path) {
    const auto candidates = load_candidates(candidates_path);
    Embedder embedder(make_embedder_spec(g), cache_path_for(g));
    DenseMatrix s = score_matrix(candidates, embedder, make_agg_config(g), {g.prune_numeric});
    if (rescale) s = rescale_unit_diagonal(s);
    if (out_path.empty()) {
        std::cout << s.to_tsv();
    } else {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw IoError("cannot write " + out_path);
        f << s.to_tsv();
    }
    return kExitOk;
}

struct LlmOpts {
    std::string endpoint;
    std::string model;
    double temperature = 1e-5;
    int max_tokens = 2048;
    int max_retries = 5;
    int concurrency = 4;
};

LlmSpec make_llm_spec(const LlmOpts& l) {
    if (l.endpoint.empty()) throw CLI::ValidationError("--llm-endpoint is required");
    LlmSpec spec;
    spec.endpoint = l.endpoint;
    spec.model_id = l.model;
    spec.temperature = l.temperature;
    spec.max_tokens = l.max_tokens;
    spec.max_retries = l.max_retries;
    return spec;
}

int cmd_eval(GlobalOpts& g, const LlmOpts& l, const std::string& dataset_path,
             const std::string& task_str, const std::string& retriever_str,
             const std::string& report_path, const std::string& summary_path,
             const std::string& ice_order_str, bool no_gen_frr,
             const std::string& candidates_path) {
    const Task task = parse_task(task_str);
    if (!g.lambda_set) g.lambda = default_lambda(l.model, task);

    const auto dataset = load_dataset(dataset_path, task);
    const Index index = load_index(g.index_path);
    Embedder embedder(index.embedder, cache_path_for(g));

    EvalOptions opts;
    opts.retriever = parse_retriever(retriever_str);
    opts.k = g.k;
    opts.seed = g.seed;
    opts.prune_numeric = g.prune_numeric;
    opts.generate_frr = !no_gen_frr;
    opts.concurrency = l.concurrency;
    if (ice_order_str == "best_first") {
        opts.ice_order = IceOrder::BestFirst;
    } else if (ice_order_str == "worst_first") {
        opts.ice_order = IceOrder::WorstFirst;
    } else {
        throw CLI::ValidationError("--ice-order must be worst_first or best_first");
    }

    std::vector<EvalRecord> details;
    const std::vector<EvalRecord>* details_ptr = nullptr;
    if (!candidates_path.empty()) {
        details = load_dataset(candidates_path, task);
        details_ptr = &details;
    }

    HttpLlmClient llm(make_llm_spec(l), l.concurrency);
    const RunReport report = run_eval(dataset, index, embedder, llm, task, opts, details_ptr);

    if (!report_path.empty()) write_report_jsonl(report, report_path);
    if (!summary_path.empty()) write_report_summary(report, summary_path);
    std::printf("accuracy\t%.6f\t(%zu scored of %zu items)\n", report.accuracy,
                report.n_scored, report.n);
    return kExitOk;
}

int cmd_gen_frr(GlobalOpts& g, const LlmOpts& l, const std::string& dataset_path,
                const std::string& task_str, const std::string& mode_str,
                const std::string& out_path) {
    const Task task = parse_task(task_str);
    const FrrPromptMode mode =
        mode_str == "query_only" ? FrrPromptMode::QueryOnly : FrrPromptMode::WithAnswer;
    const auto dataset = load_dataset(dataset_path, task);

    HttpLlmClient llm(make_llm_spec(l), l.concurrency);
    llm.probe();

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path);
    std::size_t failures = 0;
    for (const auto& item : dataset) {
        nlohmann::json j = {{"id", item.id}, {"question", item.question},
                            {"answer", item.answer}};
        try {
            const std::string prompt =
                assemble_frr_prompt(task, default_frr_exemplars(task), item, mode);
            j["frr"] = extract_frr(task, llm.complete(prompt));
        } catch (const ExtractionError& e) {
            ++failures;
            j["frr_error"] = e.what();
        }
        out << j.dump() << '\n';
    }
    std::fprintf(stderr, "generated FRRs for %zu items (%zu failures) -> %s\n",
                 dataset.size(), failures, out_path.c_str());
    return kExitOk;
}

void apply_config_defaults(GlobalOpts& g, const CLI::App& app) {
    if (g.config_path.empty()) return;
    g.config = parse_config_file(g.config_path);
    // Flags always win over file values.
    if (!app.count("--lambda") && g.config.contains("lambda")) {
        g.lambda = std::stod(g.config.at("lambda"));
        g.lambda_set = true;
    }
    if (!app.count("--hops") && g.config.contains("hops")) {
        g.hops = std::stoi(g.config.at("hops"));
    }
    if (!app.count("--k") && g.config.contains("k")) {
        g.k = static_cast<std::size_t>(std::stoul(g.config.at("k")));
    }
    if (!app.count("--embedder") && g.config.contains("embedder")) {
        g.embedder_kind = g.config.at("embedder");
    }
    if (!app.count("--dim") && g.config.contains("dim")) {
        g.dim = static_cast<std::size_t>(std::stoul(g.config.at("dim")));
    }
    if (!app.count("--seed") && g.config.contains("seed")) {
        g.seed = std::stoull(g.config.at("seed"));
    }
    if (!app.count("--index") && g.config.contains("index")) {
        g.index_path = g.config.at("index");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thought-graph in-context example retrieval"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--lambda", g.lambda, "backtrack mixing weight in [0,1)");
    app.add_option("--hops", g.hops, "propagation hops")->capture_default_str();
    app.add_option("--k", g.k, "examples to retrieve")->capture_default_str();
    app.add_option("--embedder", g.embedder_kind, "embedding provider: hash|remote")
        ->capture_default_str();
    app.add_option("--dim", g.dim, "embedding width")->capture_default_str();
    app.add_option("--model", g.model_id, "embedding model id (remote)");
    app.add_option("--endpoint", g.endpoint, "embedding endpoint URL (remote)");
    app.add_option("--index", g.index_path, "index file path");
    app.add_option("--seed", g.seed, "RNG seed for the random baseline");
    app.add_flag("--strict", g.strict, "reject unparseable FRR lines instead of skipping");
    app.add_option("--config", g.config_path, "key = value config file");
    app.add_option("--cache", g.cache_path, "embedding cache file");
    app.add_flag("--prune-numeric", g.prune_numeric, "drop raw-number source vertices");
    app.add_flag("--anonymize", g.anonymize, "rename identifiers before embedding");

    // parse
    auto* parse_cmd = app.add_subcommand("parse", "FRR text -> graph JSON/DOT");
    std::string in_path, json_out, dot_out;
    parse_cmd->add_option("--in", in_path, "FRR text file")->required();
    parse_cmd->add_option("--json", json_out, "write graph JSON here");
    parse_cmd->add_option("--dot", dot_out, "write DOT here");

    // index build
    auto* index_cmd = app.add_subcommand("index", "index operations");
    index_cmd->require_subcommand(1);
    auto* build_cmd = index_cmd->add_subcommand("build", "build an index from candidates");
    std::string candidates_path, index_out;
    build_cmd->add_option("--candidates", candidates_path, "candidate JSONL")->required();
    build_cmd->add_option("--out", index_out, "output index file")->required();

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "query -> top-k ids and scores");
    std::string query_frr_path, query_text;
    bool show_log_density = false;
    retrieve_cmd->add_option("--frr", query_frr_path, "query FRR text file");
    retrieve_cmd->add_option("--question", query_text, "query question text (fallback)");
    retrieve_cmd->add_flag("--log-density", show_log_density,
                           "also report log-densities to stderr");

    // score-matrix
    auto* matrix_cmd = app.add_subcommand("score-matrix", "pairwise score matrix as TSV");
    std::string matrix_candidates, matrix_out;
    bool rescale = false;
    matrix_cmd->add_option("--candidates", matrix_candidates, "candidate JSONL")->required();
    matrix_cmd->add_flag("--rescale", rescale, "rescale to [0,1] and set unit diagonal");
    matrix_cmd->add_option("--out", matrix_out, "output TSV file");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "run retrieval + prompting + scoring");
    LlmOpts llm;
    std::string dataset_path, task_str, retriever_str = "graphic";
    std::string report_path, summary_path, ice_order_str = "worst_first";
    std::string eval_candidates_path;
    bool no_gen_frr = false;
    eval_cmd->add_option("--dataset", dataset_path, "dataset JSONL")->required();
    eval_cmd->add_option("--task", task_str, "gsm8k|aqua|mbpp|proofwriter")->required();
    eval_cmd->add_option("--retriever", retriever_str,
                         "graphic|random|bm25|dense|frr|graph|graph-ppr|complexity")
        ->capture_default_str();
    eval_cmd->add_option("--report", report_path, "per-item JSONL report");
    eval_cmd->add_option("--summary", summary_path, "summary JSON");
    eval_cmd->add_option("--ice-order", ice_order_str, "worst_first|best_first")
        ->capture_default_str();
    eval_cmd->add_flag("--no-gen-frr", no_gen_frr, "never generate query FRRs");
    eval_cmd->add_option("--candidates", eval_candidates_path,
                         "candidate dataset JSONL for full example bodies");
    eval_cmd->add_option("--llm-endpoint", llm.endpoint, "chat-completions URL");
    eval_cmd->add_option("--llm-model", llm.model, "LLM model id");
    eval_cmd->add_option("--temperature", llm.temperature, "sampling temperature")
        ->capture_default_str();
    eval_cmd->add_option("--max-tokens", llm.max_tokens, "completion cap")
        ->capture_default_str();
    eval_cmd->add_option("--max-retries", llm.max_retries, "attempts per request")
        ->capture_default_str();
    eval_cmd->add_option("--concurrency", llm.concurrency, "in-flight request limit")
        ->capture_default_str();

    // gen-frr
    auto* gen_cmd = app.add_subcommand("gen-frr", "generate FRRs for a dataset");
    std::string gen_dataset, gen_task, gen_mode = "with_answer", gen_out;
    gen_cmd->add_option("--dataset", gen_dataset, "dataset JSONL")->required();
    gen_cmd->add_option("--task", gen_task, "gsm8k|aqua|proofwriter")->required();
    gen_cmd->add_option("--mode", gen_mode, "with_answer|query_only")->capture_default_str();
    gen_cmd->add_option("--out", gen_out, "output JSONL with frr fields")->required();
    gen_cmd->add_option("--llm-endpoint", llm.endpoint, "chat-completions URL");
    gen_cmd->add_option("--llm-model", llm.model, "LLM model id");

    try {
        app.parse(argc, argv);
        g.lambda_set = app.count("--lambda") > 0;
        apply_config_defaults(g, app);

        if (parse_cmd->parsed()) return cmd_parse(g, in_path, json_out, dot_out);
        if (build_cmd->parsed()) return cmd_index_build(g, candidates_path, index_out);
        if (retrieve_cmd->parsed()) {
            if (g.index_path.empty()) {
                throw CLI::RequiredError("--index");
            }
            return cmd_retrieve(g, query_frr_path, query_text, show_log_density);
        }
        if (matrix_cmd->parsed()) {
            return cmd_score_matrix(g, matrix_candidates, rescale, matrix_out);
        }
        if (eval_cmd->parsed()) {
            if (g.index_path.empty()) throw CLI::RequiredError("--index");
            return cmd_eval(g, llm, dataset_path, task_str, retriever_str, report_path,
                            summary_path, ice_order_str, no_gen_frr, eval_candidates_path);
        }
        if (gen_cmd->parsed()) {
            return cmd_gen_frr(g, llm, gen_dataset, gen_task, gen_mode, gen_out);
        }
        std::cerr << app.help() << std::endl;
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);                                     // error + hint to stderr
        return kExitUsage;
    } catch (const TransportError& e) {
        std::cerr << "upstream service error: " << e.what() << std::endl;
        return kExitUpstream;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitData;
    }
}
