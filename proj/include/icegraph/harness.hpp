#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icegraph/retrieval.hpp"
#include "nlohmann/json.hpp"

namespace icegraph {

enum class Task { Gsm8k, Aqua, Mbpp, ProofWriter };

Task parse_task(const std::string& name);
std::string task_name(Task task);

// One benchmark item. `answer` is the reference solution; `frr` is an
// already-generated reasoning representation when the dataset ships one.
struct EvalRecord {
    std::string id;
    std::string question;
    std::string answer;
    std::optional<std::string> frr;
    std::optional<std::vector<std::string>> test_cases;  // code task
    std::optional<std::vector<std::string>> options;     // multiple choice
};

// JSONL loader; validates the per-task schema and joins multiple-choice
// options into the question text. Throws SchemaError with the line number.
std::vector<EvalRecord> load_dataset(const std::filesystem::path& path, Task task);

// Worked example inside the reasoning-representation prompt.
struct FrrExemplar {
    std::string question;
    std::string answer;
    std::string frr;
};

enum class FrrPromptMode { WithAnswer, QueryOnly };

// Built-in exemplars for each task's FRR prompt.
const std::vector<FrrExemplar>& default_frr_exemplars(Task task);

// FRR-generation prompt. WithAnswer interpolates the item's reference
// answer and ends at the code marker, so the model emits only the FRR;
// QueryOnly ends at the answer marker, so the model emits answer and FRR
// together. Throws TemplateError for tasks without an FRR prompt.
std::string assemble_frr_prompt(Task task, const std::vector<FrrExemplar>& exemplars,
                                const EvalRecord& item, FrrPromptMode mode);

// Text after the last FRR marker, trimmed to the run of consecutive lines
// that parse as statements. Throws ExtractionError when the marker is
// missing or no line parses.
std::string extract_frr(Task task, const std::string& completion);

// k-shot prompt for answering; byte-stable for fixed inputs.
std::string assemble_icl_prompt(Task task, const std::vector<EvalRecord>& ices,
                                const EvalRecord& query);

// Final-answer extraction: text after the last "####". Numeric tasks
// canonicalize the number; choice tasks reduce to a single uppercase
// letter. The code task returns the completion verbatim (scored
// externally). Throws ExtractionError when the marker is missing.
std::string extract_answer(Task task, const std::string& completion);

// Applies the same normalization to a reference answer.
std::string normalize_reference(Task task, const std::string& reference);

bool answers_match(Task task, const std::string& extracted, const std::string& reference);

// Canonical decimal form: "1.0" -> "1", "01.50" -> "1.5", "-0" -> "0".
// Returns nullopt when the text is not a plain decimal.
std::optional<std::string> canonical_decimal(const std::string& text);

struct LlmSpec {
    std::string endpoint;
    std::string model_id;
    double temperature = 1e-5;
    int max_tokens = 2048;
    std::chrono::milliseconds timeout{60000};
    int max_retries = 5;
};

// Transport interface so runs can be driven by an in-process fake.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    // Connectivity check; throws TransportError when the endpoint is
    // unreachable.
    virtual void probe() {}
};

// Chat-completions style client: POST {model, messages, temperature,
// max_tokens} -> {choices:[{message:{content}}]}, bearer auth from
// ICEGRAPH_LLM_TOKEN, retried with exponential backoff.
class HttpLlmClient : public LlmClient {
public:
    explicit HttpLlmClient(LlmSpec spec, int max_inflight = 4);
    ~HttpLlmClient() override;
    std::string complete(const std::string& prompt) override;
    void probe() override;

private:
    LlmSpec spec_;
    std::unique_ptr<class InflightGate> gate_;
};

enum class RetrieverKind {
    Graphic,     // bilinear scoring over thought graphs
    Random,      // seeded uniform without replacement
    Bm25,        // lexical
    Dense,       // cosine over question embeddings
    FrrText,     // cosine over FRR text embeddings
    Graph,       // cosine over graph embeddings, lambda = 0
    GraphPpr,    // cosine over graph embeddings, configured lambda
    Complexity,  // line-break count of candidate answers
};

RetrieverKind parse_retriever(const std::string& name);
std::string retriever_name(RetrieverKind kind);

enum class IceOrder { WorstFirst, BestFirst };

struct EvalOptions {
    RetrieverKind retriever = RetrieverKind::Graphic;
    std::size_t k = 8;
    std::uint64_t seed = 0;
    IceOrder ice_order = IceOrder::WorstFirst;
    bool prune_numeric = false;
    bool generate_frr = true;  // generate missing query FRRs via the LLM
    int concurrency = 4;
};

struct ItemResult {
    std::string id;
    std::vector<std::string> retrieved_ids;
    std::string prompt_hash;
    std::string raw_completion;
    std::string extracted;
    bool correct = false;
    bool scored = true;     // code generation is recorded, not scored
    bool fallback = false;  // dense fallback replaced graph retrieval
    std::string error;      // per-item failure, if any
    long long latency_ms = 0;
};

struct RunReport {
    std::vector<ItemResult> items;
    double accuracy = 0.0;
    std::size_t n = 0;
    std::size_t n_scored = 0;
    nlohmann::json config;
};

// Runs the whole per-item pipeline: (FRR generation when needed) ->
// retrieval -> prompt -> completion -> answer extraction -> scoring.
// Per-item failures are recorded and never abort the run; only an
// unreachable LLM at the startup probe is fatal. `ice_details`, when
// given, supplies full candidate records (e.g. test cases) by id.
RunReport run_eval(const std::vector<EvalRecord>& dataset, const Index& index,
                   Embedder& embedder, LlmClient& llm, Task task, const EvalOptions& opts,
                   const std::vector<EvalRecord>* ice_details = nullptr);

void write_report_jsonl(const RunReport& report, const std::filesystem::path& path);
void write_report_summary(const RunReport& report, const std::filesystem::path& path);
nlohmann::json item_to_json(const ItemResult& item);

// Default mixing weight per engine/task pair; unknown engines fall back
// to 0.2. An explicit flag always wins over this table.
double default_lambda(const std::string& engine, Task task);

// Flat key = value config file with '#' comments and [section] prefixes.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

std::string sha256_hex(const std::string& data);

}  // namespace icegraph
