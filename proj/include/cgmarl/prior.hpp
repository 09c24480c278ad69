#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cgmarl/describe.hpp"
#include "cgmarl/env.hpp"
#include "cgmarl/numeric.hpp"

namespace cgmarl {

struct PromptBundle {
    std::string system_text;
    std::string user_text;
    int n = 0;
    std::string prompt_hash;  // fnv1a-64 hex digest of system + user text
};

// Deterministic zero-shot prompt: task description in the system text,
// indexed summaries plus the output instruction in the user text. Throws on
// duplicate or missing agent indices.
PromptBundle build_prompt(const std::vector<ObservationSummary>& summaries,
                          const ScenarioSpec& spec);

std::string fnv1a64_hex(const std::string& s);

struct RawAdjacency {
    Matrix matrix;
    std::string source_text;
    std::string provider_id;
    std::string model_id;
    int clamped_entries = 0;  // entries outside [0,1] clamped during parsing
};

struct ParseFailure {
    enum class Reason { no_matrix, wrong_shape, non_numeric };
    Reason reason;
    std::string message;
};

// Locates the first JSON array-of-arrays in free-form text (code fences and
// surrounding prose tolerated), validates the n-by-n shape and clamps entries
// into [0,1].
std::variant<RawAdjacency, ParseFailure> parse_adjacency(const std::string& text, int n);

// JSON text form of a matrix; parse_adjacency(serialize_matrix(m), n) == m.
std::string serialize_matrix(const Matrix& m);

struct GraphPrior {
    Matrix adjacency;  // post-processed A, n x n
    std::string prompt_hash;
    std::string provider;
    bool fallback = false;
};

// The three post-processing stages, in order: symmetrize, row-normalize
// (degenerate rows replaced by uniform 1/n), add self-loops.
Matrix symmetrize(const Matrix& raw);
Matrix row_normalize(const Matrix& sym);
GraphPrior postprocess(const RawAdjacency& raw);

// Uniform prior used whenever querying or parsing fails: A = I + ones/n.
GraphPrior uniform_fallback_prior(int n);

enum class ProviderKind { http_chat, mock_uniform, mock_heuristic };

std::string to_string(ProviderKind k);
std::optional<ProviderKind> provider_kind_from_string(const std::string& name);

struct ProviderConfig {
    ProviderKind kind = ProviderKind::mock_uniform;
    std::string base_url;          // http_chat only
    std::string model = "local";
    double temperature = 0.0;
    int max_tokens = 256;
    int timeout_ms = 30000;
    int retry_count = 2;
    std::string cache_dir;         // empty disables the response cache

    void validate() const;
};

struct ProviderFailure {
    enum class Category { network, protocol, timeout };
    Category category;
    std::string message;
};

std::string to_string(ProviderFailure::Category c);

struct Completion {
    std::string text;
    std::string provider_id;
    std::string model_id;
    bool from_cache = false;
};

// Blocking chat-completions client with a file cache keyed by
// (prompt hash, model). Mock kinds synthesize their response text locally.
class ProviderClient {
public:
    explicit ProviderClient(ProviderConfig cfg);

    std::variant<Completion, ProviderFailure> complete(const PromptBundle& bundle,
                                                       const ScenarioSpec& spec);
    // complete + parse; parse failures surface as protocol failures.
    std::variant<RawAdjacency, ProviderFailure> query(const PromptBundle& bundle,
                                                      const ScenarioSpec& spec);

    const ProviderConfig& config() const { return cfg_; }
    long network_requests() const { return network_requests_; }

private:
    std::optional<std::string> cache_lookup(const std::string& key) const;
    void cache_store(const std::string& key, const PromptBundle& bundle,
                     const std::string& response) const;

    ProviderConfig cfg_;
    long network_requests_ = 0;
};

// Deterministic mock adjacencies (zero diagonal, pre-postprocessing).
Matrix mock_uniform_adjacency(int n);
Matrix mock_heuristic_adjacency(const ScenarioSpec& spec);

struct PriorResult {
    GraphPrior prior;
    PromptBundle prompt;
    std::string raw_response;  // empty when every attempt failed
    std::string failure;       // last failure message when falling back
};

// describe -> build_prompt -> query (with retries) -> postprocess. Total:
// exhausted retries or a parse failure yield the uniform fallback prior.
PriorResult prior_for_episode(const std::vector<AgentObservation>& observations,
                              const ScenarioSpec& spec, ProviderClient& client,
                              const TemplateSet& templates);

}  // namespace cgmarl
