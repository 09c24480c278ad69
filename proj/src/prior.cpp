#include "cgmarl/prior.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace cgmarl {

namespace {

using nlohmann::json;

std::string scenario_task_description(const ScenarioSpec& spec) {
    switch (spec.scenario) {
        case Scenario::speaker_listener:
            return "A stationary speaker observes which landmark is the goal and can only "
                   "emit one symbol per step; a mobile listener must reach the goal landmark "
                   "but cannot see which one it is. The team is rewarded when the listener "
                   "is near the goal landmark.";
        case Scenario::reference:
            return "Two mobile agents must each reach their own target landmark, but each "
                   "agent only observes its partner's target. The team is rewarded when "
                   "both agents are near their own targets.";
        case Scenario::cooperative_push:
            return "A team of agents must push a heavy object onto a target landmark. The "
                   "object is too heavy for any single agent to move alone and only moves "
                   "under joint force.";
        case Scenario::adversary:
            return "A team of agents must reach a target landmark while evading an "
                   "adversarial pursuer that tags nearby agents. The team is rewarded for "
                   "agents on the target and penalized for tagged agents.";
    }
    return "";
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Extracts the balanced bracket span starting at text[start] ('['), skipping
// string literals. Returns one past the closing bracket, or npos.
size_t balanced_span_end(const std::string& text, size_t start) {
    int depth = 0;
    bool in_string = false;
    for (size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[') {
            ++depth;
        } else if (c == ']') {
            --depth;
            if (depth == 0) return i + 1;
            if (depth < 0) return std::string::npos;
        }
    }
    return std::string::npos;
}

std::string cache_key(const PromptBundle& bundle, const std::string& model) {
    return fnv1a64_hex(bundle.prompt_hash + "|" + model);
}

}  // namespace

std::string fnv1a64_hex(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PromptBundle build_prompt(const std::vector<ObservationSummary>& summaries,
                          const ScenarioSpec& spec) {
    const int n = spec.n_agents;
    if (static_cast<int>(summaries.size()) != n)
        throw std::invalid_argument("build_prompt: expected " + std::to_string(n) +
                                    " summaries, got " + std::to_string(summaries.size()));
    std::vector<const ObservationSummary*> ordered(static_cast<size_t>(n), nullptr);
    for (const auto& s : summaries) {
        if (s.agent_index < 0 || s.agent_index >= n)
            throw std::invalid_argument("build_prompt: agent index " +
                                        std::to_string(s.agent_index) + " out of range");
        if (ordered[static_cast<size_t>(s.agent_index)])
            throw std::invalid_argument("build_prompt: duplicate summary for agent " +
                                        std::to_string(s.agent_index));
        ordered[static_cast<size_t>(s.agent_index)] = &s;
    }

    PromptBundle bundle;
    bundle.n = n;
    {
        std::ostringstream sys;
        sys << "You analyze coordination needs for a team of " << n
            << " agents in a cooperative task. Task: " << scenario_task_description(spec)
            << " Agent roles: ";
        for (int i = 0; i < n; ++i) {
            if (i) sys << ", ";
            sys << "agent " << i << " is a " << spec.role(i);
        }
        sys << ". Decide how strongly each pair of agents should coordinate right now.";
        bundle.system_text = sys.str();
    }
    {
        std::ostringstream user;
        user << "Current agent observations:\n";
        for (int i = 0; i < n; ++i)
            user << "Agent " << i << ": " << ordered[static_cast<size_t>(i)]->text << "\n";
        user << "Return only a valid " << n << "x" << n
             << " JSON matrix of real numbers in [0, 1], where entry [i][j] is the "
                "coordination affinity between agent i and agent j and larger values mean "
                "stronger coordination. The matrix must be symmetric. Do not include any "
                "explanation or other text.";
        bundle.user_text = user.str();
    }
    bundle.prompt_hash = fnv1a64_hex(bundle.system_text + "\x1f" + bundle.user_text);
    return bundle;
}

std::variant<RawAdjacency, ParseFailure> parse_adjacency(const std::string& text, int n) {
    if (n <= 0) return ParseFailure{ParseFailure::Reason::wrong_shape, "n must be positive"};
    size_t pos = 0;
    while ((pos = text.find('[', pos)) != std::string::npos) {
        // Only spans whose first element is itself an array qualify.
        size_t inner = pos + 1;
        while (inner < text.size() &&
               (text[inner] == ' ' || text[inner] == '\t' || text[inner] == '\n' ||
                text[inner] == '\r'))
            ++inner;
        if (inner >= text.size() || text[inner] != '[') {
            ++pos;
            continue;
        }
        const size_t end = balanced_span_end(text, pos);
        if (end == std::string::npos) {
            ++pos;
            continue;
        }
        const json j = json::parse(text.substr(pos, end - pos), nullptr, false);
        if (j.is_discarded() || !j.is_array() || j.empty() || !j[0].is_array()) {
            ++pos;
            continue;
        }
        // First JSON array-of-arrays found; validate it as the matrix.
        if (static_cast<int>(j.size()) != n)
            return ParseFailure{ParseFailure::Reason::wrong_shape,
                                "expected " + std::to_string(n) + " rows, got " +
                                    std::to_string(j.size())};
        RawAdjacency raw;
        raw.matrix = Matrix(n, n);
        raw.source_text = text;
        for (int r = 0; r < n; ++r) {
            if (!j[r].is_array() || static_cast<int>(j[r].size()) != n)
                return ParseFailure{ParseFailure::Reason::wrong_shape,
                                    "row " + std::to_string(r) + " is not a length-" +
                                        std::to_string(n) + " array"};
            for (int c = 0; c < n; ++c) {
                const auto& cell = j[r][c];
                if (!cell.is_number())
                    return ParseFailure{ParseFailure::Reason::non_numeric,
                                        "entry [" + std::to_string(r) + "][" +
                                            std::to_string(c) + "] is not a number"};
                double v = cell.get<double>();
                if (!std::isfinite(v))
                    return ParseFailure{ParseFailure::Reason::non_numeric,
                                        "entry [" + std::to_string(r) + "][" +
                                            std::to_string(c) + "] is not finite"};
                if (v < 0.0) {
                    v = 0.0;
                    raw.clamped_entries++;
                } else if (v > 1.0) {
                    v = 1.0;
                    raw.clamped_entries++;
                }
                raw.matrix.at(r, c) = v;
            }
        }
        return raw;
    }
    return ParseFailure{ParseFailure::Reason::no_matrix, "no JSON matrix found in text"};
}

std::string serialize_matrix(const Matrix& m) {
    std::string out = "[";
    for (int r = 0; r < m.rows; ++r) {
        if (r) out += ", ";
        out += "[";
        for (int c = 0; c < m.cols; ++c) {
            if (c) out += ", ";
            out += format_double(m.at(r, c));
        }
        out += "]";
    }
    out += "]";
    return out;
}

Matrix symmetrize(const Matrix& raw) {
    if (raw.rows != raw.cols)
        throw std::invalid_argument("symmetrize: matrix must be square, got " + raw.shape_str());
    Matrix out(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
        for (int c = 0; c < raw.cols; ++c) out.at(r, c) = 0.5 * (raw.at(r, c) + raw.at(c, r));
    return out;
}

Matrix row_normalize(const Matrix& sym) {
    const int n = sym.rows;
    Matrix out = sym;
    for (int r = 0; r < n; ++r) {
        double sum = 0.0;
        for (int c = 0; c < n; ++c) sum += out.at(r, c);
        if (sum < 1e-9) {
            // Degenerate row: maximum-entropy uniform weights.
            for (int c = 0; c < n; ++c) out.at(r, c) = 1.0 / n;
        } else {
            for (int c = 0; c < n; ++c) out.at(r, c) /= sum;
        }
    }
    return out;
}

GraphPrior postprocess(const RawAdjacency& raw) {
    require_finite(raw.matrix, "postprocess input");
    Matrix a = row_normalize(symmetrize(raw.matrix));
    for (int i = 0; i < a.rows; ++i) a.at(i, i) += 1.0;
    require_finite(a, "postprocess output");
    GraphPrior prior;
    prior.adjacency = std::move(a);
    prior.provider = raw.provider_id;
    prior.fallback = false;
    return prior;
}

GraphPrior uniform_fallback_prior(int n) {
    GraphPrior prior;
    prior.adjacency = Matrix(n, n, 1.0 / n);
    for (int i = 0; i < n; ++i) prior.adjacency.at(i, i) += 1.0;
    prior.provider = "fallback";
    prior.fallback = true;
    return prior;
}

std::string to_string(ProviderKind k) {
    switch (k) {
        case ProviderKind::http_chat: return "http_chat";
        case ProviderKind::mock_uniform: return "mock_uniform";
        case ProviderKind::mock_heuristic: return "mock_heuristic";
    }
    return "unknown";
}

std::optional<ProviderKind> provider_kind_from_string(const std::string& name) {
    if (name == "http_chat" || name == "http") return ProviderKind::http_chat;
    if (name == "mock_uniform") return ProviderKind::mock_uniform;
    if (name == "mock_heuristic") return ProviderKind::mock_heuristic;
    return std::nullopt;
}

void ProviderConfig::validate() const {
    if (kind == ProviderKind::http_chat && base_url.empty())
        throw std::invalid_argument("provider: http_chat requires a base URL");
    if (temperature < 0.0)
        throw std::invalid_argument("provider: temperature must be >= 0");
    if (retry_count < 0)
        throw std::invalid_argument("provider: retry count must be >= 0");
}

std::string to_string(ProviderFailure::Category c) {
    switch (c) {
        case ProviderFailure::Category::network: return "network";
        case ProviderFailure::Category::protocol: return "protocol";
        case ProviderFailure::Category::timeout: return "timeout";
    }
    return "unknown";
}

Matrix mock_uniform_adjacency(int n) {
    Matrix m(n, n, 1.0 / (n - 1));
    for (int i = 0; i < n; ++i) m.at(i, i) = 0.0;
    return m;
}

Matrix mock_heuristic_adjacency(const ScenarioSpec& spec) {
    const int n = spec.n_agents;
    auto pair_weight = [&](int i, int j) {
        const std::string ri = spec.role(i);
        const std::string rj = spec.role(j);
        if ((ri == "speaker" && rj == "listener") || (ri == "listener" && rj == "speaker"))
            return 1.0;
        if (ri == "navigator" && rj == "navigator") return 1.0;
        if (ri == "pusher" && rj == "pusher") return 0.8;
        if (ri == "evader" && rj == "evader") return 0.7;
        return 0.1;
    };
    Matrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) m.at(i, j) = pair_weight(i, j);
    return m;
}

ProviderClient::ProviderClient(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
}

std::optional<std::string> ProviderClient::cache_lookup(const std::string& key) const {
    if (cfg_.cache_dir.empty()) return std::nullopt;
    const std::filesystem::path path = std::filesystem::path(cfg_.cache_dir) / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::stringstream buf;
    buf << in.rdbuf();
    const json j = json::parse(buf.str(), nullptr, false);
    if (j.is_discarded() || !j.contains("response_text") || !j["response_text"].is_string())
        return std::nullopt;
    return j["response_text"].get<std::string>();
}

void ProviderClient::cache_store(const std::string& key, const PromptBundle& bundle,
                                 const std::string& response) const {
    if (cfg_.cache_dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(cfg_.cache_dir, ec);
    const json j = {
        {"prompt", bundle.system_text + "\n\n" + bundle.user_text},
        {"response_text", response},
        {"model", cfg_.model},
        {"timestamp",
         std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch()).count()},
    };
    static std::atomic<uint64_t> tmp_counter{0};
    const std::filesystem::path dir(cfg_.cache_dir);
    const std::filesystem::path tmp =
        dir / (key + ".tmp-" + std::to_string(tmp_counter.fetch_add(1)) + "-" +
               std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
    }
    // Atomic publish; losing a race to another writer is fine.
    std::filesystem::rename(tmp, dir / (key + ".json"), ec);
    if (ec) std::filesystem::remove(tmp, ec);
}

std::variant<Completion, ProviderFailure> ProviderClient::complete(const PromptBundle& bundle,
                                                                   const ScenarioSpec& spec) {
    if (cfg_.kind == ProviderKind::mock_uniform)
        return Completion{serialize_matrix(mock_uniform_adjacency(bundle.n)),
                          to_string(cfg_.kind), cfg_.model, false};
    if (cfg_.kind == ProviderKind::mock_heuristic)
        return Completion{serialize_matrix(mock_heuristic_adjacency(spec)),
                          to_string(cfg_.kind), cfg_.model, false};

    const std::string key = cache_key(bundle, cfg_.model);
    if (auto cached = cache_lookup(key))
        return Completion{*cached, to_string(cfg_.kind), cfg_.model, true};

    httplib::Client cli(cfg_.base_url);
    cli.set_connection_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
    cli.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);

    const json body = {
        {"model", cfg_.model},
        {"messages",
         {{{"role", "system"}, {"content", bundle.system_text}},
          {{"role", "user"}, {"content", bundle.user_text}}}},
        {"temperature", cfg_.temperature},
        {"max_tokens", cfg_.max_tokens},
    };
    network_requests_ += 1;
    auto res = cli.Post("/v1/chat/completions", body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        ProviderFailure::Category cat = ProviderFailure::Category::network;
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
            err == httplib::Error::Write)
            cat = ProviderFailure::Category::timeout;
        return ProviderFailure{cat, httplib::to_string(err)};
    }
    if (res->status < 200 || res->status >= 300)
        return ProviderFailure{ProviderFailure::Category::protocol,
                               "HTTP status " + std::to_string(res->status)};
    const json envelope = json::parse(res->body, nullptr, false);
    if (envelope.is_discarded() || !envelope.contains("choices") ||
        !envelope["choices"].is_array() || envelope["choices"].empty() ||
        !envelope["choices"][0].contains("message") ||
        !envelope["choices"][0]["message"].contains("content") ||
        !envelope["choices"][0]["message"]["content"].is_string())
        return ProviderFailure{ProviderFailure::Category::protocol,
                               "malformed chat-completions envelope"};
    const std::string text = envelope["choices"][0]["message"]["content"].get<std::string>();
    cache_store(key, bundle, text);
    return Completion{text, to_string(cfg_.kind), cfg_.model, false};
}

std::variant<RawAdjacency, ProviderFailure> ProviderClient::query(const PromptBundle& bundle,
                                                                  const ScenarioSpec& spec) {
    auto completion = complete(bundle, spec);
    if (auto* fail = std::get_if<ProviderFailure>(&completion)) return *fail;
    const Completion& c = std::get<Completion>(completion);
    auto parsed = parse_adjacency(c.text, bundle.n);
    if (auto* fail = std::get_if<ParseFailure>(&parsed))
        return ProviderFailure{ProviderFailure::Category::protocol, "parse: " + fail->message};
    RawAdjacency raw = std::get<RawAdjacency>(std::move(parsed));
    raw.provider_id = c.provider_id;
    raw.model_id = c.model_id;
    return raw;
}

PriorResult prior_for_episode(const std::vector<AgentObservation>& observations,
                              const ScenarioSpec& spec, ProviderClient& client,
                              const TemplateSet& templates) {
    PriorResult result;
    result.prompt = build_prompt(describe_all(observations, spec, templates), spec);
    const int attempts = client.config().retry_count + 1;
    for (int k = 0; k < attempts; ++k) {
        auto res = client.query(result.prompt, spec);
        if (auto* raw = std::get_if<RawAdjacency>(&res)) {
            result.prior = postprocess(*raw);
            result.prior.prompt_hash = result.prompt.prompt_hash;
            result.raw_response = raw->source_text;
            return result;
        }
        result.failure = to_string(std::get<ProviderFailure>(res).category) + ": " +
                         std::get<ProviderFailure>(res).message;
    }
    result.prior = uniform_fallback_prior(spec.n_agents);
    result.prior.prompt_hash = result.prompt.prompt_hash;
    return result;
}

}  // namespace cgmarl
