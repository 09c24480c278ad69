#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <variant>

#include "CLI11.hpp"
#include "json.hpp"

#include "cgmarl/describe.hpp"
#include "cgmarl/env.hpp"
#include "cgmarl/harness.hpp"
#include "cgmarl/learn.hpp"
#include "cgmarl/prior.hpp"

using namespace cgmarl;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct ProviderFlags {
    std::string kind = "mock_uniform";
    std::string base_url;
    std::string model = "local";
    double temperature = 0.0;
    int max_tokens = 256;
    int timeout_ms = 30000;
    int retries = 2;
    std::string cache_dir;
};

void add_provider_flags(CLI::App* cmd, ProviderFlags& pf) {
    cmd->add_option("--provider", pf.kind, "Provider kind: http|mock_uniform|mock_heuristic")
        ->capture_default_str();
    cmd->add_option("--base-url", pf.base_url,
                    "Chat-completions base URL (default: $PRIOR_PROVIDER_URL)");
    cmd->add_option("--model", pf.model, "Model name sent to the provider")
        ->capture_default_str();
    cmd->add_option("--temperature", pf.temperature, "Sampling temperature")
        ->capture_default_str();
    cmd->add_option("--max-tokens", pf.max_tokens, "Response token cap")->capture_default_str();
    cmd->add_option("--timeout-ms", pf.timeout_ms, "Request timeout")->capture_default_str();
    cmd->add_option("--retries", pf.retries, "Retry count on provider failure")
        ->capture_default_str();
    cmd->add_option("--cache-dir", pf.cache_dir, "Response cache directory");
}

ProviderConfig to_provider_config(const ProviderFlags& pf) {
    ProviderConfig cfg;
    const auto kind = provider_kind_from_string(pf.kind);
    if (!kind) throw std::invalid_argument("unknown provider kind '" + pf.kind + "'");
    cfg.kind = *kind;
    cfg.base_url = pf.base_url;
    if (cfg.base_url.empty()) {
        // Explicit flags win over the environment.
        if (const char* env = std::getenv("PRIOR_PROVIDER_URL")) cfg.base_url = env;
    }
    cfg.model = pf.model;
    cfg.temperature = pf.temperature;
    cfg.max_tokens = pf.max_tokens;
    cfg.timeout_ms = pf.timeout_ms;
    cfg.retry_count = pf.retries;
    cfg.cache_dir = pf.cache_dir;
    cfg.validate();
    return cfg;
}

ScenarioSpec spec_from_name(const std::string& name) {
    const auto sc = scenario_from_string(name);
    if (!sc) throw std::invalid_argument("unknown scenario '" + name + "'");
    return ScenarioSpec::defaults(*sc);
}

const TemplateSet& templates_from(const std::string& dir) {
    if (dir.empty()) return TemplateSet::defaults();
    static TemplateSet loaded;
    loaded = TemplateSet::load_dir(dir);
    return loaded;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(row);
    }
    return rows;
}

int cmd_describe(const std::string& scenario, uint64_t seed, const std::string& template_dir,
                 bool as_json) {
    const ScenarioSpec spec = spec_from_name(scenario);
    const ResetResult rr = reset(spec, seed);
    const auto summaries = describe_all(rr.observations, spec, templates_from(template_dir));
    if (as_json) {
        json out = json::array();
        for (const auto& s : summaries)
            out.push_back({{"agent", s.agent_index},
                           {"role", spec.role(s.agent_index)},
                           {"text", s.text}});
        std::cout << out.dump(2) << "\n";
    } else {
        for (const auto& s : summaries)
            std::cout << "Agent " << s.agent_index << " (" << spec.role(s.agent_index)
                      << "): " << s.text << "\n";
    }
    return kExitOk;
}

int cmd_gen_prior(const std::string& scenario, uint64_t seed, const ProviderFlags& pf,
                  const std::string& template_dir, bool dry_run, bool as_json) {
    const ScenarioSpec spec = spec_from_name(scenario);
    const ResetResult rr = reset(spec, seed);
    const TemplateSet& templates = templates_from(template_dir);

    if (dry_run) {
        const PromptBundle bundle =
            build_prompt(describe_all(rr.observations, spec, templates), spec);
        if (as_json) {
            std::cout << json{{"scenario", scenario},
                              {"seed", seed},
                              {"prompt_hash", bundle.prompt_hash},
                              {"system", bundle.system_text},
                              {"user", bundle.user_text}}
                             .dump(2)
                      << "\n";
        } else {
            std::cout << "prompt hash: " << bundle.prompt_hash << "\n\n[system]\n"
                      << bundle.system_text << "\n\n[user]\n" << bundle.user_text << "\n";
        }
        return kExitOk;
    }

    ProviderClient client(to_provider_config(pf));
    const PriorResult res = prior_for_episode(rr.observations, spec, client, templates);
    if (as_json) {
        std::cout << json{{"scenario", scenario},
                          {"seed", seed},
                          {"fallback", res.prior.fallback},
                          {"provider", res.prior.provider},
                          {"prompt_hash", res.prior.prompt_hash},
                          {"adjacency", matrix_to_json(res.prior.adjacency)},
                          {"system", res.prompt.system_text},
                          {"user", res.prompt.user_text},
                          {"raw_response", res.raw_response},
                          {"failure", res.failure}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << "scenario: " << scenario << " seed: " << seed << "\n";
        std::cout << "provider: " << res.prior.provider
                  << " fallback: " << (res.prior.fallback ? "true" : "false") << "\n";
        std::cout << "prompt hash: " << res.prior.prompt_hash << "\n";
        std::cout << "A = " << serialize_matrix(res.prior.adjacency) << "\n";
        std::cout << "\n[system]\n" << res.prompt.system_text << "\n\n[user]\n"
                  << res.prompt.user_text << "\n";
        if (!res.raw_response.empty())
            std::cout << "\n[raw response]\n" << res.raw_response << "\n";
        if (!res.failure.empty()) std::cout << "\n[last failure]\n" << res.failure << "\n";
    }
    return kExitOk;
}

int cmd_train(const std::string& scenario, const std::string& method_name, uint64_t seed,
              long steps, const std::string& out_dir, const std::string& prior_mode_name,
              const std::string& config_path, const ProviderFlags& pf, bool provider_flags_used,
              const std::string& template_dir) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    const auto method = method_from_string(method_name);
    if (!method) throw std::invalid_argument("unknown method '" + method_name + "'");

    ScenarioSpec spec = spec_from_name(scenario);
    for (const auto& [key, value] : cfg.env_overrides) apply_env_override(spec, key, value);

    TrainConfig tc = cfg.train;
    if (steps > 0) tc.total_timesteps = steps;
    if (!prior_mode_name.empty()) {
        // An explicit flag wins over the config file.
        const auto pm = prior_mode_from_string(prior_mode_name);
        if (!pm) throw std::invalid_argument("unknown prior mode '" + prior_mode_name + "'");
        tc.prior_mode = *pm;
    }
    if (*method == Method::ours && tc.prior_mode == GraphPriorMode::none)
        tc.prior_mode = GraphPriorMode::uniform;
    if (*method != Method::ours) tc.prior_mode = GraphPriorMode::none;
    const ProviderConfig provider = (config_path.empty() || provider_flags_used)
                                        ? to_provider_config(pf)
                                        : cfg.provider;

    const TemplateSet* templates = nullptr;
    TemplateSet loaded;
    if (!template_dir.empty()) {
        loaded = TemplateSet::load_dir(template_dir);
        templates = &loaded;
    }

    Trainer trainer(spec, *method, tc, provider, seed, templates);
    std::string log_path;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log_path = out_dir + "/log.csv";
    }
    const TrainingLog log = trainer.run_training(log_path);
    if (!out_dir.empty()) trainer.save_checkpoint(out_dir + "/checkpoint.bin");
    if (!log.rows.empty())
        std::cout << "final greedy return: " << log.rows.back().mean_eval_return << " over "
                  << trainer.env_steps() << " steps, " << trainer.episodes_run()
                  << " episodes\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& scenario,
             const std::string& method_name, int episodes, uint64_t seed,
             const ProviderFlags& pf, const std::string& prior_mode_name, bool as_json) {
    if (!std::filesystem::exists(checkpoint)) {
        std::cerr << "error: checkpoint not found: " << checkpoint << "\n";
        return kExitUsage;
    }
    const auto method = method_from_string(method_name);
    if (!method) throw std::invalid_argument("unknown method '" + method_name + "'");
    const ScenarioSpec spec = spec_from_name(scenario);
    TrainConfig tc;
    if (*method == Method::ours) {
        const auto pm = prior_mode_from_string(prior_mode_name);
        if (!pm) throw std::invalid_argument("unknown prior mode '" + prior_mode_name + "'");
        tc.prior_mode = *pm;
    }
    Trainer trainer(spec, *method, tc, to_provider_config(pf), seed);
    trainer.load_checkpoint(checkpoint);
    const double mean_return = trainer.greedy_eval(episodes, /*stream=*/7'000'000);
    if (as_json)
        std::cout << json{{"mean_return", mean_return}, {"episodes", episodes}}.dump(2) << "\n";
    else
        std::cout << "greedy mean return over " << episodes << " episodes: " << mean_return
                  << "\n";
    return kExitOk;
}

int cmd_experiment(const std::string& config_path, int jobs) {
    const ExperimentConfig cfg = load_config(config_path);
    const ResultsTable table = run_experiment(cfg, jobs);
    std::cout << table.to_text();
    if (!cfg.output_dir.empty())
        std::cout << "\nwrote " << cfg.output_dir << "/results.csv and results.txt\n";
    return kExitOk;
}

int cmd_validate_provider(const ProviderFlags& pf, bool as_json) {
    const ProviderConfig cfg = to_provider_config(pf);
    ProviderClient client(cfg);

    // Fixed three-agent probe, independent of any environment.
    ScenarioSpec probe_spec = ScenarioSpec::defaults(Scenario::cooperative_push);
    std::vector<ObservationSummary> summaries;
    const char* texts[3] = {
        "Agent 0 is a pusher; it sees the object at close range to the east and the target "
        "at far range to the north",
        "Agent 1 is a pusher; it sees the object at close range to the west and teammate 0 "
        "at close range to the southwest",
        "Agent 2 is a pusher; it sees the object at medium range to the north and the "
        "target at far range to the northeast",
    };
    for (int i = 0; i < 3; ++i)
        summaries.push_back({i, texts[i], Scenario::cooperative_push});
    const PromptBundle bundle = build_prompt(summaries, probe_spec);

    const auto start = std::chrono::steady_clock::now();
    const auto completion = client.complete(bundle, probe_spec);
    const double latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();

    json report;
    report["provider"] = to_string(cfg.kind);
    report["model"] = cfg.model;
    report["latency_ms"] = latency_ms;

    if (const auto* fail = std::get_if<ProviderFailure>(&completion)) {
        report["ok"] = false;
        report["failure_category"] = to_string(fail->category);
        report["failure"] = fail->message;
        std::cout << (as_json ? report.dump(2)
                              : "FAIL (" + to_string(fail->category) + "): " + fail->message)
                  << "\n";
        return kExitRuntime;
    }

    const Completion& c = std::get<Completion>(completion);
    const auto parsed = parse_adjacency(c.text, bundle.n);
    if (const auto* fail = std::get_if<ParseFailure>(&parsed)) {
        report["ok"] = false;
        report["parse_failure"] = fail->message;
        report["raw_response"] = c.text;
        if (as_json)
            std::cout << report.dump(2) << "\n";
        else
            std::cout << "FAIL (parse): " << fail->message << "\nraw response:\n" << c.text
                      << "\n";
        return kExitRuntime;
    }

    const RawAdjacency& raw = std::get<RawAdjacency>(parsed);
    double symmetry_error = 0.0;
    for (int r = 0; r < raw.matrix.rows; ++r)
        for (int col = 0; col < raw.matrix.cols; ++col)
            symmetry_error = std::max(
                symmetry_error, std::abs(raw.matrix.at(r, col) - raw.matrix.at(col, r)));

    report["ok"] = true;
    report["symmetry_error"] = symmetry_error;
    report["clamped_entries"] = raw.clamped_entries;
    report["adjacency"] = matrix_to_json(raw.matrix);
    if (as_json) {
        std::cout << report.dump(2) << "\n";
    } else {
        std::cout << "PASS: parsed a " << raw.matrix.rows << "x" << raw.matrix.cols
                  << " matrix in " << latency_ms << " ms\n";
        std::cout << "symmetry error max|A - A^T| = " << symmetry_error << "\n";
        if (symmetry_error > 1e-9)
            std::cout << "warning: response matrix is not symmetric\n";
        if (raw.clamped_entries > 0)
            std::cout << "warning: " << raw.clamped_entries << " entries clamped into [0,1]\n";
        std::cout << "A^ = " << serialize_matrix(raw.matrix) << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coordination-graph priors for cooperative multi-agent RL"};
    app.require_subcommand(1);

    std::string scenario = "speaker_listener";
    std::string method = "qmix";
    std::string prior_mode;
    std::string eval_prior_mode = "uniform";
    std::string template_dir;
    std::string out_dir;
    std::string config_path;
    std::string checkpoint;
    uint64_t seed = 0;
    long steps = 0;
    int episodes = 100;
    int jobs = 1;
    bool as_json = false;
    bool dry_run = false;
    ProviderFlags pf;

    app.add_flag("--json", as_json, "Machine-readable JSON output");

    CLI::App* describe_cmd =
        app.add_subcommand("describe", "Print per-agent observation summaries after a reset");
    describe_cmd->add_option("--scenario", scenario, "Scenario name")->capture_default_str();
    describe_cmd->add_option("--seed", seed, "Reset seed")->capture_default_str();
    describe_cmd->add_option("--templates", template_dir, "Template directory override");

    CLI::App* gen_cmd =
        app.add_subcommand("gen-prior", "Generate a coordination-graph prior for a reset");
    gen_cmd->add_option("--scenario", scenario, "Scenario name")->capture_default_str();
    gen_cmd->add_option("--seed", seed, "Reset seed")->capture_default_str();
    gen_cmd->add_option("--templates", template_dir, "Template directory override");
    gen_cmd->add_flag("--dry-run", dry_run, "Print the prompt and skip the provider");
    add_provider_flags(gen_cmd, pf);

    CLI::App* train_cmd = app.add_subcommand("train", "Train one (scenario, method, seed) run");
    train_cmd->add_option("--scenario", scenario, "Scenario name")->capture_default_str();
    train_cmd->add_option("--method", method, "iql|vdn|qmix|ours")->capture_default_str();
    train_cmd->add_option("--seed", seed, "Run seed")->capture_default_str();
    train_cmd->add_option("--steps", steps, "Total environment timesteps (0: config default)");
    train_cmd->add_option("--out", out_dir, "Output directory for log.csv and checkpoint.bin");
    train_cmd->add_option("--prior-mode", prior_mode,
                          "Graph prior mode for 'ours': uniform|mock_heuristic|llm "
                          "(default: config value, else uniform)");
    train_cmd->add_option("--config", config_path, "Experiment config supplying defaults");
    train_cmd->add_option("--templates", template_dir, "Template directory override");
    add_provider_flags(train_cmd, pf);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a saved checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint, "Path to checkpoint.bin")->required();
    eval_cmd->add_option("--scenario", scenario, "Scenario name")->capture_default_str();
    eval_cmd->add_option("--method", method, "iql|vdn|qmix|ours")->capture_default_str();
    eval_cmd->add_option("--episodes", episodes, "Evaluation episode count")
        ->capture_default_str();
    eval_cmd->add_option("--seed", seed, "Evaluation seed")->capture_default_str();
    eval_cmd->add_option("--prior-mode", eval_prior_mode, "Prior mode when method is 'ours'")
        ->capture_default_str();
    add_provider_flags(eval_cmd, pf);

    CLI::App* exp_cmd =
        app.add_subcommand("experiment", "Run a scenario x method x seed grid from a config");
    exp_cmd->add_option("--config", config_path, "Experiment config file")->required();
    exp_cmd->add_option("--jobs", jobs, "Parallel seed workers")->capture_default_str();

    CLI::App* validate_cmd =
        app.add_subcommand("validate-provider", "Probe a provider with a fixed 3-agent prompt");
    add_provider_flags(validate_cmd, pf);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (describe_cmd->parsed()) return cmd_describe(scenario, seed, template_dir, as_json);
        if (gen_cmd->parsed())
            return cmd_gen_prior(scenario, seed, pf, template_dir, dry_run, as_json);
        if (train_cmd->parsed()) {
            bool provider_flags_used = false;
            for (const char* opt : {"--provider", "--base-url", "--model", "--temperature",
                                    "--max-tokens", "--timeout-ms", "--retries", "--cache-dir"})
                if (train_cmd->count(opt) > 0) provider_flags_used = true;
            return cmd_train(scenario, method, seed, steps, out_dir, prior_mode, config_path,
                             pf, provider_flags_used, template_dir);
        }
        if (eval_cmd->parsed())
            return cmd_eval(checkpoint, scenario, method, episodes, seed, pf, eval_prior_mode,
                            as_json);
        if (exp_cmd->parsed()) return cmd_experiment(config_path, jobs);
        if (validate_cmd->parsed()) return cmd_validate_provider(pf, as_json);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
