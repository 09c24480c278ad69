#include "cgmarl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace cgmarl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& msg) {
    throw std::runtime_error(source + ":" + std::to_string(line) + ": " + msg);
}

long to_long(const std::string& source, int line, const std::string& key,
             const std::string& value) {
    try {
        size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        fail(source, line, "key '" + key + "': expected integer, got '" + value + "'");
    }
}

double to_double(const std::string& source, int line, const std::string& key,
                 const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        fail(source, line, "key '" + key + "': expected number, got '" + value + "'");
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const std::set<std::string>& env_override_keys() {
    static const std::set<std::string> keys = {
        "n_agents",      "n_landmarks",    "t_max",
        "dt",            "damping",        "contact_stiffness",
        "contact_margin", "contact_force_cap", "agent_radius",
        "landmark_radius", "object_radius", "adversary_radius",
        "agent_mass",    "object_mass",    "adversary_mass",
        "force_mag",     "push_force_threshold", "time_penalty",
        "arrival_bonus", "tag_penalty",    "oob_limit",
        "oob_coeff",
    };
    return keys;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (scenarios.empty()) throw std::invalid_argument("experiment: scenario list is empty");
    if (methods.empty()) throw std::invalid_argument("experiment: method list is empty");
    if (seeds.empty()) throw std::invalid_argument("experiment: seeds list is empty");
    std::set<uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size())
        throw std::invalid_argument("experiment: seeds must be distinct");
    train.validate();
    provider.validate();
}

ExperimentConfig parse_config(const std::string& text, const std::string& source_name) {
    ExperimentConfig cfg;
    cfg.seeds.clear();
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    bool seeds_set = false;

    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section != "experiment" && section != "train" && section != "provider" &&
                section != "env")
                fail(source_name, line_no, "unknown section [" + section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail(source_name, line_no, "expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            fail(source_name, line_no, "key '" + key + "' outside any section");

        if (section == "experiment") {
            if (key == "scenarios") {
                for (const std::string& name : split_list(value)) {
                    auto s = scenario_from_string(name);
                    if (!s) fail(source_name, line_no, "unknown scenario '" + name + "'");
                    cfg.scenarios.push_back(*s);
                }
            } else if (key == "methods") {
                for (const std::string& name : split_list(value)) {
                    auto m = method_from_string(name);
                    if (!m) fail(source_name, line_no, "unknown method '" + name + "'");
                    cfg.methods.push_back(*m);
                }
            } else if (key == "seeds") {
                for (const std::string& s : split_list(value))
                    cfg.seeds.push_back(static_cast<uint64_t>(to_long(source_name, line_no, key, s)));
                seeds_set = true;
            } else if (key == "output_dir") {
                cfg.output_dir = value;
            } else if (key == "template_dir") {
                cfg.template_dir = value;
            } else {
                fail(source_name, line_no, "unknown key '" + key + "' in [experiment]");
            }
        } else if (section == "train") {
            TrainConfig& tc = cfg.train;
            if (key == "total_timesteps") tc.total_timesteps = to_long(source_name, line_no, key, value);
            else if (key == "buffer_capacity") tc.buffer_capacity = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "batch_size") tc.batch_size = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "learning_rate") tc.learning_rate = to_double(source_name, line_no, key, value);
            else if (key == "gamma") tc.gamma = to_double(source_name, line_no, key, value);
            else if (key == "epsilon_start") tc.epsilon_start = to_double(source_name, line_no, key, value);
            else if (key == "epsilon_end") tc.epsilon_end = to_double(source_name, line_no, key, value);
            else if (key == "epsilon_anneal_steps") tc.epsilon_anneal_steps = to_long(source_name, line_no, key, value);
            else if (key == "target_update_interval") tc.target_update_interval = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "updates_per_episode") tc.updates_per_episode = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "eval_interval") tc.eval_interval = to_long(source_name, line_no, key, value);
            else if (key == "eval_episodes") tc.eval_episodes = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "hidden_dim") tc.hidden_dim = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "gnn_layers") tc.gnn_layers = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "mixing_dim") tc.mixing_dim = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "qnet_hidden") tc.qnet_hidden = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "prior_mode") {
                auto m = prior_mode_from_string(value);
                if (!m) fail(source_name, line_no, "unknown prior mode '" + value + "'");
                tc.prior_mode = *m;
            } else
                fail(source_name, line_no, "unknown key '" + key + "' in [train]");
        } else if (section == "provider") {
            ProviderConfig& pc = cfg.provider;
            if (key == "kind") {
                auto k = provider_kind_from_string(value);
                if (!k) fail(source_name, line_no, "unknown provider kind '" + value + "'");
                pc.kind = *k;
            } else if (key == "base_url") pc.base_url = value;
            else if (key == "model") pc.model = value;
            else if (key == "temperature") pc.temperature = to_double(source_name, line_no, key, value);
            else if (key == "max_tokens") pc.max_tokens = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "timeout_ms") pc.timeout_ms = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "retry_count") pc.retry_count = static_cast<int>(to_long(source_name, line_no, key, value));
            else if (key == "cache_dir") pc.cache_dir = value;
            else fail(source_name, line_no, "unknown key '" + key + "' in [provider]");
        } else if (section == "env") {
            if (!env_override_keys().count(key))
                fail(source_name, line_no, "unknown key '" + key + "' in [env]");
            to_double(source_name, line_no, key, value);  // numeric validation only
            cfg.env_overrides[key] = value;
        }
    }
    if (!seeds_set) cfg.seeds = {0, 1, 2, 3, 4};
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[experiment]\n";
    out << "scenarios = ";
    for (size_t i = 0; i < cfg.scenarios.size(); ++i)
        out << (i ? ", " : "") << to_string(cfg.scenarios[i]);
    out << "\nmethods = ";
    for (size_t i = 0; i < cfg.methods.size(); ++i)
        out << (i ? ", " : "") << to_string(cfg.methods[i]);
    out << "\nseeds = ";
    for (size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? ", " : "") << cfg.seeds[i];
    out << "\noutput_dir = " << cfg.output_dir;
    out << "\ntemplate_dir = " << cfg.template_dir;
    out << "\n\n[train]\n";
    const TrainConfig& tc = cfg.train;
    out << "total_timesteps = " << tc.total_timesteps << "\n";
    out << "buffer_capacity = " << tc.buffer_capacity << "\n";
    out << "batch_size = " << tc.batch_size << "\n";
    out << "learning_rate = " << format_double(tc.learning_rate) << "\n";
    out << "gamma = " << format_double(tc.gamma) << "\n";
    out << "epsilon_start = " << format_double(tc.epsilon_start) << "\n";
    out << "epsilon_end = " << format_double(tc.epsilon_end) << "\n";
    out << "epsilon_anneal_steps = " << tc.epsilon_anneal_steps << "\n";
    out << "target_update_interval = " << tc.target_update_interval << "\n";
    out << "updates_per_episode = " << tc.updates_per_episode << "\n";
    out << "eval_interval = " << tc.eval_interval << "\n";
    out << "eval_episodes = " << tc.eval_episodes << "\n";
    out << "hidden_dim = " << tc.hidden_dim << "\n";
    out << "gnn_layers = " << tc.gnn_layers << "\n";
    out << "mixing_dim = " << tc.mixing_dim << "\n";
    out << "qnet_hidden = " << tc.qnet_hidden << "\n";
    out << "prior_mode = " << to_string(tc.prior_mode) << "\n";
    out << "\n[provider]\n";
    const ProviderConfig& pc = cfg.provider;
    out << "kind = " << to_string(pc.kind) << "\n";
    out << "base_url = " << pc.base_url << "\n";
    out << "model = " << pc.model << "\n";
    out << "temperature = " << format_double(pc.temperature) << "\n";
    out << "max_tokens = " << pc.max_tokens << "\n";
    out << "timeout_ms = " << pc.timeout_ms << "\n";
    out << "retry_count = " << pc.retry_count << "\n";
    out << "cache_dir = " << pc.cache_dir << "\n";
    if (!cfg.env_overrides.empty()) {
        out << "\n[env]\n";
        for (const auto& [key, value] : cfg.env_overrides) out << key << " = " << value << "\n";
    }
    return out.str();
}

void apply_env_override(ScenarioSpec& spec, const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return std::stoi(value); };
    if (key == "n_agents") spec.n_agents = i();
    else if (key == "n_landmarks") spec.n_landmarks = i();
    else if (key == "t_max") spec.t_max = i();
    else if (key == "dt") spec.dt = d();
    else if (key == "damping") spec.damping = d();
    else if (key == "contact_stiffness") spec.contact_stiffness = d();
    else if (key == "contact_margin") spec.contact_margin = d();
    else if (key == "contact_force_cap") spec.contact_force_cap = d();
    else if (key == "agent_radius") spec.agent_radius = d();
    else if (key == "landmark_radius") spec.landmark_radius = d();
    else if (key == "object_radius") spec.object_radius = d();
    else if (key == "adversary_radius") spec.adversary_radius = d();
    else if (key == "agent_mass") spec.agent_mass = d();
    else if (key == "object_mass") spec.object_mass = d();
    else if (key == "adversary_mass") spec.adversary_mass = d();
    else if (key == "force_mag") spec.force_mag = d();
    else if (key == "push_force_threshold") spec.push_force_threshold = d();
    else if (key == "time_penalty") spec.time_penalty = d();
    else if (key == "arrival_bonus") spec.arrival_bonus = d();
    else if (key == "tag_penalty") spec.tag_penalty = d();
    else if (key == "oob_limit") spec.oob_limit = d();
    else if (key == "oob_coeff") spec.oob_coeff = d();
    else throw std::invalid_argument("env override: unknown key '" + key + "'");
}

ScenarioSpec scenario_spec_for(const ExperimentConfig& cfg, Scenario scenario) {
    ScenarioSpec spec = ScenarioSpec::defaults(scenario);
    for (const auto& [key, value] : cfg.env_overrides) apply_env_override(spec, key, value);
    spec.validate();
    return spec;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

RunOutcome run_single(const ExperimentConfig& cfg, Scenario scenario, Method method,
                      uint64_t seed, const std::string& out_dir) {
    RunOutcome outcome;
    try {
        const ScenarioSpec spec = scenario_spec_for(cfg, scenario);
        TrainConfig tc = cfg.train;
        if (method != Method::ours) tc.prior_mode = GraphPriorMode::none;

        TemplateSet templates;
        const TemplateSet* templates_ptr = nullptr;
        if (!cfg.template_dir.empty()) {
            templates = TemplateSet::load_dir(cfg.template_dir);
            templates_ptr = &templates;
        }

        std::string log_path;
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            log_path = out_dir + "/log.csv";
        }

        Trainer trainer(spec, method, tc, cfg.provider, seed, templates_ptr);
        const TrainingLog log = trainer.run_training(log_path);
        if (!out_dir.empty()) trainer.save_checkpoint(out_dir + "/checkpoint.bin");
        if (log.rows.empty()) throw std::runtime_error("run produced no evaluation rows");
        outcome.final_return = log.rows.back().mean_eval_return;
        outcome.ok = true;
    } catch (const std::exception& e) {
        outcome.ok = false;
        outcome.error = e.what();
    }
    return outcome;
}

ResultsTable run_experiment(const ExperimentConfig& cfg, int jobs) {
    cfg.validate();
    if (jobs < 1) jobs = 1;

    struct Task {
        Scenario scenario;
        Method method;
        uint64_t seed;
        std::string dir;
    };
    std::vector<Task> tasks;
    for (Scenario scenario : cfg.scenarios)
        for (Method method : cfg.methods)
            for (uint64_t seed : cfg.seeds) {
                std::string dir;
                if (!cfg.output_dir.empty())
                    dir = cfg.output_dir + "/" + to_string(scenario) + "/" + to_string(method) +
                          "/seed_" + std::to_string(seed);
                tasks.push_back({scenario, method, seed, dir});
            }

    std::vector<RunOutcome> outcomes(tasks.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            const size_t k = next.fetch_add(1);
            if (k >= tasks.size()) break;
            const Task& t = tasks[k];
            outcomes[k] = run_single(cfg, t.scenario, t.method, t.seed, t.dir);
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    ResultsTable table;
    size_t k = 0;
    for (Scenario scenario : cfg.scenarios)
        for (Method method : cfg.methods) {
            ResultsRow row;
            row.scenario = scenario;
            row.method = method;
            for (size_t s = 0; s < cfg.seeds.size(); ++s, ++k) {
                const RunOutcome& o = outcomes[k];
                if (o.ok) {
                    row.per_seed_returns.push_back(o.final_return);
                } else {
                    row.failed_seeds.push_back(cfg.seeds[s]);
                }
            }
            row.completed_seeds = static_cast<int>(row.per_seed_returns.size());
            row.mean = mean_of(row.per_seed_returns);
            row.stddev = population_std(row.per_seed_returns);
            table.rows.push_back(std::move(row));
        }

    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream csv(cfg.output_dir + "/results.csv");
        csv << table.to_csv();
        std::ofstream txt(cfg.output_dir + "/results.txt");
        txt << table.to_text();
    }
    return table;
}

std::string ResultsTable::to_csv() const {
    std::ostringstream out;
    out << "scenario,method,mean_return,std_return,seeds_completed,seeds_failed\n";
    for (const ResultsRow& r : rows) {
        out << to_string(r.scenario) << "," << to_string(r.method) << ","
            << format_double(r.mean) << "," << format_double(r.stddev) << ","
            << r.completed_seeds << ",";
        for (size_t i = 0; i < r.failed_seeds.size(); ++i)
            out << (i ? " " : "") << r.failed_seeds[i];
        out << "\n";
    }
    return out.str();
}

std::string ResultsTable::to_text() const {
    std::ostringstream out;
    out << "Final test return (mean +/- population std across seeds)\n\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %-6s %12s %12s %8s\n", "scenario", "method", "mean",
                  "std", "seeds");
    out << buf;
    for (const ResultsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %-6s %12.3f %12.3f %8d\n",
                      to_string(r.scenario).c_str(), to_string(r.method).c_str(), r.mean,
                      r.stddev, r.completed_seeds);
        out << buf;
        if (!r.failed_seeds.empty()) {
            out << "    failed seeds:";
            for (uint64_t s : r.failed_seeds) out << " " << s;
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace cgmarl
