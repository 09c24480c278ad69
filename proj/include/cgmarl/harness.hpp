#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgmarl/env.hpp"
#include "cgmarl/learn.hpp"
#include "cgmarl/prior.hpp"

namespace cgmarl {

struct ExperimentConfig {
    std::vector<Scenario> scenarios;
    std::vector<Method> methods;
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    TrainConfig train;
    ProviderConfig provider;
    std::string output_dir = "results";
    std::string template_dir;  // empty: repo default
    // Raw [env] overrides applied on top of each scenario's defaults.
    std::map<std::string, std::string> env_overrides;

    void validate() const;
};

// Flat sectioned key=value format; unknown keys rejected with line numbers.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::string& source_name);
// Canonical text form; load(serialize(cfg)) reproduces cfg exactly.
std::string serialize_config(const ExperimentConfig& cfg);

ScenarioSpec scenario_spec_for(const ExperimentConfig& cfg, Scenario scenario);
void apply_env_override(ScenarioSpec& spec, const std::string& key, const std::string& value);

struct ResultsRow {
    Scenario scenario;
    Method method;
    double mean = 0.0;
    double stddev = 0.0;  // population std across completed seeds
    int completed_seeds = 0;
    std::vector<uint64_t> failed_seeds;
    std::vector<double> per_seed_returns;
};

struct ResultsTable {
    std::vector<ResultsRow> rows;  // config order: scenarios outer, methods inner

    std::string to_text() const;
    std::string to_csv() const;
};

double mean_of(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);

struct RunOutcome {
    bool ok = false;
    double final_return = 0.0;  // mean over the final greedy evaluation block
    std::string error;
};

// Trains one (scenario, method, seed) run, writing log.csv and checkpoint.bin
// under out_dir when non-empty.
RunOutcome run_single(const ExperimentConfig& cfg, Scenario scenario, Method method,
                      uint64_t seed, const std::string& out_dir);

// Full grid; per-run artifacts under
// <output_dir>/<scenario>/<method>/seed_<s>/, aggregate results.csv and
// results.txt at the top. `jobs` bounds parallel seed workers.
ResultsTable run_experiment(const ExperimentConfig& cfg, int jobs = 1);

}  // namespace cgmarl
