#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgmarl/env.hpp"

namespace cgmarl {

struct ObservationSummary {
    int agent_index = 0;
    std::string text;
    Scenario scenario = Scenario::speaker_listener;
};

// Sentence templates, one file per scenario with a [role] section per agent
// role. Ships in templates/; any directory with the same file names works.
class TemplateSet {
public:
    static TemplateSet load_dir(const std::string& dir);
    // The repo's templates/ directory (compile-time default), overridable via
    // the CGMARL_TEMPLATES environment variable.
    static const TemplateSet& defaults();

    const std::string& for_role(Scenario scenario, const std::string& role) const;

private:
    // keyed by "<scenario>/<role>"
    std::map<std::string, std::string> templates_;
};

// Distance buckets: close < 0.3, medium < 0.8, far >= 0.8 world units.
std::string distance_bucket(double d);
// Eight compass sectors, +x = east, +y = north.
std::string direction_bucket(double dx, double dy);

// The deterministic observation-to-text map. Operates on the local
// observation only; throws std::invalid_argument when the observation does
// not match the scenario layout.
ObservationSummary describe(const AgentObservation& obs, int agent_index,
                            const ScenarioSpec& spec, const TemplateSet& templates);
ObservationSummary describe(const AgentObservation& obs, int agent_index,
                            const ScenarioSpec& spec);

std::vector<ObservationSummary> describe_all(const std::vector<AgentObservation>& obs,
                                             const ScenarioSpec& spec,
                                             const TemplateSet& templates);

}  // namespace cgmarl
