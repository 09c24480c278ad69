#include "cgmarl/describe.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef CGMARL_TEMPLATE_DIR
#define CGMARL_TEMPLATE_DIR "templates"
#endif

namespace cgmarl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

const char* kScenarioFiles[] = {"speaker_listener", "reference", "cooperative_push", "adversary"};

int one_hot_index(const Vector& v, int offset, int size) {
    for (int i = 0; i < size; ++i)
        if (v[offset + i] != 0.0) return i;
    return -1;
}

std::string fill_placeholders(const std::string& tpl,
                              const std::map<std::string, std::string>& fields) {
    std::string out;
    out.reserve(tpl.size());
    size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            size_t close = tpl.find('}', i);
            if (close == std::string::npos)
                throw std::runtime_error("template: unterminated placeholder");
            const std::string name = tpl.substr(i + 1, close - i - 1);
            auto it = fields.find(name);
            if (it == fields.end())
                throw std::runtime_error("template: unknown placeholder {" + name + "}");
            out += it->second;
            i = close + 1;
        } else {
            out += tpl[i];
            ++i;
        }
    }
    return out;
}

}  // namespace

TemplateSet TemplateSet::load_dir(const std::string& dir) {
    TemplateSet set;
    for (const char* name : kScenarioFiles) {
        const std::string path = dir + "/" + name + ".txt";
        std::ifstream in(path);
        if (!in) throw std::runtime_error("TemplateSet: cannot open " + path);
        std::string line;
        std::string current_role;
        while (std::getline(in, line)) {
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[' && t.back() == ']') {
                current_role = trim(t.substr(1, t.size() - 2));
                continue;
            }
            if (current_role.empty())
                throw std::runtime_error("TemplateSet: text before any [role] in " + path);
            const std::string key = std::string(name) + "/" + current_role;
            if (set.templates_.count(key))
                throw std::runtime_error("TemplateSet: duplicate template for " + key);
            set.templates_[key] = t;
        }
    }
    return set;
}

const TemplateSet& TemplateSet::defaults() {
    static const TemplateSet set = [] {
        const char* env = std::getenv("CGMARL_TEMPLATES");
        return load_dir(env ? env : CGMARL_TEMPLATE_DIR);
    }();
    return set;
}

const std::string& TemplateSet::for_role(Scenario scenario, const std::string& role) const {
    const std::string key = to_string(scenario) + "/" + role;
    auto it = templates_.find(key);
    if (it == templates_.end())
        throw std::runtime_error("TemplateSet: no template for " + key);
    return it->second;
}

std::string distance_bucket(double d) {
    if (d < 0.3) return "close";
    if (d < 0.8) return "medium";
    return "far";
}

std::string direction_bucket(double dx, double dy) {
    static const char* kNames[8] = {"east",      "northeast", "north", "northwest",
                                    "west",      "southwest", "south", "southeast"};
    const double deg = std::atan2(dy, dx) * 180.0 / M_PI;
    int idx = static_cast<int>(std::floor((deg + 22.5) / 45.0));
    idx = ((idx % 8) + 8) % 8;
    return kNames[idx];
}

ObservationSummary describe(const AgentObservation& obs, int agent_index,
                            const ScenarioSpec& spec, const TemplateSet& templates) {
    const ObsLayout layout = obs_layout(spec, agent_index);
    if (obs.values.size() != layout.total)
        throw std::invalid_argument("describe: observation length " +
                                    std::to_string(obs.values.size()) + " does not match " +
                                    to_string(spec.scenario) + " agent " +
                                    std::to_string(agent_index) + " (expected " +
                                    std::to_string(layout.total) + ")");
    const std::string role = spec.role(agent_index);
    if (!obs.role.empty() && obs.role != role)
        throw std::invalid_argument("describe: observation role '" + obs.role +
                                    "' does not match scenario role '" + role + "'");

    std::vector<std::string> entities;
    std::vector<std::string> status;
    for (const ObsField& f : layout.fields) {
        switch (f.kind) {
            case ObsField::Kind::own_velocity:
                break;
            case ObsField::Kind::relative_position: {
                const double dx = obs.values[f.offset];
                const double dy = obs.values[f.offset + 1];
                const double d = std::hypot(dx, dy);
                entities.push_back(f.label + " at " + distance_bucket(d) + " range to the " +
                                   direction_bucket(dx, dy));
                break;
            }
            case ObsField::Kind::goal_one_hot: {
                const int g = one_hot_index(obs.values, f.offset, f.size);
                status.push_back("the goal is landmark " + std::to_string(g));
                break;
            }
            case ObsField::Kind::teammate_goal_one_hot: {
                const int g = one_hot_index(obs.values, f.offset, f.size);
                status.push_back("the partner's target is landmark " + std::to_string(g));
                break;
            }
            case ObsField::Kind::comm_one_hot: {
                const int sym = one_hot_index(obs.values, f.offset, f.size);
                if (sym < 0)
                    status.push_back("no signal has been received yet");
                else
                    status.push_back("the last received signal is symbol " + std::to_string(sym));
                break;
            }
        }
    }

    std::map<std::string, std::string> fields;
    fields["agent_index"] = std::to_string(agent_index);
    fields["role"] = role;
    std::string entity_list;
    for (size_t i = 0; i < entities.size(); ++i) {
        if (i) entity_list += ", ";
        entity_list += entities[i];
    }
    fields["entity_list"] = entity_list.empty() ? "nothing nearby" : entity_list;
    std::string status_text;
    for (size_t i = 0; i < status.size(); ++i) {
        if (i) status_text += "; ";
        status_text += status[i];
    }
    fields["status"] = status_text;

    std::string text = fill_placeholders(templates.for_role(spec.scenario, role), fields);
    for (char c : text)
        if (c == '\n' || c == '\r')
            throw std::runtime_error("describe: template produced a line break");
    return ObservationSummary{agent_index, text, spec.scenario};
}

ObservationSummary describe(const AgentObservation& obs, int agent_index,
                            const ScenarioSpec& spec) {
    return describe(obs, agent_index, spec, TemplateSet::defaults());
}

std::vector<ObservationSummary> describe_all(const std::vector<AgentObservation>& obs,
                                             const ScenarioSpec& spec,
                                             const TemplateSet& templates) {
    std::vector<ObservationSummary> out;
    out.reserve(obs.size());
    for (size_t i = 0; i < obs.size(); ++i)
        out.push_back(describe(obs[i], static_cast<int>(i), spec, templates));
    return out;
}

}  // namespace cgmarl
