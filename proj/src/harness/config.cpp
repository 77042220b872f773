#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rtsub/harness.hpp"

namespace rtsub::harness {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(first, last - first + 1));
    if (out.size() >= 2 && (out.front() == '"' || out.front() == '\'') && out.back() == out.front()) {
        out = out.substr(1, out.size() - 2);
    }
    return out;
}

std::vector<std::string> split_list(const std::string& value) {
    std::string inner = trim(value);
    if (inner.size() >= 2 && inner.front() == '[' && inner.back() == ']') {
        inner = inner.substr(1, inner.size() - 2);
    }
    std::vector<std::string> items;
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            items.push_back(item);
        }
    }
    return items;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const std::string v = trim(value);
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid integer for '" + key + "': " + value);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const std::string v = trim(value);
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid integer for '" + key + "': " + value);
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) {
            throw ConfigError("");
        }
        return out;
    } catch (...) {
        throw ConfigError("invalid number for '" + key + "': " + value);
    }
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i ? "," : "") + items[i];
    }
    return out;
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds = {"gauss-location", "mean-test", "unimodal",     "verma",
                                                   "verma-scale",    "dml-table", "merge-compare", "replication"};
    return kinds;
}

ExperimentConfig default_config(const std::string& experiment) {
    ExperimentConfig c;
    c.experiment = experiment;
    if (experiment == "gauss-location") {
        c.L = 200;
        c.reps = 1;
        c.grid = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
        c.methods = {"power-single", "power-avg", "power-conservative", "nonrep-single", "nonrep-avg"};
    } else if (experiment == "mean-test") {
        c.grid = {0.0, 1.0, 2.0, 3.0, 4.0};
        c.methods = {"single", "avg", "adaptive", "conservative", "no.rank"};
    } else if (experiment == "unimodal") {
        c.n = 500;
        c.p = 2;
        c.J = 10;
        c.reps = 100;
        c.grid = {0.0, 1.0, 2.0};
        c.methods = {"single", "avg", "min", "adaptive"};
    } else if (experiment == "verma") {
        c.n = 1000;
        c.L = 20;
        c.reps = 200;
        c.grid = {0.0, 0.5, 1.0, 1.5};
        c.methods = {"single", "avg", "ipw"};
    } else if (experiment == "verma-scale") {
        c.n = 1000;
        c.L = 20;
        c.J = 10;
        c.reps = 100;
        c.grid = {0.0, 0.25, 0.5};
        c.methods = {"single", "avg"};
    } else if (experiment == "dml-table") {
        c.n = 500;
        c.L = 2;
        c.J = 50;
        c.reps = 300;
        c.grid = {500};
        c.methods = {"rank-ci", "dml", "rho"};
    } else if (experiment == "merge-compare") {
        c.n = 1000;
        c.L = 20;
        c.reps = 200;
        c.grid = {0.0, 1.0};
        c.methods = {"single", "avg", "M.arith", "M.geom", "M.Bonf", "M.Bonf-geom"};
    } else if (experiment == "replication") {
        c.base = "mean-test";
        c.reps = 100;
        c.grid = {0.0, 1.0, 2.0, 3.0, 4.0};
        c.methods = {"single", "avg"};
    } else {
        throw ConfigError("unknown experiment kind: " + experiment);
    }
    return c;
}

void apply_setting(ExperimentConfig& c, const std::string& raw_key, const std::string& value) {
    const std::string key = trim(raw_key);
    if (key == "experiment") {
        c.experiment = trim(value);
    } else if (key == "n") {
        c.n = parse_count(key, value);
    } else if (key == "p") {
        c.p = parse_count(key, value);
    } else if (key == "L") {
        c.L = parse_count(key, value);
    } else if (key == "J") {
        c.J = parse_count(key, value);
    } else if (key == "m") {
        c.m = parse_count(key, value);
    } else if (key == "alpha") {
        c.alpha = parse_real(key, value);
    } else if (key == "reps") {
        c.reps = parse_count(key, value);
    } else if (key == "seed") {
        c.seed = parse_u64(key, value);
    } else if (key == "grid") {
        c.grid.clear();
        for (const auto& item : split_list(value)) {
            c.grid.push_back(parse_real(key, item));
        }
    } else if (key == "methods") {
        c.methods = split_list(value);
    } else if (key == "threads") {
        c.threads = parse_count(key, value);
    } else if (key == "out") {
        c.out = trim(value);
    } else if (key == "rho") {
        c.rho = parse_real(key, value);
    } else if (key == "split_fraction") {
        c.split_fraction = parse_real(key, value);
    } else if (key == "n_perm") {
        c.n_perm = parse_count(key, value);
    } else if (key == "propensity") {
        c.propensity = trim(value);
    } else if (key == "mixture") {
        c.mixture = trim(value);
    } else if (key == "calibration_reps") {
        c.calibration_reps = parse_count(key, value);
    } else if (key == "theta0") {
        c.theta0 = parse_real(key, value);
    } else if (key == "epsilon") {
        c.epsilon = parse_real(key, value);
    } else if (key == "base") {
        c.base = trim(value);
    } else {
        throw ConfigError("unknown configuration key: " + key);
    }
}

ExperimentConfig parse_config(const std::string& text, const std::string& experiment_override) {
    std::vector<std::pair<std::string, std::string>> settings;
    std::string experiment = experiment_override;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        if (key == "experiment") {
            if (experiment_override.empty()) {
                experiment = value;
            }
        } else {
            settings.emplace_back(key, value);
        }
    }
    if (experiment.empty()) {
        throw ConfigError("configuration does not name an experiment");
    }
    ExperimentConfig config = default_config(experiment);
    for (const auto& [key, value] : settings) {
        apply_setting(config, key, value);
    }
    return config;
}

ExperimentConfig load_config(const std::string& path, const std::string& experiment_override) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read configuration file: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), experiment_override);
}

void validate(const ExperimentConfig& c) {
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.experiment) == kinds.end()) {
        throw ConfigError("unknown experiment kind: " + c.experiment);
    }
    if (c.reps < 1) throw ConfigError("reps must be at least 1");
    if (c.grid.empty()) throw ConfigError("effect grid must be nonempty");
    if (c.methods.empty()) throw ConfigError("method list must be nonempty");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
    if (c.L < 1) throw ConfigError("L must be at least 1");
    if (c.J < 1) throw ConfigError("J must be at least 1");
    if (c.p < 1) throw ConfigError("p must be at least 1");
    for (double g : c.grid) {
        if (!std::isfinite(g)) throw ConfigError("effect grid values must be finite");
    }
    if (c.experiment == "gauss-location" && !(c.rho >= 0.0 && c.rho < 1.0)) {
        throw ConfigError("rho must lie in [0,1)");
    }
    if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
    if (c.n_perm < 99) throw ConfigError("n_perm must be at least 99");
    if (c.calibration_reps < 199) throw ConfigError("calibration_reps must be at least 199");
    if (c.propensity != "true" && c.propensity != "fitted") throw ConfigError("propensity must be true or fitted");
    if (c.mixture != "ball" && c.mixture != "t") throw ConfigError("mixture must be ball or t");
    if (c.experiment == "unimodal" && c.mixture == "t" && c.p < 2) throw ConfigError("t mixture needs p >= 2");
    if (!(c.epsilon > 0.0 && c.epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
    if (c.experiment == "replication" && c.reps < 50) throw ConfigError("replication needs reps >= 50");
    if (c.experiment == "merge-compare" && c.base != "verma" && c.base != "mean-test") {
        throw ConfigError("merge-compare base must be verma or mean-test");
    }
    if (c.experiment == "replication" && c.base != "mean-test" && c.base != "verma") {
        throw ConfigError("replication base must be mean-test or verma");
    }
    if (c.experiment == "dml-table") {
        for (double g : c.grid) {
            if (!(g >= 8.0) || g != std::floor(g)) throw ConfigError("dml-table grid holds sample sizes >= 8");
        }
    }
}

std::string describe(const ExperimentConfig& c) {
    std::ostringstream s;
    s << "experiment=" << c.experiment << " n=" << c.n << " p=" << c.p << " L=" << c.L << " J=" << c.J
      << " m=" << (c.m ? std::to_string(*c.m) : std::string("auto")) << " alpha=" << format_number(c.alpha)
      << " reps=" << c.reps << " seed=" << c.seed << " grid=";
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
        s << (i ? "," : "") << format_number(c.grid[i]);
    }
    s << " methods=" << join(c.methods);
    if (c.experiment == "gauss-location") s << " rho=" << format_number(c.rho);
    if (c.experiment == "mean-test" || c.experiment == "unimodal" ||
        (c.experiment == "replication" && c.base == "mean-test") ||
        (c.experiment == "merge-compare" && c.base == "mean-test")) {
        s << " split_fraction=" << format_number(c.split_fraction);
    }
    if (c.experiment == "unimodal") s << " mixture=" << c.mixture << " calibration_reps=" << c.calibration_reps;
    if (c.experiment == "verma" || c.experiment == "verma-scale" ||
        ((c.experiment == "merge-compare" || c.experiment == "replication") && c.base == "verma")) {
        s << " n_perm=" << c.n_perm << " propensity=" << c.propensity;
    }
    if (c.experiment == "dml-table") s << " theta0=" << format_number(c.theta0) << " epsilon=" << format_number(c.epsilon);
    if (c.experiment == "merge-compare" || c.experiment == "replication") s << " base=" << c.base;
    return s.str();
}

}  // namespace rtsub::harness
