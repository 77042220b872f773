#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rtsub/dml.hpp"
#include "rtsub/harness.hpp"

namespace {

using rtsub::harness::ConfigError;
using rtsub::harness::ExperimentConfig;

std::size_t default_threads() {
    if (const char* env = std::getenv("RTSUB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
        throw ConfigError(std::string("RTSUB_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

struct RunOptions {
    std::string config_path;
    std::string experiment;
    std::map<std::string, std::string> flags;
    std::vector<std::string> settings;
    bool timing = false;
};

void add_run_options(CLI::App* cmd, RunOptions& opts, bool allow_experiment) {
    cmd->add_option("-c,--config", opts.config_path, "Key-value configuration file");
    if (allow_experiment) {
        cmd->add_option("--experiment", opts.experiment, "Experiment kind");
    }
    for (const char* key : {"n", "p", "L", "J", "alpha", "reps", "seed", "threads", "out"}) {
        cmd->add_option(std::string("--") + key, opts.flags[key], std::string("Override '") + key + "'");
    }
    cmd->add_option("--set", opts.settings, "Extra key=value override (repeatable)");
    cmd->add_flag("--timing", opts.timing, "Report wall time in the summary");
}

ExperimentConfig build_config(const RunOptions& opts, const std::string& forced_experiment) {
    const std::string experiment = forced_experiment.empty() ? opts.experiment : forced_experiment;
    ExperimentConfig config;
    if (!opts.config_path.empty()) {
        config = rtsub::harness::load_config(opts.config_path, experiment);
    } else if (!experiment.empty()) {
        config = rtsub::harness::default_config(experiment);
    } else {
        throw ConfigError("either --config or --experiment is required");
    }
    config.threads = default_threads();
    for (const auto& [key, value] : opts.flags) {
        if (!value.empty()) {
            rtsub::harness::apply_setting(config, key, value);
        }
    }
    for (const std::string& kv : opts.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        rtsub::harness::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (config.threads == 0) {
        throw ConfigError("threads must be at least 1");
    }
    rtsub::harness::validate(config);
    return config;
}

int execute(const RunOptions& opts, const std::string& forced_experiment) {
    const ExperimentConfig config = build_config(opts, forced_experiment);
    const auto start = std::chrono::steady_clock::now();
    const auto records = rtsub::harness::run_experiment(config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::ostream* summary = &std::cout;
    if (config.out.empty()) {
        rtsub::harness::write_csv(std::cout, config, records);
        summary = &std::cerr;
    } else {
        std::ofstream file(config.out, std::ios::binary);
        if (!file) {
            throw std::runtime_error("cannot write output file: " + config.out);
        }
        rtsub::harness::write_csv(file, config, records);
        if (!file) {
            throw std::runtime_error("failed writing output file: " + config.out);
        }
    }
    rtsub::harness::print_summary(*summary, config, rtsub::harness::summarize(records));
    if (opts.timing) {
        *summary << "wall time: " << seconds << " s (" << config.threads << " threads)\n";
    }
    return 0;
}

struct DmlCiOptions {
    std::string data_path;
    std::size_t n = 500;
    std::size_t L = 2;
    std::size_t J = 50;
    double alpha = 0.05;
    double epsilon = 0.1;
    double theta0 = 1.0;
    std::uint64_t seed = 1;
    std::size_t k = 0;
};

rtsub::dml::PLMData read_plm_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read data file: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ConfigError("data file is empty: " + path);
    }
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    int iy = -1, id = -1, ix = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        if (header[i] == "Y") iy = i;
        if (header[i] == "D") id = i;
        if (header[i] == "X") ix = i;
    }
    if (iy < 0 || id < 0 || ix < 0) {
        throw ConfigError("data file needs columns Y, D and X");
    }
    rtsub::dml::PLMData data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
        data.Y.push_back(cells.at(iy));
        data.D.push_back(cells.at(id));
        data.X.push_back(cells.at(ix));
    }
    return data;
}

int execute_dml_ci(const DmlCiOptions& o) {
    rtsub::dml::PLMData data;
    if (!o.data_path.empty()) {
        data = read_plm_csv(o.data_path);
    } else {
        rtsub::Stream rng = rtsub::make_stream(o.seed, {0});
        data = rtsub::dml::gen_plm_data(o.n, o.theta0, rng);
    }
    rtsub::dml::DMLOptions opts;
    opts.L = o.L;
    opts.J = o.J;
    opts.alpha = o.alpha;
    opts.epsilon = o.epsilon;
    opts.seed = o.seed;
    opts.threads = default_threads();
    const auto learner = rtsub::dml::knn_regressor(o.k ? std::optional<std::size_t>(o.k) : std::nullopt);
    const auto r = rtsub::dml::dml_rank_ci(data, learner, opts);
    std::printf("n                 %zu\n", data.size());
    std::printf("L                 %zu\n", o.L);
    std::printf("m                 %zu\n", r.m);
    std::printf("B                 %zu\n", r.B);
    std::printf("theta_dml         %.10g\n", r.theta_dml);
    for (std::size_t l = 0; l < r.theta_per_fold.size(); ++l) {
        std::printf("theta_fold_%-6zu %.10g\n", l + 1, r.theta_per_fold[l]);
    }
    std::printf("sigma_plugin      %.10g\n", r.sigma_plugin);
    std::printf("sigma_ls          %.10g\n", r.sigma_ls);
    std::printf("rank_ci           [%.10g, %.10g]\n", r.ci_lower, r.ci_upper);
    std::printf("plugin_ci         [%.10g, %.10g]\n", r.plugin_lower, r.plugin_upper);
    std::printf("rho_times_Lm1     %.10g\n", r.fold_correlation_diag * static_cast<double>(o.L - 1));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank-transformed subsampling experiments"};
    app.require_subcommand(1);

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "Run a Monte Carlo experiment");
    add_run_options(run, run_opts, true);

    RunOptions rep_opts;
    auto* replication = app.add_subcommand("replication", "Estimate non-replication probabilities");
    add_run_options(replication, rep_opts, false);

    RunOptions merge_opts;
    auto* merge = app.add_subcommand("merge-compare", "Compare aggregation with conservative p-value merging");
    add_run_options(merge, merge_opts, false);

    DmlCiOptions dml_opts;
    auto* dml_ci = app.add_subcommand("dml-ci", "Cross-fitted DML estimate with rank-transformed subsampling CI");
    dml_ci->add_option("--data", dml_opts.data_path, "CSV file with columns Y, D, X");
    dml_ci->add_option("--n", dml_opts.n, "Sample size when simulating");
    dml_ci->add_option("--L", dml_opts.L, "Number of folds");
    dml_ci->add_option("--J", dml_opts.J, "Subsampling blocks");
    dml_ci->add_option("--alpha", dml_opts.alpha, "Level");
    dml_ci->add_option("--epsilon", dml_opts.epsilon, "Trimming for the slope fit");
    dml_ci->add_option("--theta0", dml_opts.theta0, "True effect when simulating");
    dml_ci->add_option("--seed", dml_opts.seed, "Master seed");
    dml_ci->add_option("--k", dml_opts.k, "Neighbours for k-NN (0 = default)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return execute(run_opts, "");
        if (*replication) return execute(rep_opts, "replication");
        if (*merge) return execute(merge_opts, "merge-compare");
        return execute_dml_ci(dml_opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
