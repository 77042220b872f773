#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtsub::harness {

// Raised for malformed or inconsistent experiment configurations; the CLI maps
// it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string experiment;
    std::size_t n = 300;
    std::size_t p = 3;
    std::size_t L = 50;
    std::size_t J = 20;
    std::optional<std::size_t> m;
    double alpha = 0.05;
    std::size_t reps = 400;
    std::uint64_t seed = 1;
    std::vector<double> grid;
    std::vector<std::string> methods;
    std::size_t threads = 1;
    std::string out;

    // Experiment-specific knobs.
    double rho = 0.1;                   // gauss-location correlation
    double split_fraction = 0.5;        // mean-test and unimodal
    std::size_t n_perm = 199;           // verma permutation tests
    std::string propensity = "true";    // verma: true | fitted
    std::string mixture = "ball";       // unimodal: ball | t
    std::size_t calibration_reps = 199; // unimodal reference dips
    double theta0 = 1.0;                // dml-table
    double epsilon = 0.1;               // dml-table trimming
    std::string base = "verma";         // merge-compare / replication base experiment
};

const std::vector<std::string>& experiment_kinds();

// Desk-scale defaults for an experiment kind.
ExperimentConfig default_config(const std::string& experiment);

// Applies one `key = value` setting; list values are comma separated.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

// Parses a flat key-value file (one `key = value` per line, `#` comments).
// The experiment (from `experiment_override` if nonempty, else from the file)
// selects the defaults that the other keys refine.
ExperimentConfig parse_config(const std::string& text, const std::string& experiment_override = "");
ExperimentConfig load_config(const std::string& path, const std::string& experiment_override = "");

void validate(const ExperimentConfig& config);

// Settings that determine the results; thread count and output path excluded.
std::string describe(const ExperimentConfig& config);

struct RunRecord {
    std::string experiment;
    std::string method;
    double effect = 0.0;
    std::size_t replicate = 0;
    double decision = 0.0;  // 0/1 rejection or coverage; NaN when not applicable
    double p_value = 0.0;   // NaN when not applicable
    double estimate = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::uint64_t seed = 0;
};

inline constexpr const char* csv_schema_version = "rtsub-csv/1";

std::string format_number(double x);
void write_csv(std::ostream& out, const ExperimentConfig& config, const std::vector<RunRecord>& records);
std::string to_csv(const ExperimentConfig& config, const std::vector<RunRecord>& records);

struct SummaryRow {
    std::string method;
    double effect = 0.0;
    std::size_t count = 0;
    double rate = 0.0;  // mean of decision
    double rate_lower = 0.0;
    double rate_upper = 0.0;  // exact binomial 95% interval
    double mean_estimate = 0.0;
    double median_width = 0.0;
};

// Groups records by (method, effect) in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records);
void print_summary(std::ostream& out, const ExperimentConfig& config, const std::vector<SummaryRow>& rows);

// Seed of replicate `rep` at effect index `effect_index`.
std::uint64_t replicate_seed(const ExperimentConfig& config, std::size_t effect_index, std::size_t rep);

std::vector<RunRecord> run_experiment(const ExperimentConfig& config);
std::vector<RunRecord> replication_probability(const ExperimentConfig& config);
std::vector<RunRecord> merge_compare(const ExperimentConfig& config);

}  // namespace rtsub::harness
