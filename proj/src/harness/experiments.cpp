#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string_view>

#include "rtsub/dist.hpp"
#include "rtsub/dml.hpp"
#include "rtsub/engine.hpp"
#include "rtsub/generators.hpp"
#include "rtsub/harness.hpp"
#include "rtsub/merge.hpp"
#include "rtsub/parallel.hpp"
#include "rtsub/plugins/dip.hpp"
#include "rtsub/plugins/split_mean.hpp"
#include "rtsub/plugins/verma.hpp"

namespace rtsub::harness {

namespace {

constexpr double NA = std::numeric_limits<double>::quiet_NaN();

constexpr std::uint64_t name_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    }
    return h;
}

void require_methods(const ExperimentConfig& c, std::initializer_list<std::string_view> allowed) {
    for (const std::string& m : c.methods) {
        if (std::find(allowed.begin(), allowed.end(), m) == allowed.end()) {
            throw ConfigError("method '" + m + "' is not available for experiment " + c.experiment);
        }
    }
}

bool wants(const std::vector<std::string>& methods, std::initializer_list<std::string_view> names) {
    return std::any_of(methods.begin(), methods.end(), [&](const std::string& m) {
        return std::find(names.begin(), names.end(), m) != names.end();
    });
}

struct Outcome {
    double decision = NA;
    double p_value = NA;
    double estimate = NA;
    double ci_lower = NA;
    double ci_upper = NA;
};

Outcome from_report(const TestReport& r) {
    return {r.reject ? 1.0 : 0.0, r.p_value, r.statistic, NA, NA};
}

EngineOptions engine_options(const ExperimentConfig& c, std::uint64_t seed) {
    EngineOptions o;
    o.L = c.L;
    o.alpha = c.alpha;
    o.J = c.J;
    o.m = c.m;
    o.seed = seed;
    o.threads = 1;
    return o;
}

// Evaluates the randomised-test methods shared by several experiments. The
// subsample calibration is built once and reused by every aggregate method.
std::vector<Outcome> evaluate_methods(const RandomizedStatistic& stat, std::size_t n, const ExperimentConfig& c,
                                      std::uint64_t engine_seed, const std::vector<std::string>& methods,
                                      const std::vector<Aggregator>& adaptive_menu) {
    const EngineOptions opts = engine_options(c, engine_seed);
    const std::vector<double> full = full_statistics(stat, n, c.L, engine_seed);
    std::optional<SubsampleCalibration> cal;
    if (wants(methods, {"avg", "min", "max", "adaptive", "no.rank"})) {
        cal = calibrate(stat, n, opts);
    }

    std::vector<Outcome> out;
    for (const std::string& m : methods) {
        if (m == "single") {
            const double t = full.front();
            const double crit = null_quantile(stat.null_marginal, 1.0 - c.alpha);
            out.push_back({t > crit ? 1.0 : 0.0, 1.0 - null_cdf(stat.null_marginal, t), t, NA, NA});
        } else if (m == "avg" || m == "min" || m == "max") {
            out.push_back(from_report(aggregate_decision(*cal, full, aggregator_by_name(m), c.alpha)));
        } else if (m == "adaptive") {
            out.push_back(from_report(adaptive_decision(*cal, full, adaptive_menu, c.alpha)));
        } else if (m == "no.rank") {
            SubsampleCalibration raw = *cal;
            raw.transformed = raw.raw;
            out.push_back(from_report(aggregate_decision(raw, full, mean_aggregator(), c.alpha)));
        } else if (m == "conservative") {
            const double s = std::accumulate(full.begin(), full.end(), 0.0) / static_cast<double>(full.size());
            const bool reject = merge::z_half_average_test(full, c.alpha);
            out.push_back({reject ? 1.0 : 0.0, std_normal_sf(s / 2.0), s, NA, NA});
        } else {
            throw ConfigError("unsupported method: " + m);
        }
    }
    return out;
}

using ReplicateFn = std::function<std::vector<Outcome>(std::size_t effect_index, double effect, std::uint64_t seed)>;

// Runs every (effect, replicate) task, possibly in parallel, and lays the
// records out in (effect, replicate, method) order.
std::vector<RunRecord> run_grid(const ExperimentConfig& c, const std::vector<std::string>& labels,
                                const ReplicateFn& fn) {
    const std::size_t tasks = c.grid.size() * c.reps;
    std::vector<std::vector<RunRecord>> buffers(tasks);
    parallel_for(tasks, std::max<std::size_t>(c.threads, 1), [&](std::size_t task) {
        const std::size_t e = task / c.reps;
        const std::size_t rep = task % c.reps;
        const std::uint64_t seed = replicate_seed(c, e, rep);
        const std::vector<Outcome> outcomes = fn(e, c.grid[e], seed);
        auto& buf = buffers[task];
        for (std::size_t k = 0; k < outcomes.size(); ++k) {
            const Outcome& o = outcomes[k];
            buf.push_back({c.experiment, labels[k], c.grid[e], rep, o.decision, o.p_value, o.estimate, o.ci_lower,
                           o.ci_upper, seed});
        }
    });
    std::vector<RunRecord> records;
    for (auto& buf : buffers) {
        records.insert(records.end(), std::make_move_iterator(buf.begin()), std::make_move_iterator(buf.end()));
    }
    return records;
}

std::uint64_t data_seed(std::uint64_t seed) { return derive_seed(seed, {0}); }
std::uint64_t engine_seed(std::uint64_t seed, std::uint64_t run = 1) { return derive_seed(seed, {run}); }

std::vector<RunRecord> run_gauss_location(const ExperimentConfig& c) {
    require_methods(c, {"power-single", "power-avg", "power-conservative", "nonrep-single", "nonrep-avg"});
    std::vector<RunRecord> records;
    for (double mu : c.grid) {
        for (const std::string& m : c.methods) {
            merge::GaussLocationModel model{mu, c.rho, m.ends_with("single") ? std::size_t{1} : c.L, c.alpha};
            double value = 0.0;
            if (m == "power-single" || m == "power-avg") {
                value = merge::gauss_power(model);
            } else if (m == "power-conservative") {
                value = merge::gauss_conservative_power(model);
            } else {
                value = merge::gauss_nonreplication(model);
            }
            records.push_back({c.experiment, m, mu, 0, NA, NA, value, NA, NA, c.seed});
        }
    }
    return records;
}

std::vector<RunRecord> run_mean_test(const ExperimentConfig& c) {
    require_methods(c, {"single", "avg", "adaptive", "conservative", "no.rank", "max"});
    const std::vector<Aggregator> menu = {mean_aggregator(), max_aggregator()};
    return run_grid(c, c.methods, [&](std::size_t, double tau, std::uint64_t seed) {
        Stream rng(data_seed(seed));
        auto X = std::make_shared<const Eigen::MatrixXd>(sim::gen_mean_test_data(c.n, c.p, tau, rng));
        const RandomizedStatistic stat = plugins::split_mean_test(X, {c.split_fraction});
        return evaluate_methods(stat, c.n, c, engine_seed(seed), c.methods, menu);
    });
}

std::vector<RunRecord> run_unimodal(const ExperimentConfig& c) {
    require_methods(c, {"single", "avg", "min", "adaptive"});
    const std::vector<Aggregator> menu = {mean_aggregator(), min_aggregator()};
    auto calibrator = std::make_shared<plugins::DipCalibrator>(c.calibration_reps,
                                                               derive_seed(c.seed, {stream_tag::calibrate}));
    const plugins::DipHuntConfig dip{c.split_fraction, c.calibration_reps};
    return run_grid(c, c.methods, [&](std::size_t, double tau, std::uint64_t seed) {
        Stream rng(data_seed(seed));
        auto X = std::make_shared<const Eigen::MatrixXd>(c.mixture == "t" ? sim::gen_t_mixture(c.n, c.p, tau, rng)
                                                                          : sim::gen_ball_mixture(c.n, c.p, tau, rng));
        const RandomizedStatistic stat = plugins::dip_hunt_test(X, dip, calibrator);
        return evaluate_methods(stat, c.n, c, engine_seed(seed), c.methods, menu);
    });
}

plugins::TrialDataset verma_data(const ExperimentConfig& c, double effect, std::uint64_t seed, bool scale) {
    Stream rng(data_seed(seed));
    if (scale) {
        const double nu = effect == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / effect;
        return plugins::gen_trial_data(c.n, 0.0, plugins::TrialVariant::scale_t(nu), rng);
    }
    return plugins::gen_trial_data(c.n, effect, plugins::TrialVariant::location(), rng);
}

std::vector<RunRecord> run_verma(const ExperimentConfig& c, bool scale) {
    if (scale) {
        require_methods(c, {"single", "avg"});
    } else {
        require_methods(c, {"single", "avg", "ipw"});
    }
    const auto kind = scale ? plugins::VermaStatistic::Mmd : plugins::VermaStatistic::Cov;
    const auto source = plugins::propensity_source_from_string(c.propensity);
    return run_grid(c, c.methods, [&](std::size_t, double effect, std::uint64_t seed) {
        auto data = std::make_shared<const plugins::TrialDataset>(verma_data(c, effect, seed, scale));
        const RandomizedStatistic stat = plugins::verma_test(data, kind, source, c.n_perm);

        std::vector<std::string> engine_methods;
        for (const auto& m : c.methods) {
            if (m != "ipw") engine_methods.push_back(m);
        }
        const std::vector<Outcome> engine_out =
            evaluate_methods(stat, c.n, c, engine_seed(seed), engine_methods, {mean_aggregator()});
        std::vector<Outcome> out;
        std::size_t k = 0;
        for (const auto& m : c.methods) {
            if (m == "ipw") {
                std::vector<std::size_t> rows(data->size());
                std::iota(rows.begin(), rows.end(), std::size_t{0});
                const double p = plugins::ipw_pvalue(*data, rows, source);
                out.push_back({p < c.alpha ? 1.0 : 0.0, p, NA, NA, NA});
            } else {
                out.push_back(engine_out[k++]);
            }
        }
        return out;
    });
}

std::vector<RunRecord> run_dml_table(const ExperimentConfig& c) {
    require_methods(c, {"rank-ci", "dml", "rho"});
    const dml::NuisanceLearner learner = dml::knn_regressor();
    return run_grid(c, c.methods, [&](std::size_t, double effect, std::uint64_t seed) {
        const auto n = static_cast<std::size_t>(effect);
        Stream rng(data_seed(seed));
        const dml::PLMData data = dml::gen_plm_data(n, c.theta0, rng);
        dml::DMLOptions opts;
        opts.L = c.L;
        opts.J = c.J;
        opts.alpha = c.alpha;
        opts.epsilon = c.epsilon;
        opts.m = c.m;
        opts.seed = engine_seed(seed);
        const dml::DMLResult r = dml::dml_rank_ci(data, learner, opts);
        std::vector<Outcome> out;
        for (const auto& m : c.methods) {
            if (m == "rank-ci") {
                const bool covered = r.ci_lower <= c.theta0 && c.theta0 <= r.ci_upper;
                out.push_back({covered ? 1.0 : 0.0, NA, r.theta_dml, r.ci_lower, r.ci_upper});
            } else if (m == "dml") {
                const bool covered = r.plugin_lower <= c.theta0 && c.theta0 <= r.plugin_upper;
                out.push_back({covered ? 1.0 : 0.0, NA, r.theta_dml, r.plugin_lower, r.plugin_upper});
            } else {
                out.push_back({NA, NA, r.fold_correlation_diag * static_cast<double>(c.L - 1), NA, NA});
            }
        }
        return out;
    });
}

}  // namespace

std::uint64_t replicate_seed(const ExperimentConfig& config, std::size_t effect_index, std::size_t rep) {
    return derive_seed(config.seed, {stream_tag::replicate, name_hash(config.experiment), effect_index, rep});
}

std::vector<RunRecord> merge_compare(const ExperimentConfig& c) {
    require_methods(c, {"single", "avg", "M.arith", "M.geom", "M.Bonf", "M.Bonf-geom"});
    const bool verma = c.base == "verma";
    const auto source = plugins::propensity_source_from_string(c.propensity);
    return run_grid(c, c.methods, [&](std::size_t, double effect, std::uint64_t seed) {
        RandomizedStatistic stat;
        if (verma) {
            auto data = std::make_shared<const plugins::TrialDataset>(verma_data(c, effect, seed, false));
            stat = plugins::verma_test(data, plugins::VermaStatistic::Cov, source, c.n_perm);
        } else {
            Stream rng(data_seed(seed));
            auto X = std::make_shared<const Eigen::MatrixXd>(sim::gen_mean_test_data(c.n, c.p, effect, rng));
            stat = plugins::split_mean_test(X, {c.split_fraction});
        }
        const std::uint64_t eseed = engine_seed(seed);
        const std::vector<double> full = full_statistics(stat, c.n, c.L, eseed);
        std::vector<double> p(full.size());
        for (std::size_t l = 0; l < full.size(); ++l) {
            p[l] = std::clamp(1.0 - null_cdf(stat.null_marginal, full[l]), 0.0, 1.0);
        }
        std::optional<SubsampleCalibration> cal;
        if (wants(c.methods, {"avg"})) {
            cal = calibrate(stat, c.n, engine_options(c, eseed));
        }
        std::vector<Outcome> out;
        auto merged = [&](double q) { return Outcome{q <= c.alpha ? 1.0 : 0.0, q, NA, NA, NA}; };
        for (const auto& m : c.methods) {
            if (m == "single") {
                const double crit = null_quantile(stat.null_marginal, 1.0 - c.alpha);
                out.push_back({full[0] > crit ? 1.0 : 0.0, p[0], full[0], NA, NA});
            } else if (m == "avg") {
                out.push_back(from_report(aggregate_decision(*cal, full, mean_aggregator(), c.alpha)));
            } else if (m == "M.arith") {
                out.push_back(merged(merge::arithmetic(p)));
            } else if (m == "M.geom") {
                out.push_back(merged(merge::geometric(p)));
            } else if (m == "M.Bonf") {
                out.push_back(merged(merge::bonferroni(p)));
            } else {
                out.push_back(merged(merge::bonf_geom(p)));
            }
        }
        return out;
    });
}

std::vector<RunRecord> replication_probability(const ExperimentConfig& c) {
    require_methods(c, {"single", "avg", "adaptive"});
    const bool verma = c.base == "verma";
    const auto source = plugins::propensity_source_from_string(c.propensity);
    const std::vector<Aggregator> menu = {mean_aggregator(), max_aggregator()};
    return run_grid(c, c.methods, [&](std::size_t, double effect, std::uint64_t seed) {
        RandomizedStatistic stat;
        if (verma) {
            auto data = std::make_shared<const plugins::TrialDataset>(verma_data(c, effect, seed, false));
            stat = plugins::verma_test(data, plugins::VermaStatistic::Cov, source, c.n_perm);
        } else {
            Stream rng(data_seed(seed));
            auto X = std::make_shared<const Eigen::MatrixXd>(sim::gen_mean_test_data(c.n, c.p, effect, rng));
            stat = plugins::split_mean_test(X, {c.split_fraction});
        }
        const auto first = evaluate_methods(stat, c.n, c, engine_seed(seed, 1), c.methods, menu);
        const auto second = evaluate_methods(stat, c.n, c, engine_seed(seed, 2), c.methods, menu);
        std::vector<Outcome> out;
        for (std::size_t k = 0; k < first.size(); ++k) {
            out.push_back({first[k].decision != second[k].decision ? 1.0 : 0.0, NA, first[k].decision, NA, NA});
        }
        return out;
    });
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
    validate(config);
    const std::string& kind = config.experiment;
    if (kind == "gauss-location") return run_gauss_location(config);
    if (kind == "mean-test") return run_mean_test(config);
    if (kind == "unimodal") return run_unimodal(config);
    if (kind == "verma") return run_verma(config, false);
    if (kind == "verma-scale") return run_verma(config, true);
    if (kind == "dml-table") return run_dml_table(config);
    if (kind == "merge-compare") return merge_compare(config);
    return replication_probability(config);
}

}  // namespace rtsub::harness
