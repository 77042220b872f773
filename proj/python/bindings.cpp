#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rtsub/dist.hpp"
#include "rtsub/dml.hpp"
#include "rtsub/engine.hpp"
#include "rtsub/harness.hpp"
#include "rtsub/merge.hpp"
#include "rtsub/plugins/dip.hpp"
#include "rtsub/plugins/split_mean.hpp"
#include "rtsub/plugins/verma.hpp"

namespace py = pybind11;
using namespace rtsub;

namespace {

NullMarginal marginal_from(const std::string& name) {
    if (name == "normal") return NullMarginal::StdNormal;
    if (name == "uniform") return NullMarginal::Uniform01;
    throw std::invalid_argument("null marginal must be 'normal' or 'uniform'");
}

py::dict report_dict(const TestReport& r) {
    py::dict d;
    d["statistic"] = r.statistic;
    d["critical_value"] = r.critical_value;
    d["p_value"] = r.p_value;
    d["reject"] = r.reject;
    d["degenerate"] = r.degenerate;
    d["n"] = r.n;
    d["m"] = r.m;
    d["B"] = r.B;
    d["L"] = r.L;
    d["J"] = r.J;
    d["alpha"] = r.alpha;
    d["seed"] = r.seed;
    d["full_statistics"] = r.full_statistics;
    py::list per;
    for (const auto& a : r.per_aggregator) {
        py::dict e;
        e["name"] = a.name;
        e["statistic"] = a.statistic;
        e["p_value"] = a.p_value;
        per.append(e);
    }
    d["per_aggregator"] = per;
    return d;
}

EngineOptions engine_options(std::size_t L, double alpha, std::size_t J, std::optional<std::size_t> m,
                             std::uint64_t seed, std::size_t threads, bool rank_transform) {
    EngineOptions o;
    o.L = L;
    o.alpha = alpha;
    o.J = J;
    o.m = m;
    o.seed = seed;
    o.threads = threads;
    o.calibration = rank_transform ? Calibration::RankTransformed : Calibration::Raw;
    return o;
}

py::dict run_engine(const RandomizedStatistic& stat, std::size_t n, const std::vector<std::string>& aggregators,
                    const EngineOptions& opt) {
    std::vector<Aggregator> menu;
    for (const auto& a : aggregators) menu.push_back(aggregator_by_name(a));
    if (menu.empty()) throw std::invalid_argument("need at least one aggregator");
    TestReport r;
    {
        py::gil_scoped_release release;
        r = menu.size() == 1 ? aggregate_test(stat, n, menu[0], opt) : adaptive_test(stat, n, menu, opt);
    }
    return report_dict(r);
}

Eigen::MatrixXd to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    Eigen::MatrixXd X(a.shape(0), a.shape(1));
    auto v = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) X(i, j) = v(i, j);
    return X;
}

StatMatrix to_stat_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    StatMatrix H(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), H.values().begin());
    return H;
}

py::array_t<double> from_stat_matrix(const StatMatrix& H) {
    py::array_t<double> out({H.rows(), H.cols()});
    std::copy(H.values().begin(), H.values().end(), out.mutable_data());
    return out;
}

std::shared_ptr<const plugins::TrialDataset> trial_data(std::vector<int> a1, std::vector<double> l, std::vector<int> a2,
                                                        std::vector<double> y) {
    auto d = std::make_shared<plugins::TrialDataset>();
    d->A1 = std::move(a1);
    d->L = std::move(l);
    d->A2 = std::move(a2);
    d->Y = std::move(y);
    d->validate();
    return d;
}

}  // namespace

PYBIND11_MODULE(_rtsub, mod) {
    mod.doc() = "Rank-transformed subsampling for randomised tests";

    mod.def("std_normal_cdf", &std_normal_cdf);
    mod.def("std_normal_quantile", &std_normal_quantile);

    mod.def(
        "rank_transform",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& H, const std::string& marginal) {
            return from_stat_matrix(rank_transform(to_stat_matrix(H), marginal_from(marginal)));
        },
        py::arg("H"), py::arg("null_marginal") = "normal");

    mod.def(
        "aggregate_test",
        [](py::function statistic, std::size_t n, std::vector<std::string> aggregators, std::string marginal,
           std::size_t L, double alpha, std::size_t J, std::optional<std::size_t> m, std::uint64_t seed,
           std::size_t threads, bool rank_transform) {
            RandomizedStatistic stat{[statistic](std::span<const std::size_t> rows, Stream& rng) {
                                         const std::uint64_t s = rng();
                                         py::gil_scoped_acquire gil;
                                         py::array_t<std::size_t> idx(rows.size());
                                         std::copy(rows.begin(), rows.end(), idx.mutable_data());
                                         return statistic(idx, s).cast<double>();
                                     },
                                     marginal_from(marginal)};
            return run_engine(stat, n, aggregators,
                              engine_options(L, alpha, J, m, seed, threads, rank_transform));
        },
        py::arg("statistic"), py::arg("n"), py::arg("aggregators") = std::vector<std::string>{"mean"},
        py::arg("null_marginal") = "normal", py::arg("L") = 50, py::arg("alpha") = 0.05, py::arg("J") = 100,
        py::arg("m") = py::none(), py::arg("seed") = 0, py::arg("threads") = 1, py::arg("rank_transform") = true,
        "Multiple-split test of a Python statistic f(rows, seed) -> float.");

    mod.def(
        "mean_test",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& X, std::vector<std::string> aggregators,
           double split_fraction, std::size_t L, double alpha, std::size_t J, std::optional<std::size_t> m,
           std::uint64_t seed, std::size_t threads) {
            auto data = std::make_shared<const Eigen::MatrixXd>(to_matrix(X));
            const auto stat = plugins::split_mean_test(data, {split_fraction});
            return run_engine(stat, static_cast<std::size_t>(data->rows()), aggregators,
                              engine_options(L, alpha, J, m, seed, threads, true));
        },
        py::arg("X"), py::arg("aggregators") = std::vector<std::string>{"mean"}, py::arg("split_fraction") = 0.5,
        py::arg("L") = 50, py::arg("alpha") = 0.05, py::arg("J") = 100, py::arg("m") = py::none(),
        py::arg("seed") = 0, py::arg("threads") = 1);

    mod.def("dip_statistic", [](std::vector<double> x) { return plugins::dip_statistic(x); }, py::arg("x"));

    mod.def(
        "unimodality_test",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& X, std::vector<std::string> aggregators,
           double split_fraction, std::size_t calibration_reps, std::size_t L, double alpha, std::size_t J,
           std::optional<std::size_t> m, std::uint64_t seed, std::size_t threads) {
            auto data = std::make_shared<const Eigen::MatrixXd>(to_matrix(X));
            auto cal = std::make_shared<plugins::DipCalibrator>(calibration_reps,
                                                                derive_seed(seed, {stream_tag::calibrate}));
            const auto stat = plugins::dip_hunt_test(data, {split_fraction, calibration_reps}, cal);
            return run_engine(stat, static_cast<std::size_t>(data->rows()), aggregators,
                              engine_options(L, alpha, J, m, seed, threads, true));
        },
        py::arg("X"), py::arg("aggregators") = std::vector<std::string>{"mean"}, py::arg("split_fraction") = 0.5,
        py::arg("calibration_reps") = 199, py::arg("L") = 50, py::arg("alpha") = 0.05, py::arg("J") = 100,
        py::arg("m") = py::none(), py::arg("seed") = 0, py::arg("threads") = 1);

    mod.def(
        "verma_test",
        [](std::vector<int> a1, std::vector<double> l, std::vector<int> a2, std::vector<double> y,
           std::string statistic, std::string propensity, std::size_t n_perm, std::vector<std::string> aggregators,
           std::size_t L, double alpha, std::size_t J, std::optional<std::size_t> m, std::uint64_t seed,
           std::size_t threads) {
            auto data = trial_data(std::move(a1), std::move(l), std::move(a2), std::move(y));
            const auto stat = plugins::verma_test(data, plugins::verma_statistic_from_string(statistic),
                                                  plugins::propensity_source_from_string(propensity), n_perm);
            return run_engine(stat, data->size(), aggregators, engine_options(L, alpha, J, m, seed, threads, true));
        },
        py::arg("A1"), py::arg("L_cov"), py::arg("A2"), py::arg("Y"), py::arg("statistic") = "cov",
        py::arg("propensity") = "true", py::arg("n_perm") = 199,
        py::arg("aggregators") = std::vector<std::string>{"mean"}, py::arg("L") = 20, py::arg("alpha") = 0.05,
        py::arg("J") = 20, py::arg("m") = py::none(), py::arg("seed") = 0, py::arg("threads") = 1);

    mod.def(
        "gen_trial_data",
        [](std::size_t n, double tau, std::uint64_t seed) {
            Stream rng(seed);
            const auto d = plugins::gen_trial_data(n, tau, plugins::TrialVariant::location(), rng);
            py::dict out;
            out["A1"] = d.A1;
            out["L"] = d.L;
            out["A2"] = d.A2;
            out["Y"] = d.Y;
            return out;
        },
        py::arg("n"), py::arg("tau"), py::arg("seed") = 0);

    mod.def(
        "dml_rank_ci",
        [](std::vector<double> y, std::vector<double> d, std::vector<double> x, std::size_t L, std::size_t J,
           double alpha, double epsilon, std::optional<std::size_t> m, std::optional<std::size_t> k,
           std::uint64_t seed, std::size_t threads) {
            dml::PLMData data{std::move(y), std::move(d), std::move(x)};
            dml::DMLOptions opt;
            opt.L = L;
            opt.J = J;
            opt.alpha = alpha;
            opt.epsilon = epsilon;
            opt.m = m;
            opt.seed = seed;
            opt.threads = threads;
            dml::DMLResult r;
            {
                py::gil_scoped_release release;
                r = dml::dml_rank_ci(data, dml::knn_regressor(k), opt);
            }
            py::dict out;
            out["theta_per_fold"] = r.theta_per_fold;
            out["theta"] = r.theta_dml;
            out["sigma_plugin"] = r.sigma_plugin;
            out["sigma_ls"] = r.sigma_ls;
            out["ci"] = py::make_tuple(r.ci_lower, r.ci_upper);
            out["plugin_ci"] = py::make_tuple(r.plugin_lower, r.plugin_upper);
            out["fold_correlation"] = r.fold_correlation_diag;
            out["m"] = r.m;
            out["B"] = r.B;
            return out;
        },
        py::arg("Y"), py::arg("D"), py::arg("X"), py::arg("L") = 2, py::arg("J") = 20, py::arg("alpha") = 0.05,
        py::arg("epsilon") = 0.1, py::arg("m") = py::none(), py::arg("k") = py::none(), py::arg("seed") = 0,
        py::arg("threads") = 1);

    mod.def(
        "gen_plm_data",
        [](std::size_t n, double theta0, std::uint64_t seed) {
            Stream rng(seed);
            const auto d = dml::gen_plm_data(n, theta0, rng);
            py::dict out;
            out["Y"] = d.Y;
            out["D"] = d.D;
            out["X"] = d.X;
            return out;
        },
        py::arg("n"), py::arg("theta0") = 1.0, py::arg("seed") = 0);

    auto merge_mod = mod.def_submodule("merge", "Conservative p-value merging and Gaussian location model");
    merge_mod.def("arithmetic", [](std::vector<double> p) { return merge::arithmetic(p); });
    merge_mod.def("geometric", [](std::vector<double> p) { return merge::geometric(p); });
    merge_mod.def("bonferroni", [](std::vector<double> p) { return merge::bonferroni(p); });
    merge_mod.def("bonf_geom", [](std::vector<double> p) { return merge::bonf_geom(p); });
    merge_mod.def(
        "gauss_power",
        [](double mu, double rho, std::size_t L, double alpha) { return merge::gauss_power({mu, rho, L, alpha}); },
        py::arg("mu"), py::arg("rho"), py::arg("L"), py::arg("alpha") = 0.05);
    merge_mod.def(
        "gauss_nonreplication",
        [](double mu, double rho, std::size_t L, double alpha) {
            return merge::gauss_nonreplication({mu, rho, L, alpha});
        },
        py::arg("mu"), py::arg("rho"), py::arg("L"), py::arg("alpha") = 0.05);

    mod.def(
        "run_experiment",
        [](const std::string& config_text, const std::string& experiment, std::size_t threads) {
            auto config = harness::parse_config(config_text, experiment);
            config.threads = threads;
            harness::validate(config);
            std::vector<harness::RunRecord> records;
            {
                py::gil_scoped_release release;
                records = harness::run_experiment(config);
            }
            return harness::to_csv(config, records);
        },
        py::arg("config"), py::arg("experiment") = "", py::arg("threads") = 1,
        "Runs an experiment from key = value text and returns the CSV.");

    py::register_exception<harness::ConfigError>(mod, "ConfigError", PyExc_ValueError);
}
