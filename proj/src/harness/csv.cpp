#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/beta.hpp>

#include "rtsub/harness.hpp"

namespace rtsub::harness {

std::string format_number(double x) {
    if (std::isnan(x)) {
        return "NA";
    }
    if (std::isinf(x)) {
        return x > 0 ? "Inf" : "-Inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x == 0.0 ? 0.0 : x);
    return buf;
}

void write_csv(std::ostream& out, const ExperimentConfig& config, const std::vector<RunRecord>& records) {
    out << "# " << csv_schema_version << ' ' << describe(config) << '\n';
    out << "experiment,method,effect,replicate,decision,p_value,estimate,ci_lower,ci_upper,seed\n";
    for (const RunRecord& r : records) {
        out << r.experiment << ',' << r.method << ',' << format_number(r.effect) << ',' << r.replicate << ','
            << format_number(r.decision) << ',' << format_number(r.p_value) << ',' << format_number(r.estimate)
            << ',' << format_number(r.ci_lower) << ',' << format_number(r.ci_upper) << ',' << r.seed << '\n';
    }
}

std::string to_csv(const ExperimentConfig& config, const std::vector<RunRecord>& records) {
    std::ostringstream out;
    write_csv(out, config, records);
    return out.str();
}

namespace {

std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials) {
    if (trials == 0) {
        return {0.0, 1.0};
    }
    const double x = static_cast<double>(successes);
    const double n = static_cast<double>(trials);
    const double lower = successes == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<>(x, n - x + 1.0), 0.025);
    const double upper = successes == trials ? 1.0 : boost::math::quantile(boost::math::beta_distribution<>(x + 1.0, n - x), 0.975);
    return {lower, upper};
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
    std::vector<SummaryRow> rows;
    std::map<std::pair<std::string, double>, std::size_t> index;
    std::vector<std::vector<const RunRecord*>> groups;
    for (const RunRecord& r : records) {
        const auto key = std::make_pair(r.method, r.effect);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, rows.size()).first;
            rows.push_back({r.method, r.effect});
            groups.emplace_back();
        }
        groups[it->second].push_back(&r);
    }
    for (std::size_t g = 0; g < rows.size(); ++g) {
        SummaryRow& row = rows[g];
        row.count = groups[g].size();
        std::size_t decided = 0;
        std::size_t positive = 0;
        double decision_sum = 0.0;
        double estimate_sum = 0.0;
        std::size_t estimates = 0;
        std::vector<double> widths;
        for (const RunRecord* r : groups[g]) {
            if (!std::isnan(r->decision)) {
                ++decided;
                decision_sum += r->decision;
                positive += r->decision != 0.0 ? 1 : 0;
            }
            if (!std::isnan(r->estimate)) {
                estimate_sum += r->estimate;
                ++estimates;
            }
            if (!std::isnan(r->ci_lower) && !std::isnan(r->ci_upper)) {
                widths.push_back(r->ci_upper - r->ci_lower);
            }
        }
        row.rate = decided ? decision_sum / static_cast<double>(decided) : std::nan("");
        std::tie(row.rate_lower, row.rate_upper) =
            decided ? clopper_pearson(positive, decided) : std::make_pair(std::nan(""), std::nan(""));
        row.mean_estimate = estimates ? estimate_sum / static_cast<double>(estimates) : std::nan("");
        if (widths.empty()) {
            row.median_width = std::nan("");
        } else {
            std::sort(widths.begin(), widths.end());
            const std::size_t k = widths.size();
            row.median_width = k % 2 ? widths[k / 2] : 0.5 * (widths[k / 2 - 1] + widths[k / 2]);
        }
    }
    return rows;
}

void print_summary(std::ostream& out, const ExperimentConfig& config, const std::vector<SummaryRow>& rows) {
    out << describe(config) << '\n';
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %10s %6s %8s %19s %12s %12s\n", "method", "effect", "count", "rate",
                  "95% CI", "mean_est", "med_width");
    out << line;
    for (const SummaryRow& r : rows) {
        char ci[64] = "";
        if (!std::isnan(r.rate)) {
            std::snprintf(ci, sizeof ci, "[%.3f, %.3f]", r.rate_lower, r.rate_upper);
        }
        std::snprintf(line, sizeof line, "%-20s %10s %6zu %8s %19s %12s %12s\n", r.method.c_str(),
                      format_number(r.effect).c_str(), r.count,
                      std::isnan(r.rate) ? "-" : format_number(std::round(r.rate * 1e4) / 1e4).c_str(), ci,
                      std::isnan(r.mean_estimate) ? "-" : format_number(std::round(r.mean_estimate * 1e4) / 1e4).c_str(),
                      std::isnan(r.median_width) ? "-" : format_number(std::round(r.median_width * 1e4) / 1e4).c_str());
        out << line;
    }
}

}  // namespace rtsub::harness
