#include "convformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace convformer {

std::vector<double> finite_diff(const ScalarFunction& f, std::vector<double> point, double step) {
    std::vector<double> grad(point.size());
    for (std::size_t k = 0; k < point.size(); ++k) {
        const double saved = point[k];
        point[k] = saved + step;
        const double up = f(point);
        point[k] = saved - step;
        const double down = f(point);
        point[k] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_diff: non-finite objective at coordinate " + std::to_string(k));
        grad[k] = (up - down) / (2.0 * step);
    }
    return grad;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

bool GradReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradEntry& e) { return e.passed; });
}

double GradReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

std::size_t GradReport::skipped() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.skipped;
    return n;
}

std::size_t GradReport::checked() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.count - e.skipped;
    return n;
}

namespace {

// Coordinates where the branch fingerprint differs between the two probes.
std::vector<bool> kink_mask(Tensor& t, const GradProblem& problem, double step) {
    std::vector<bool> kink(t.size(), false);
    if (!problem.pattern) return kink;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double saved = t[k];
        t[k] = saved + step;
        const auto up = problem.pattern();
        t[k] = saved - step;
        const auto down = problem.pattern();
        t[k] = saved;
        kink[k] = up != down;
    }
    return kink;
}

}  // namespace

GradReport check(const std::string& op, const GradProblem& problem, double tolerance, double step) {
    GradReport report{op, tolerance, {}};
    const std::vector<Tensor> analytic = problem.analytic ? problem.analytic() : std::vector<Tensor>{};
    if (analytic.size() != problem.wrt.size())
        throw std::invalid_argument("gradcheck " + op + ": analytic gradient count does not match inputs");
    for (std::size_t t = 0; t < problem.wrt.size(); ++t) {
        const auto& [name, tensor] = problem.wrt[t];
        require_same_shape(*tensor, analytic[t], "gradcheck analytic gradient");
        const std::vector<double> original = tensor->values();
        const ScalarFunction f = [&](std::span<const double> p) {
            std::copy(p.begin(), p.end(), tensor->values().begin());
            return problem.objective();
        };
        const auto numeric = finite_diff(f, original, step);
        tensor->values() = original;
        const auto kink = kink_mask(*tensor, problem, step);

        GradEntry e{name, numeric.size()};
        for (std::size_t k = 0; k < numeric.size(); ++k) {
            if (kink[k]) {
                ++e.skipped;
                continue;
            }
            const double rel = relative_error(analytic[t][k], numeric[k]);
            e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic[t][k] - numeric[k]));
            if (rel > e.max_rel_error) {
                e.max_rel_error = rel;
                e.worst_index = k;
            }
        }
        e.passed = e.max_rel_error <= tolerance;
        report.entries.push_back(std::move(e));
    }
    return report;
}

void write_report_text(std::ostream& os, const GradReport& report) {
    os << report.op << ": " << (report.passed() ? "PASS" : "FAIL") << " (tolerance " << report.tolerance << ")\n";
    for (const auto& e : report.entries) {
        os << "  " << std::left << std::setw(36) << e.name << std::right << " n=" << std::setw(5) << e.count
           << "  max_rel=" << std::scientific << std::setprecision(3) << e.max_rel_error
           << "  max_abs=" << e.max_abs_error << std::defaultfloat << "  worst=" << e.worst_index
           << (e.skipped ? "  kinks=" + std::to_string(e.skipped) : std::string{})
           << (e.passed ? "" : "  <-- FAIL") << '\n';
    }
}

void write_reports_csv(std::ostream& os, const std::vector<GradReport>& reports) {
    os << "op,param,count,skipped,max_rel_error,max_abs_error,worst_index,tolerance,passed\n";
    for (const auto& r : reports)
        for (const auto& e : r.entries)
            os << r.op << ',' << e.name << ',' << e.count << ',' << e.skipped << ',' << std::setprecision(17) << e.max_rel_error << ','
               << e.max_abs_error << ',' << e.worst_index << ',' << r.tolerance << ',' << (e.passed ? 1 : 0)
               << '\n';
}

}  // namespace convformer
