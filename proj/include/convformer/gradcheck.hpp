#pragma once

// Central finite-difference oracle for validating analytic backward passes.
// The oracle only ever evaluates the scalar objective; analytic gradients
// are supplied separately by the caller.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "convformer/tensor.hpp"

namespace convformer {

inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kRelErrorFloor = 1e-8;

using ScalarFunction = std::function<double(std::span<const double>)>;

// (f(p + h e_k) - f(p - h e_k)) / 2h for every coordinate k.
// Throws NumericError naming the coordinate if f is non-finite there.
std::vector<double> finite_diff(const ScalarFunction& f, std::vector<double> point, double step = kFiniteDiffStep);

// |a - b| / max(|a|, |b|, floor)
double relative_error(double analytic, double numeric, double floor = kRelErrorFloor);

struct GradEntry {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t skipped = 0;  // coordinates whose +-h probes straddle a kink
    bool passed = true;
};

struct GradReport {
    std::string op;
    double tolerance = 0.0;
    std::vector<GradEntry> entries;

    bool passed() const;
    double max_rel_error() const;
    std::size_t skipped() const;
    std::size_t checked() const;
};

// A differentiable computation exposed to the oracle: the tensors to perturb,
// a forward-only objective reading them in place, and the analytic gradient
// of the objective with respect to each tensor (same order and shapes).
//
// `pattern`, when set, fingerprints the piecewise-linear branch the forward
// pass takes (ReLU signs, max-pool winners). Coordinates whose +h and -h
// probes land on different branches are counted as skipped instead of
// compared, since the objective is not differentiable inside the probe.
struct GradProblem {
    std::vector<std::pair<std::string, Tensor*>> wrt;
    std::function<double()> objective;
    std::function<std::vector<Tensor>()> analytic;
    std::function<std::uint64_t()> pattern;
};

GradReport check(const std::string& op, const GradProblem& problem, double tolerance,
                 double step = kFiniteDiffStep);

void write_report_text(std::ostream& os, const GradReport& report);
void write_reports_csv(std::ostream& os, const std::vector<GradReport>& reports);

// Seeded random instances of every differentiable operation, each checked
// against the oracle. Tolerance 1e-5, or 1e-4 for the end-to-end model.
std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed);

}  // namespace convformer
