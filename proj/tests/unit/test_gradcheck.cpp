#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "convformer/gradcheck.hpp"

using namespace convformer;

TEST_CASE("finite_diff examples") {
    const auto sq = finite_diff([](std::span<const double> p) { return p[0] * p[0]; }, {3.0});
    CHECK(std::abs(sq[0] - 6.0) <= 1e-9);
    const auto flat = finite_diff([](std::span<const double>) { return 4.0; }, {1.0, 2.0, 3.0});
    CHECK(flat == std::vector<double>{0.0, 0.0, 0.0});
    try {
        finite_diff([](std::span<const double> p) { return p[1] > 1.5 ? std::numeric_limits<double>::quiet_NaN() : 0.0; },
                    {0.0, 1.5});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
}

TEST_CASE("relative error metric") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 1e-10) == doctest::Approx(1e-2));
    CHECK(relative_error(1.0, -1.0) == 2.0);
}

TEST_CASE("a zero-parameter problem passes trivially") {
    GradProblem p{{}, [] { return 1.0; }, [] { return std::vector<Tensor>{}; }, {}};
    const auto r = check("empty", p, 1e-5);
    CHECK(r.passed());
    CHECK(r.entries.empty());
}

TEST_CASE("a sign-flipped backward fails with relative error 2") {
    Tensor x({3}, {0.5, -1.0, 2.0});
    GradProblem p{{{"x", &x}},
                  [&] { return x[0] * x[0] + 3.0 * x[1] + std::sin(x[2]); },
                  [&] { return std::vector<Tensor>{Tensor({3}, {-2.0 * x[0], -3.0, -std::cos(x[2])})}; },
                  {}};
    const auto r = check("flipped", p, 1e-5);
    CHECK_FALSE(r.passed());
    CHECK(r.max_rel_error() == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("the oracle evaluates the analytic gradient once and never inside the differences") {
    Tensor x({4}, {0.1, 0.2, 0.3, 0.4});
    int analytic_calls = 0, objective_calls = 0;
    GradProblem p{{{"x", &x}},
                  [&] {
                      ++objective_calls;
                      double s = 0.0;
                      for (double v : x.values()) s += v * v * v;
                      return s;
                  },
                  [&] {
                      ++analytic_calls;
                      Tensor g({4});
                      for (std::size_t k = 0; k < 4; ++k) g[k] = 3.0 * x[k] * x[k];
                      return std::vector<Tensor>{g};
                  },
                  {}};
    CHECK(check("cubic", p, 1e-8).passed());
    CHECK(analytic_calls == 1);
    CHECK(objective_calls == 8);
    CHECK(x == Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
}

TEST_CASE("kink fingerprint skips probes that straddle a branch") {
    Tensor x({2}, {1e-7, 1.0});
    GradProblem p{{{"x", &x}},
                  [&] { return std::max(x[0], 0.0) + std::max(x[1], 0.0); },
                  [&] { return std::vector<Tensor>{Tensor({2}, {1.0, 1.0})}; },
                  [&] { return static_cast<std::uint64_t>(x[0] > 0.0) | static_cast<std::uint64_t>(x[1] > 0.0) << 1; }};
    const auto r = check("relu", p, 1e-8);
    CHECK(r.passed());
    CHECK(r.skipped() == 1);
    CHECK(r.checked() == 1);
}

TEST_CASE("gradcheck suite passes at the pinned seed and is deterministic") {
    const auto a = run_gradcheck_suite(7);
    const auto b = run_gradcheck_suite(7);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK_MESSAGE(a[k].passed(), a[k].op);
        CHECK(a[k].max_rel_error() == b[k].max_rel_error());
    }
    std::ostringstream csv;
    write_reports_csv(csv, a);
    CHECK(csv.str().rfind("op,param,count,skipped,max_rel_error,max_abs_error,worst_index,tolerance,passed\n", 0) == 0);
}
