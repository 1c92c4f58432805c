#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dtg/errors.hpp"
#include "dtg/synth.hpp"

using namespace dtg;
using namespace dtg::synth;

namespace {

OUSpec basic_spec() {
    OUSpec s;
    s.n_dims = 1;
    s.n_ctx = 1;
    s.theta = {1.0};
    s.sigma = {std::sqrt(2.0)};
    s.mean0 = {0.0};
    s.mean_ctx = Tensor::zeros({1, 1});
    s.corr = Tensor({1, 1}, {1.0});
    s.schedules = {{0.0, 1.0}};
    return s;
}

}  // namespace

TEST_CASE("conditional moments match the closed form") {
    OUSpec s = basic_spec();
    Tensor c = Tensor::vector({0.0});
    Tensor y = Tensor::vector({1.0});
    Tensor mean, var;

    s.conditional_moments(c, y, std::log(2.0), mean, var);
    CHECK(mean[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(var[0] == doctest::Approx(0.75).epsilon(1e-12));

    s.conditional_moments(c, y, 0.0, mean, var);
    CHECK(mean[0] == 1.0);
    CHECK(var[0] == 0.0);

    s.conditional_moments(c, y, 1e9, mean, var);
    CHECK(mean[0] == doctest::Approx(0.0));
    CHECK(var[0] == doctest::Approx(1.0));  // sigma^2/(2 theta)
}

TEST_CASE("conditional moments agree with a discretized simulation") {
    // Independent cross-check: Euler-Maruyama with a step fine enough that
    // its bias sits an order below the Monte Carlo band.
    OUSpec s = basic_spec();
    const double dt = std::log(2.0);
    const int paths = 100000;
    const int steps = 512;
    const double h = dt / steps;
    Rng rng(99);
    double sum = 0.0, sum2 = 0.0;
    for (int p = 0; p < paths; ++p) {
        double y = 1.0;
        for (int k = 0; k < steps; ++k) {
            y += -y * h + std::sqrt(2.0 * h) * rng.normal();
        }
        sum += y;
        sum2 += y * y;
    }
    double m = sum / paths;
    double v = sum2 / paths - m * m;
    double se_mean = std::sqrt(v / paths);
    double se_var = v * std::sqrt(2.0 / paths);
    CHECK(std::fabs(m - 0.5) < 3.0 * se_mean);
    CHECK(std::fabs(v - 0.75) < 3.0 * se_var);
}

TEST_CASE("stationary and transition covariances follow the two-dim formulas") {
    OUSpec s;
    s.n_dims = 2;
    s.n_ctx = 1;
    s.theta = {1.0, 3.0};
    s.sigma = {2.0, 1.0};
    s.mean0 = {0.0, 0.0};
    s.mean_ctx = Tensor::zeros({2, 1});
    s.corr = Tensor({2, 2}, {1.0, 0.5, 0.5, 1.0});
    s.schedules = {{0.0, 1.0}};
    s.validate();

    Tensor cov = s.stationary_cov();
    CHECK(cov.at(0, 0) == doctest::Approx(4.0 / 2.0));
    CHECK(cov.at(1, 1) == doctest::Approx(1.0 / 6.0));
    CHECK(cov.at(0, 1) == doctest::Approx(2.0 * 1.0 * 0.5 / 4.0));
    CHECK(cov.at(0, 1) == cov.at(1, 0));

    double d = 0.25;
    Tensor tc = s.transition_cov(d);
    CHECK(tc.at(0, 0) == doctest::Approx(2.0 * (1.0 - std::exp(-2.0 * d))));
    CHECK(tc.at(0, 1) == doctest::Approx(0.25 * (1.0 - std::exp(-4.0 * d))));
    // approaches the stationary covariance
    Tensor far = s.transition_cov(1e9);
    CHECK(far.at(0, 0) == doctest::Approx(cov.at(0, 0)));
    CHECK(far.at(0, 1) == doctest::Approx(cov.at(0, 1)));
}

TEST_CASE("generated transitions reproduce the oracle moments") {
    OUSpec s = basic_spec();
    s.mean_ctx = Tensor({1, 1}, {0.8});  // context shifts the attractor
    const std::size_t n = 100000;
    auto recs = gen_cohort(s, {}, n, 1234);

    // Residuals against the conditional law must be centered with the
    // transition variance and uncorrelated with the current state.
    double decay = std::exp(-1.0);
    double tvar = 1.0 - std::exp(-2.0);
    double sum = 0.0, sum2 = 0.0, cross = 0.0, y0sum = 0.0, y0sum2 = 0.0;
    for (const auto& r : recs) {
        double mu = 0.8 * r.context[0];
        double y0 = r.visits[0].values[0];
        double y1 = r.visits[1].values[0];
        double res = y1 - (mu + (y0 - mu) * decay);
        sum += res;
        sum2 += res * res;
        cross += res * y0;
        y0sum += y0;
        y0sum2 += y0 * y0;
    }
    double m = sum / n;
    double v = sum2 / n - m * m;
    double se_mean = std::sqrt(v / n);
    double se_var = v * std::sqrt(2.0 / n);
    CHECK(std::fabs(m) < 4.0 * se_mean);
    CHECK(std::fabs(v - tvar) < 4.0 * se_var);
    double y0m = y0sum / n;
    double y0v = y0sum2 / n - y0m * y0m;
    double corr = (cross / n - m * y0m) / std::sqrt(v * y0v);
    CHECK(std::fabs(corr) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("strong reversion makes consecutive visits independent") {
    OUSpec s = basic_spec();
    s.theta = {50.0};
    s.sigma = {10.0};  // keep stationary variance 1
    const std::size_t n = 20000;
    auto recs = gen_cohort(s, {}, n, 5);
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (const auto& r : recs) {
        double a = r.visits[0].values[0];
        double b = r.visits[1].values[0];
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    double corr = (sxy / n - sx / n * sy / n) /
                  std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
    CHECK(std::fabs(corr) < 0.03);
}

TEST_CASE("cohorts are bit-identical for a fixed seed and masks obey the rate") {
    OUSpec s = basic_spec();
    s.schedules = {{0.0, 1.0, 2.0}, {0.0, 2.0, 5.0, 7.0}};
    s.missing_rate = 0.25;
    auto a = gen_cohort(s, {}, 500, 77);
    auto b = gen_cohort(s, {}, 500, 77);
    REQUIRE(a.size() == b.size());
    std::size_t masked = 0, total = 0;
    bool both_schedules[2] = {false, false};
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        REQUIRE(a[i].visits.size() == b[i].visits.size());
        both_schedules[a[i].visits.size() == 3 ? 0 : 1] = true;
        for (std::size_t k = 0; k < a[i].visits.size(); ++k) {
            CHECK(a[i].visits[k].values[0] == b[i].visits[k].values[0]);
            CHECK(a[i].visits[k].mask == b[i].visits[k].mask);
            masked += a[i].visits[k].mask[0] ? 0 : 1;
            ++total;
        }
        CHECK(a[i].context[0] == b[i].context[0]);
    }
    CHECK(both_schedules[0]);
    CHECK(both_schedules[1]);
    double rate = static_cast<double>(masked) / static_cast<double>(total);
    CHECK(rate == doctest::Approx(0.25).epsilon(0.15));

    s.missing_rate = 0.0;
    for (const auto& r : gen_cohort(s, {}, 50, 3)) {
        for (const auto& v : r.visits) CHECK(v.mask[0]);
    }
}

TEST_CASE("masking is independent of the underlying values") {
    OUSpec s = basic_spec();
    s.schedules = {{0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0}};
    s.missing_rate = 0.5;
    std::vector<PatientRecord> truth;
    auto masked = gen_cohort(s, {}, 2000, 31, &truth);

    std::vector<double> obs, mis;
    for (std::size_t i = 0; i < masked.size(); ++i) {
        for (std::size_t k = 0; k < masked[i].visits.size(); ++k) {
            double v = truth[i].visits[k].values[0];
            (masked[i].visits[k].mask[0] ? obs : mis).push_back(v);
        }
    }
    REQUIRE(obs.size() + mis.size() == 20000);
    std::sort(obs.begin(), obs.end());
    std::sort(mis.begin(), mis.end());

    // two-sample Kolmogorov-Smirnov, alpha = 0.01
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < obs.size() && j < mis.size()) {
        if (obs[i] <= mis[j]) {
            ++i;
        } else {
            ++j;
        }
        double fi = static_cast<double>(i) / obs.size();
        double fj = static_cast<double>(j) / mis.size();
        d = std::max(d, std::fabs(fi - fj));
    }
    double crit = 1.628 * std::sqrt(1.0 / obs.size() + 1.0 / mis.size());
    CHECK(d < crit);
}

TEST_CASE("event times follow the accelerated failure time law") {
    TTESpec t;
    t.intercept = 0.5;
    t.ctx_weights = {0.0};
    t.kappa = 2.0;
    Tensor c = Tensor::vector({0.0});

    const int n = 1000000;
    Rng rng(8);
    std::vector<double> times(n);
    for (auto& v : times) v = gen_tte(t, c, rng).time;
    std::nth_element(times.begin(), times.begin() + n / 2, times.end());
    double med = times[n / 2];
    double want = t.median_time(c);
    CHECK(want == doctest::Approx(std::exp(0.5) * std::sqrt(std::log(2.0))).epsilon(1e-12));
    // asymptotic standard error of a sample median: 1 / (2 f(med) sqrt(n))
    double lambda = std::exp(0.5);
    double fmed = (t.kappa / lambda) * std::pow(want / lambda, t.kappa - 1.0) * 0.5;
    CHECK(std::fabs(med - want) < 4.0 / (2.0 * fmed * std::sqrt(static_cast<double>(n))));
}

TEST_CASE("tte edge cases: huge shape, zero censor window, context effect") {
    Tensor c = Tensor::vector({1.0});
    TTESpec t;
    t.intercept = 0.2;
    t.ctx_weights = {0.7};
    t.kappa = 1e6;
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        CHECK(gen_tte(t, c, rng).time == doctest::Approx(std::exp(0.9)).epsilon(1e-3));
    }

    t.kappa = 1.5;
    t.censor_lo = 0.0;
    t.censor_hi = 0.0;
    for (int i = 0; i < 50; ++i) {
        auto r = gen_tte(t, c, rng);
        CHECK(r.time == 0.0);
        CHECK_FALSE(r.event);
    }
}

TEST_CASE("cholesky factors SPD matrices and rejects others") {
    Tensor a({2, 2}, {4.0, 2.0, 2.0, 3.0});
    Tensor l = cholesky_lower(a);
    CHECK(l.at(0, 0) == doctest::Approx(2.0));
    CHECK(l.at(0, 1) == 0.0);
    CHECK(l.at(1, 0) == doctest::Approx(1.0));
    CHECK(l.at(1, 1) == doctest::Approx(std::sqrt(2.0)));

    Tensor bad({2, 2}, {1.0, 2.0, 2.0, 1.0});
    CHECK_THROWS_AS(cholesky_lower(bad), NumericError);
}

TEST_CASE("spec validation rejects inconsistent configuration") {
    OUSpec s = basic_spec();
    s.theta = {-1.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = basic_spec();
    s.schedules = {{1.0, 2.0}};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = basic_spec();
    s.corr = Tensor({1, 1}, {0.9});
    CHECK_THROWS_AS(s.validate(), ConfigError);

    TTESpec t;
    t.ctx_weights = {};
    t.kappa = 0.0;
    CHECK_THROWS_AS(t.validate(0), ConfigError);
}
