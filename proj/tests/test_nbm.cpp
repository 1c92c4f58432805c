#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "dtg/nbm.hpp"

using namespace dtg;
using namespace dtg::nbm;

namespace {

double logcosh_ref(double x) { return std::log(std::cosh(x)); }

EnergyContext random_ctx(std::size_t n, std::size_t m, Rng& r) {
    EnergyContext ctx;
    ctx.f = Tensor::zeros({n});
    ctx.p = Tensor::zeros({n});
    ctx.w = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        ctx.f[i] = r.uniform(-2.0, 2.0);
        ctx.p[i] = r.uniform(0.5, 3.0);
        for (std::size_t j = 0; j < m; ++j) ctx.w.at(i, j) = r.uniform(-1.5, 1.5);
    }
    return ctx;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double interval_mass(double mu, double sd, double a, double b) {
    return normal_cdf((b - mu) / sd) - normal_cdf((a - mu) / sd);
}

NetConfig tiny_cfg() {
    NetConfig c;
    c.n = 2;
    c.c = 1;
    c.m = 2;
    c.imputer_embed = 4;
    c.flow_depth = 2;
    return c;
}

}  // namespace

TEST_CASE("energy values match hand-worked arithmetic") {
    EnergyContext ctx;
    ctx.f = Tensor::vector({0.0});
    ctx.p = Tensor::vector({4.0});
    ctx.w = Tensor({1, 1}, {3.0});
    Tensor y = Tensor::vector({1.0});
    CHECK(joint_energy(ctx, y, Tensor::vector({1.0})) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(joint_energy(ctx, y, Tensor::vector({-1.0})) == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(marginal_energy(ctx, y) == doctest::Approx(2.0 - logcosh_ref(3.0)).epsilon(1e-12));

    EnergyContext c2;
    c2.f = Tensor::vector({1.0, -1.0});
    c2.p = Tensor::vector({2.0, 4.0});
    c2.w = Tensor({2, 2}, {1.0, -2.0, 3.0, 0.5});
    Tensor y2 = Tensor::vector({2.0, 0.0});
    // d = (1,1); quad = (2+4)/2 = 3; Wh = (3, 2.5); interaction = 5.5
    CHECK(joint_energy(c2, y2, Tensor::vector({1.0, -1.0})) ==
          doctest::Approx(-2.5).epsilon(1e-14));
    // w'd = (4, -1.5)
    CHECK(marginal_energy(c2, y2) ==
          doctest::Approx(3.0 - logcosh_ref(4.0) - logcosh_ref(-1.5)).epsilon(1e-12));

    CHECK(marginal_energy(c2, c2.f) == doctest::Approx(0.0).epsilon(1e-14));

    CHECK_THROWS_AS(joint_energy(c2, y2, Tensor::vector({1.0, 0.5})), DataError);
    CHECK_THROWS_AS(joint_energy(c2, Tensor::vector({1.0}), Tensor::vector({1.0, 1.0})),
                    ShapeError);
    EnergyContext bad = c2;
    bad.p[1] = 0.0;
    CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("huge couplings do not overflow the marginal energy") {
    EnergyContext ctx;
    ctx.f = Tensor::vector({0.0});
    ctx.p = Tensor::vector({1.0});
    ctx.w = Tensor({1, 1}, {800.0});
    double u = marginal_energy(ctx, Tensor::vector({1.0}));
    // logcosh(800) = 800 - log 2
    CHECK(std::isfinite(u));
    CHECK(u == doctest::Approx(0.5 - 800.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("summing out hidden spins reproduces the marginal energy") {
    Rng rng(41);
    const double log2 = std::log(2.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t n = 1 + rng.below(3);
        std::size_t m = 1 + rng.below(4);
        EnergyContext ctx = random_ctx(n, m, rng);
        for (int rep = 0; rep < 20; ++rep) {
            Tensor y = Tensor::zeros({n});
            for (std::size_t i = 0; i < n; ++i) y[i] = rng.uniform(-3.0, 3.0);

            // log sum over all 2^m spin configurations, stabilized by the max
            std::vector<double> neg;
            Tensor h = Tensor::zeros({m});
            for (std::uint32_t bits = 0; bits < (1u << m); ++bits) {
                for (std::size_t j = 0; j < m; ++j) h[j] = (bits >> j) & 1u ? 1.0 : -1.0;
                neg.push_back(-joint_energy(ctx, y, h));
            }
            double mx = *std::max_element(neg.begin(), neg.end());
            double acc = 0.0;
            for (double v : neg) acc += std::exp(v - mx);
            double summed = -(mx + std::log(acc)) + static_cast<double>(m) * log2;

            double direct = marginal_energy(ctx, y);
            CHECK(std::fabs(summed - direct) / std::max(1.0, std::fabs(direct)) < 1e-10);
        }
    }
}

TEST_CASE("marginal energy graph matches the closed form and its gradients") {
    Rng rng(99);
    std::size_t n = 3, m = 2;
    EnergyContext ctx = random_ctx(n, m, rng);
    Tensor y = Tensor::vector({0.7, -1.1, 2.2});

    ad::Param f("f", ctx.f);
    ad::Param p("p", ctx.p);
    ad::Param w("w", ctx.w);

    ad::Tape t;
    ad::Var u = marginal_energy_graph(t, t.leaf(f), t.leaf(p), t.leaf(w), y);
    CHECK(t.value(u).item() == doctest::Approx(marginal_energy(ctx, y)).epsilon(1e-12));

    std::array<ad::Param*, 3> params{&f, &p, &w};
    double worst = ad::grad_check(
        [&](ad::Tape& tape) {
            return marginal_energy_graph(tape, tape.leaf(f), tape.leaf(p), tape.leaf(w), y);
        },
        params);
    CHECK(worst < 1e-6);
}

TEST_CASE("visible conditional has the advertised moments") {
    Rng rng(7);
    EnergyContext ctx;
    ctx.f = Tensor::vector({1.0, -2.0});
    ctx.p = Tensor::vector({4.0, 0.25});
    ctx.w = Tensor({2, 2}, {0.5, -1.0, 2.0, 0.3});
    Tensor h = Tensor::vector({1.0, -1.0});
    // mean = f + diag(p)^-1 w h = (1 + 1.5/4, -2 + 1.7/0.25)
    std::array<double, 2> want_mean{1.375, 4.8};
    std::array<double, 2> want_var{0.25, 4.0};

    const std::size_t trials = 200000;
    std::array<double, 2> s1{}, s2{};
    for (std::size_t k = 0; k < trials; ++k) {
        Tensor y = sample_y_given_h(ctx, h, rng);
        for (int i = 0; i < 2; ++i) {
            s1[i] += y[i];
            s2[i] += y[i] * y[i];
        }
    }
    for (int i = 0; i < 2; ++i) {
        double mean = s1[i] / trials;
        double var = s2[i] / trials - mean * mean;
        double mean_se = std::sqrt(want_var[i] / trials);
        double var_se = want_var[i] * std::sqrt(2.0 / trials);
        CHECK(std::fabs(mean - want_mean[i]) < 4.0 * mean_se);
        CHECK(std::fabs(var - want_var[i]) < 4.0 * var_se);
    }
    CHECK_THROWS_AS(sample_y_given_h(ctx, Tensor::vector({2.0, 1.0}), rng), DataError);
}

TEST_CASE("hidden conditional matches the logistic law") {
    Rng rng(11);
    EnergyContext ctx;
    ctx.f = Tensor::vector({0.5, 0.0});
    ctx.p = Tensor::vector({1.0, 1.0});
    ctx.w = Tensor({2, 3}, {1.0, -0.4, 0.0, 0.2, 0.9, 0.0});
    Tensor y = Tensor::vector({1.5, -1.0});
    // w'(y-f) = (0.8, -1.3, 0.0)
    std::array<double, 3> phi{0.8, -1.3, 0.0};

    const std::size_t trials = 200000;
    std::array<double, 3> plus{};
    for (std::size_t k = 0; k < trials; ++k) {
        Tensor h = sample_h_given_y(ctx, y, rng);
        for (int j = 0; j < 3; ++j) {
            CHECK((h[j] == 1.0 || h[j] == -1.0));
            if (h[j] == 1.0) plus[j] += 1.0;
        }
    }
    for (int j = 0; j < 3; ++j) {
        double want = 1.0 / (1.0 + std::exp(-2.0 * phi[j]));
        double se = std::sqrt(want * (1.0 - want) / trials);
        CHECK(std::fabs(plus[j] / trials - want) < 4.0 * se);
    }
}

TEST_CASE("zero coupling gives exact gaussian samples at any chain length") {
    Rng rng(13);
    EnergyContext ctx;
    ctx.f = Tensor::vector({2.0, -1.0});
    ctx.p = Tensor::vector({0.5, 8.0});
    ctx.w = Tensor::zeros({2, 3});

    const std::size_t trials = 200000;
    std::array<double, 2> s1{}, s2{};
    for (std::size_t k = 0; k < trials; ++k) {
        Tensor y = gibbs_sample(ctx, 7, rng);
        for (int i = 0; i < 2; ++i) {
            s1[i] += y[i];
            s2[i] += y[i] * y[i];
        }
    }
    for (int i = 0; i < 2; ++i) {
        double mean = s1[i] / trials;
        double var = s2[i] / trials - mean * mean;
        double want_var = 1.0 / ctx.p[i];
        CHECK(std::fabs(mean - ctx.f[i]) < 4.0 * std::sqrt(want_var / trials));
        CHECK(std::fabs(var - want_var) < 4.0 * want_var * std::sqrt(2.0 / trials));
    }
    CHECK_THROWS_AS(gibbs_sample(ctx, 0, rng), ConfigError);
}

TEST_CASE("gibbs chain reproduces the exact two-mode mixture") {
    // With one hidden spin the stationary law is an equal mixture of
    // N(f + P^-1 w, P^-1) and N(f - P^-1 w, P^-1): the two spin states have
    // identical partition functions, so each carries mass 1/2.
    EnergyContext ctx;
    ctx.f = Tensor::vector({0.3, -0.2});
    ctx.p = Tensor::vector({1.0, 2.0});
    ctx.w = Tensor({2, 1}, {1.2, -0.8});
    std::array<std::array<double, 2>, 2> modes{{{1.5, -0.6}, {-0.9, 0.2}}};
    std::array<double, 2> sd{1.0, 1.0 / std::sqrt(2.0)};

    const int bins = 12;
    const double lo = -4.0, hi = 4.0, width = (hi - lo) / bins;

    std::vector<double> exact(bins * bins, 0.0);
    double grid_mass = 0.0;
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            double mass = 0.0;
            for (const auto& mu : modes) {
                mass += 0.5 *
                        interval_mass(mu[0], sd[0], lo + i * width, lo + (i + 1) * width) *
                        interval_mass(mu[1], sd[1], lo + j * width, lo + (j + 1) * width);
            }
            exact[i * bins + j] = mass;
            grid_mass += mass;
        }
    }

    const std::size_t trials = 200000;
    std::vector<double> counts(bins * bins, 0.0);
    double outside = 0.0;
    Rng rng(2026);
    for (std::size_t k = 0; k < trials; ++k) {
        Rng chain = rng.stream(k);
        Tensor y = gibbs_sample(ctx, 64, chain);
        int i = static_cast<int>(std::floor((y[0] - lo) / width));
        int j = static_cast<int>(std::floor((y[1] - lo) / width));
        if (i < 0 || i >= bins || j < 0 || j >= bins) {
            outside += 1.0;
        } else {
            counts[i * bins + j] += 1.0;
        }
    }

    double tv = std::fabs(outside / trials - (1.0 - grid_mass));
    for (int c = 0; c < bins * bins; ++c) {
        tv += std::fabs(counts[c] / trials - exact[c]);
    }
    tv *= 0.5;
    CHECK(tv < 0.02);
}

TEST_CASE("trajectory sampling is deterministic and stream-stable") {
    Model model = Model::init(tiny_cfg(), 1, 7);
    Tensor y0 = Tensor::vector({0.4, -0.2});
    std::vector<std::uint8_t> ymask{1, 1};
    Tensor c = Tensor::vector({0.9});
    std::vector<std::uint8_t> cmask{1};
    std::vector<double> times{1.0, 2.0, 4.0};

    SampleSet a = generate_trajectory(model, y0, ymask, c, cmask, times, 5, 8, Rng(123));
    SampleSet b = generate_trajectory(model, y0, ymask, c, cmask, times, 5, 8, Rng(123));
    SampleSet d = generate_trajectory(model, y0, ymask, c, cmask, times, 5, 8, Rng(124));

    REQUIRE(a.paths.size() == 5);
    CHECK(a.n_dims == 2);
    CHECK(a.times == times);
    CHECK(a.mode == GenMode::kRollout);
    for (const auto& path : a.paths) {
        REQUIRE(path.shape() == std::vector<std::size_t>{3, 2});
        for (double v : path.values()) CHECK(std::isfinite(v));
    }
    for (std::size_t s = 0; s < 5; ++s) {
        CHECK(a.paths[s].values() == b.paths[s].values());
    }
    bool any_diff = false;
    for (std::size_t s = 0; s < 5; ++s) {
        if (a.paths[s].values() != d.paths[s].values()) any_diff = true;
    }
    CHECK(any_diff);

    // each sample is its own stream: prefix of a larger batch is unchanged
    SampleSet three = generate_trajectory(model, y0, ymask, c, cmask, times, 3, 8, Rng(123));
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(three.paths[s].values() == a.paths[s].values());
    }
}

TEST_CASE("baseline and rollout conditioning modes disagree after the first step") {
    Model model = Model::init(tiny_cfg(), 1, 21);
    Tensor y0 = Tensor::vector({0.1, 0.5});
    std::vector<std::uint8_t> ymask{1, 1};
    Tensor c = Tensor::vector({-0.3});
    std::vector<std::uint8_t> cmask{1};
    std::vector<double> times{1.0, 3.0, 6.0};

    SampleSet roll = generate_trajectory(model, y0, ymask, c, cmask, times, 4, 8, Rng(5),
                                         GenMode::kRollout);
    SampleSet base = generate_trajectory(model, y0, ymask, c, cmask, times, 4, 8, Rng(5),
                                         GenMode::kFromBaseline);
    CHECK(base.mode == GenMode::kFromBaseline);

    bool later_diff = false;
    for (std::size_t s = 0; s < 4; ++s) {
        // identical conditioning and identical streams at the first horizon
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(roll.paths[s].at(0, i) == base.paths[s].at(0, i));
        }
        for (std::size_t j = 1; j < 3; ++j) {
            for (std::size_t i = 0; i < 2; ++i) {
                if (roll.paths[s].at(j, i) != base.paths[s].at(j, i)) later_diff = true;
            }
        }
    }
    CHECK(later_diff);
}

TEST_CASE("generation depends on missing inputs only through the imputer fill") {
    Model model = Model::init(tiny_cfg(), 1, 33);
    Tensor y0 = Tensor::vector({0.7, 0.0});
    std::vector<std::uint8_t> ymask{1, 0};
    Tensor c = Tensor::vector({0.0});
    std::vector<std::uint8_t> cmask{0};
    std::vector<double> times{2.0, 5.0};

    Tensor y0_f, c0_f;
    model.fill_visit(y0, ymask, c, cmask, y0_f, c0_f);
    CHECK(y0_f[0] == 0.7);
    CHECK(y0_f[1] != 0.0);

    std::vector<std::uint8_t> full_y{1, 1}, full_c{1};
    SampleSet masked = generate_trajectory(model, y0, ymask, c, cmask, times, 3, 8, Rng(77),
                                           GenMode::kFromBaseline);
    SampleSet filled = generate_trajectory(model, y0_f, full_y, c0_f, full_c, times, 3, 8,
                                           Rng(77), GenMode::kFromBaseline);
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(masked.paths[s].values() == filled.paths[s].values());
    }
}

TEST_CASE("trajectory inputs are validated") {
    Model model = Model::init(tiny_cfg(), 1, 7);
    Tensor y0 = Tensor::vector({0.0, 0.0});
    std::vector<std::uint8_t> ymask{1, 1};
    Tensor c = Tensor::vector({0.0});
    std::vector<std::uint8_t> cmask{1};

    CHECK_THROWS_AS(generate_trajectory(model, y0, ymask, c, cmask, {}, 1, 8, Rng(1)),
                    ConfigError);
    CHECK_THROWS_AS(generate_trajectory(model, y0, ymask, c, cmask, {1.0, 1.0}, 1, 8, Rng(1)),
                    ConfigError);
    CHECK_THROWS_AS(generate_trajectory(model, y0, ymask, c, cmask, {0.0, 1.0}, 1, 8, Rng(1)),
                    ConfigError);
    CHECK_THROWS_AS(generate_trajectory(model, y0, ymask, c, cmask, {-1.0}, 1, 8, Rng(1)),
                    ConfigError);
    CHECK_THROWS_AS(generate_trajectory(model, y0, ymask, c, cmask, {1.0}, 1, 0, Rng(1)),
                    ConfigError);

    SampleSet empty = generate_trajectory(model, y0, ymask, c, cmask, {1.0, 2.0}, 0, 8, Rng(1));
    CHECK(empty.paths.empty());
    CHECK(empty.n_dims == 2);
    CHECK(empty.times.size() == 2);
}
