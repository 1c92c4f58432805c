#pragma once

#include <cstdint>
#include <vector>

#include "dtg/datamodel.hpp"
#include "dtg/rng.hpp"
#include "dtg/tensor.hpp"

namespace dtg::synth {

// Multivariate Ornstein-Uhlenbeck cohort: dy = θ(μ(c) - y)dt + σ dB with
// per-dimension reversion/diffusion, stationary mean affine in the context,
// and cross-dimension correlation through the Brownian increments. Every
// conditional law is available in closed form, which makes the generated
// cohort a ground-truth oracle for the model's predictive moments.
struct OUSpec {
    std::size_t n_dims = 1;
    std::size_t n_ctx = 1;
    std::vector<double> theta;               // reversion, length n_dims, > 0
    std::vector<double> sigma;               // diffusion, length n_dims, > 0
    std::vector<double> mean0;               // stationary mean intercept
    Tensor mean_ctx;                         // [n_dims, n_ctx] context weights
    Tensor corr;                             // [n_dims, n_dims] SPD, unit diagonal
    std::vector<std::vector<double>> schedules;  // visit grids, each starts at 0
    double missing_rate = 0.0;               // MCAR on longitudinal entries
    double ctx_missing_rate = 0.0;

    void validate() const;

    Tensor stationary_mean(const Tensor& c) const;
    // Cov_ij = σ_i σ_j R_ij / (θ_i + θ_j)
    Tensor stationary_cov() const;
    // Cov_ij(Δ) = σ_i σ_j R_ij / (θ_i + θ_j) · (1 − e^{−(θ_i+θ_j)Δ})
    Tensor transition_cov(double dt) const;
    // Per-dim conditional law of y(t+Δ) | y(t), c.
    void conditional_moments(const Tensor& c, const Tensor& y_cur, double dt,
                             Tensor& mean, Tensor& var) const;
};

// Weibull event times in accelerated-failure-time form: the log time is
// a(c) plus a scaled minimum-Gumbel draw, so log T = intercept + w·c + g/kappa.
struct TTESpec {
    double intercept = 0.0;
    std::vector<double> ctx_weights;
    double kappa = 1.0;                      // shape; larger = less noise
    double censor_lo = -1.0, censor_hi = -1.0;  // uniform censor window; <0 disables

    void validate(std::size_t n_ctx) const;

    double log_scale(const Tensor& c) const;           // a_true(c)
    double median_time(const Tensor& c) const;         // e^{a} (ln 2)^{1/kappa}
};

// Deterministic cohort draw: contexts i.i.d. standard normal, baselines from
// the stationary law, later visits by exact transition sampling (no time
// discretization), per-patient schedule chosen uniformly, MCAR masking.
// When truth_out is non-null it receives the same cohort without masking.
std::vector<PatientRecord> gen_cohort(const OUSpec& spec, const std::vector<TTESpec>& tte,
                                      std::size_t n_patients, std::uint64_t seed,
                                      std::vector<PatientRecord>* truth_out = nullptr);

TTERecord gen_tte(const TTESpec& spec, const Tensor& c, Rng& rng);

// Continuous variables named y1..yN / c1..cC and outcomes event1..eventK.
Schema default_schema(std::size_t n_dims, std::size_t n_ctx, std::size_t n_outcomes);

// Lower-triangular factor: a = L Lᵀ. Throws NumericError when a is not
// positive definite.
Tensor cholesky_lower(const Tensor& a);

}  // namespace dtg::synth
