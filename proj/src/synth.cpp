#include "dtg/synth.hpp"

#include <cmath>
#include <cstdio>

#include "dtg/errors.hpp"

namespace dtg::synth {

namespace {

// Stream labels so each random purpose draws independently per patient.
enum : std::uint64_t { kCtx = 1, kSchedule = 2, kPath = 3, kMask = 4, kTte = 5 };

Tensor mvn_draw(const Tensor& mean, const Tensor& chol, Rng& rng) {
    std::size_t n = mean.numel();
    std::vector<double> z(n);
    for (auto& v : z) v = rng.normal();
    Tensor out = mean;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += chol.at(i, j) * z[j];
        out[i] += acc;
    }
    return out;
}

}  // namespace

void OUSpec::validate() const {
    if (n_dims < 1) throw ConfigError("ou: need at least one dimension");
    if (theta.size() != n_dims || sigma.size() != n_dims || mean0.size() != n_dims) {
        throw ConfigError("ou: theta/sigma/mean0 must have length n_dims");
    }
    for (double v : theta)
        if (!(v > 0.0)) throw ConfigError("ou: theta must be positive");
    for (double v : sigma)
        if (!(v > 0.0)) throw ConfigError("ou: sigma must be positive");
    if (mean_ctx.shape() != std::vector<std::size_t>{n_dims, n_ctx}) {
        throw ConfigError("ou: mean_ctx must be [n_dims, n_ctx]");
    }
    if (corr.shape() != std::vector<std::size_t>{n_dims, n_dims}) {
        throw ConfigError("ou: corr must be [n_dims, n_dims]");
    }
    for (std::size_t i = 0; i < n_dims; ++i) {
        if (corr.at(i, i) != 1.0) throw ConfigError("ou: corr diagonal must be 1");
        for (std::size_t j = 0; j < n_dims; ++j) {
            if (corr.at(i, j) != corr.at(j, i)) throw ConfigError("ou: corr must be symmetric");
        }
    }
    if (schedules.empty()) throw ConfigError("ou: need at least one visit schedule");
    for (const auto& s : schedules) {
        if (s.empty() || s[0] != 0.0) throw ConfigError("ou: every schedule must start at 0");
        for (std::size_t i = 1; i < s.size(); ++i) {
            if (s[i] <= s[i - 1]) throw ConfigError("ou: schedule times must increase");
        }
    }
    if (missing_rate < 0.0 || missing_rate >= 1.0 || ctx_missing_rate < 0.0 || ctx_missing_rate >= 1.0) {
        throw ConfigError("ou: missing rates must lie in [0,1)");
    }
}

Tensor OUSpec::stationary_mean(const Tensor& c) const {
    Tensor mu = Tensor::vector(std::vector<double>(mean0));
    for (std::size_t i = 0; i < n_dims; ++i) {
        for (std::size_t j = 0; j < n_ctx; ++j) mu[i] += mean_ctx.at(i, j) * c[j];
    }
    return mu;
}

Tensor OUSpec::stationary_cov() const {
    Tensor cov = Tensor::zeros({n_dims, n_dims});
    for (std::size_t i = 0; i < n_dims; ++i) {
        for (std::size_t j = 0; j < n_dims; ++j) {
            cov.at(i, j) = sigma[i] * sigma[j] * corr.at(i, j) / (theta[i] + theta[j]);
        }
    }
    return cov;
}

Tensor OUSpec::transition_cov(double dt) const {
    Tensor cov = stationary_cov();
    for (std::size_t i = 0; i < n_dims; ++i) {
        for (std::size_t j = 0; j < n_dims; ++j) {
            cov.at(i, j) *= 1.0 - std::exp(-(theta[i] + theta[j]) * dt);
        }
    }
    return cov;
}

void OUSpec::conditional_moments(const Tensor& c, const Tensor& y_cur, double dt,
                                 Tensor& mean, Tensor& var) const {
    Tensor mu = stationary_mean(c);
    mean = Tensor::zeros({n_dims});
    var = Tensor::zeros({n_dims});
    for (std::size_t i = 0; i < n_dims; ++i) {
        double decay = std::exp(-theta[i] * dt);
        mean[i] = mu[i] + (y_cur[i] - mu[i]) * decay;
        var[i] = sigma[i] * sigma[i] / (2.0 * theta[i]) * (1.0 - decay * decay);
    }
}

void TTESpec::validate(std::size_t n_ctx) const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ConfigError("tte: kappa must be finite positive");
    if (ctx_weights.size() != n_ctx) throw ConfigError("tte: ctx_weights must have length n_ctx");
    if (censor_hi >= 0.0 && censor_lo > censor_hi) throw ConfigError("tte: censor_lo > censor_hi");
}

double TTESpec::log_scale(const Tensor& c) const {
    double a = intercept;
    for (std::size_t j = 0; j < ctx_weights.size(); ++j) a += ctx_weights[j] * c[j];
    return a;
}

double TTESpec::median_time(const Tensor& c) const {
    return std::exp(log_scale(c)) * std::pow(std::log(2.0), 1.0 / kappa);
}

TTERecord gen_tte(const TTESpec& spec, const Tensor& c, Rng& rng) {
    double t = std::exp(spec.log_scale(c) + rng.gumbel_min() / spec.kappa);
    if (spec.censor_hi >= 0.0) {
        double censor = rng.uniform(std::max(spec.censor_lo, 0.0), spec.censor_hi);
        if (censor < t) return TTERecord{censor, false};
    }
    return TTERecord{t, true};
}

std::vector<PatientRecord> gen_cohort(const OUSpec& spec, const std::vector<TTESpec>& tte,
                                      std::size_t n_patients, std::uint64_t seed,
                                      std::vector<PatientRecord>* truth_out) {
    spec.validate();
    for (const auto& t : tte) t.validate(spec.n_ctx);
    if (n_patients < 1) throw ConfigError("cohort: need at least one patient");

    Tensor chol_stat = cholesky_lower(spec.stationary_cov());
    // One transition factor per (schedule, step); exact sampling, no Euler.
    std::vector<std::vector<Tensor>> chol_steps(spec.schedules.size());
    for (std::size_t s = 0; s < spec.schedules.size(); ++s) {
        const auto& grid = spec.schedules[s];
        for (std::size_t k = 1; k < grid.size(); ++k) {
            chol_steps[s].push_back(cholesky_lower(spec.transition_cov(grid[k] - grid[k - 1])));
        }
    }

    std::vector<PatientRecord> records;
    records.reserve(n_patients);
    if (truth_out) {
        truth_out->clear();
        truth_out->reserve(n_patients);
    }

    for (std::size_t p = 0; p < n_patients; ++p) {
        Rng base(seed, p);
        PatientRecord rec;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "p%06zu", p);
        rec.id = buf;

        Rng ctx_rng = base.stream(kCtx);
        rec.context = Tensor::zeros({spec.n_ctx});
        for (std::size_t j = 0; j < spec.n_ctx; ++j) rec.context[j] = ctx_rng.normal();
        rec.context_mask.assign(spec.n_ctx, 1);

        Rng sched_rng = base.stream(kSchedule);
        std::size_t si = static_cast<std::size_t>(sched_rng.below(spec.schedules.size()));
        const auto& grid = spec.schedules[si];

        Rng path_rng = base.stream(kPath);
        Tensor mu = spec.stationary_mean(rec.context);
        Tensor y = mvn_draw(mu, chol_stat, path_rng);
        rec.visits.reserve(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (k > 0) {
                double dt = grid[k] - grid[k - 1];
                Tensor mean = Tensor::zeros({spec.n_dims});
                for (std::size_t i = 0; i < spec.n_dims; ++i) {
                    mean[i] = mu[i] + (y[i] - mu[i]) * std::exp(-spec.theta[i] * dt);
                }
                y = mvn_draw(mean, chol_steps[si][k - 1], path_rng);
            }
            Visit v;
            v.t = grid[k];
            v.values = y;
            v.mask.assign(spec.n_dims, 1);
            rec.visits.push_back(std::move(v));
        }

        Rng tte_rng = base.stream(kTte);
        rec.tte.reserve(tte.size());
        for (const auto& ts : tte) rec.tte.push_back(gen_tte(ts, rec.context, tte_rng));

        if (truth_out) truth_out->push_back(rec);

        Rng mask_rng = base.stream(kMask);
        for (auto& v : rec.visits) {
            for (std::size_t j = 0; j < spec.n_dims; ++j) {
                if (spec.missing_rate > 0.0 && mask_rng.bernoulli(spec.missing_rate)) {
                    v.mask[j] = 0;
                    v.values[j] = 0.0;
                }
            }
        }
        for (std::size_t j = 0; j < spec.n_ctx; ++j) {
            if (spec.ctx_missing_rate > 0.0 && mask_rng.bernoulli(spec.ctx_missing_rate)) {
                rec.context_mask[j] = 0;
                rec.context[j] = 0.0;
            }
        }

        records.push_back(std::move(rec));
    }
    return records;
}

Schema default_schema(std::size_t n_dims, std::size_t n_ctx, std::size_t n_outcomes) {
    Schema s;
    for (std::size_t i = 1; i <= n_dims; ++i) {
        s.longitudinal.push_back({"y" + std::to_string(i), VarKind::kContinuous});
    }
    for (std::size_t i = 1; i <= n_ctx; ++i) {
        s.context.push_back({"c" + std::to_string(i), VarKind::kContinuous});
    }
    for (std::size_t i = 1; i <= n_outcomes; ++i) {
        s.tte_outcomes.push_back("event" + std::to_string(i));
    }
    return s;
}

Tensor cholesky_lower(const Tensor& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) {
        throw ShapeError("cholesky: square matrix required");
    }
    std::size_t n = a.shape()[0];
    Tensor l = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (acc <= 0.0) throw NumericError("cholesky: matrix is not positive definite");
                l.at(i, i) = std::sqrt(acc);
            } else {
                l.at(i, j) = acc / l.at(j, j);
            }
        }
    }
    return l;
}

}  // namespace dtg::synth
