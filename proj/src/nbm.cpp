#include "dtg/nbm.hpp"

#include <cmath>

#include "dtg/errors.hpp"

namespace dtg::nbm {

namespace {

double logcosh_stable(double x) {
    double a = std::fabs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453094172321;
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// w'(y - f)
std::vector<double> hidden_field(const EnergyContext& ctx, const Tensor& y) {
    std::size_t n = ctx.n(), m = ctx.m();
    std::vector<double> phi(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double d = y[i] - ctx.f[i];
        for (std::size_t j = 0; j < m; ++j) phi[j] += ctx.w.at(i, j) * d;
    }
    return phi;
}

}  // namespace

void EnergyContext::validate() const {
    if (f.rank() != 1 || p.rank() != 1 || w.rank() != 2) {
        throw ShapeError("energy context: f,p vectors and w matrix required");
    }
    if (p.numel() != f.numel() || w.shape()[0] != f.numel()) {
        throw ShapeError("energy context: inconsistent dimensions");
    }
    for (double v : p.values()) {
        if (!(v > 0.0)) throw NumericError("energy context: precision must be positive");
    }
}

double joint_energy(const EnergyContext& ctx, const Tensor& y, const Tensor& h) {
    if (y.numel() != ctx.n() || h.numel() != ctx.m()) {
        throw ShapeError("joint energy: dimension mismatch");
    }
    for (double v : h.values()) {
        if (v != 1.0 && v != -1.0) throw DataError("joint energy: hidden units must be +1 or -1");
    }
    double quad = 0.0, inter = 0.0;
    for (std::size_t i = 0; i < ctx.n(); ++i) {
        double d = y[i] - ctx.f[i];
        quad += ctx.p[i] * d * d;
        double row = 0.0;
        for (std::size_t j = 0; j < ctx.m(); ++j) row += ctx.w.at(i, j) * h[j];
        inter += d * row;
    }
    return 0.5 * quad - inter;
}

double marginal_energy(const EnergyContext& ctx, const Tensor& y) {
    if (y.numel() != ctx.n()) throw ShapeError("marginal energy: dimension mismatch");
    double quad = 0.0;
    for (std::size_t i = 0; i < ctx.n(); ++i) {
        double d = y[i] - ctx.f[i];
        quad += ctx.p[i] * d * d;
    }
    double lc = 0.0;
    for (double phi : hidden_field(ctx, y)) lc += logcosh_stable(phi);
    return 0.5 * quad - lc;
}

ad::Var marginal_energy_graph(ad::Tape& t, ad::Var f, ad::Var p, ad::Var w, const Tensor& y) {
    ad::Var diff = t.sub(t.constant(y), f);
    ad::Var quad = t.mul_scalar(t.sum(t.mul(p, t.mul(diff, diff))), 0.5);
    ad::Var phi = t.tmatvec(w, diff);
    return t.sub(quad, t.sum(t.logcosh(phi)));
}

Tensor sample_y_given_h(const EnergyContext& ctx, const Tensor& h, Rng& rng) {
    for (double v : h.values()) {
        if (v != 1.0 && v != -1.0) throw DataError("sample y|h: hidden units must be +1 or -1");
    }
    Tensor y = Tensor::zeros({ctx.n()});
    for (std::size_t i = 0; i < ctx.n(); ++i) {
        double drive = 0.0;
        for (std::size_t j = 0; j < ctx.m(); ++j) drive += ctx.w.at(i, j) * h[j];
        y[i] = ctx.f[i] + drive / ctx.p[i] + rng.normal() / std::sqrt(ctx.p[i]);
    }
    return y;
}

Tensor sample_h_given_y(const EnergyContext& ctx, const Tensor& y, Rng& rng) {
    auto phi = hidden_field(ctx, y);
    Tensor h = Tensor::zeros({ctx.m()});
    for (std::size_t j = 0; j < ctx.m(); ++j) {
        h[j] = rng.uniform() < logistic(2.0 * phi[j]) ? 1.0 : -1.0;
    }
    return h;
}

Tensor gibbs_sample(const EnergyContext& ctx, int k, Rng& rng) {
    if (k < 1) throw ConfigError("gibbs: need at least one iteration");
    Tensor y = ctx.f;
    for (int it = 0; it < k; ++it) {
        Tensor h = sample_h_given_y(ctx, y, rng);
        y = sample_y_given_h(ctx, h, rng);
    }
    return y;
}

EnergyContext build_context(Model& model, const Tensor& y0_f, const Tensor& c0_f,
                            const Tensor& ycur_f, const Tensor& ccur_f, double t_cur,
                            double t_fut) {
    ad::Tape t;
    ad::Var y0 = t.constant(y0_f);
    ad::Var c0 = t.constant(c0_f);
    ad::Var ycur = t.constant(ycur_f);

    std::vector<double> xcur(ycur_f.values());
    xcur.insert(xcur.end(), ccur_f.values().begin(), ccur_f.values().end());
    ad::Var x = t.constant(Tensor::vector(std::move(xcur)));

    EnergyContext ctx;
    ctx.f = t.value(model.mean.predict(t, y0, c0, ycur, t_cur, t_fut));
    ctx.w = t.value(model.wnet(t, x, t_fut - t_cur));
    ctx.p = t.value(model.pnet(t, x, t_fut - t_cur));
    ctx.validate();
    return ctx;
}

SampleSet generate_trajectory(Model& model, const Tensor& y0, const std::vector<std::uint8_t>& ymask,
                              const Tensor& c, const std::vector<std::uint8_t>& cmask,
                              const std::vector<double>& times, std::size_t n_samples, int gibbs_k,
                              const Rng& rng, GenMode mode) {
    if (times.empty()) throw ConfigError("generate: no horizons requested");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] <= 0.0 || (i > 0 && times[i] <= times[i - 1])) {
            throw ConfigError("generate: horizons must be positive and strictly increasing");
        }
    }
    if (gibbs_k < 1) throw ConfigError("generate: gibbs iterations must be >= 1");

    SampleSet out;
    out.times = times;
    out.n_dims = y0.numel();
    out.mode = mode;
    if (n_samples == 0) return out;

    Tensor y0_f, c0_f;
    model.fill_visit(y0, ymask, c, cmask, y0_f, c0_f);
    std::vector<std::uint8_t> full(y0.numel(), 1);

    out.paths.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        Rng sample_rng = rng.stream(s);
        Tensor path = Tensor::zeros({times.size(), y0.numel()});
        Tensor y_prev = y0_f;
        Tensor c_prev = c0_f;
        double t_prev = 0.0;
        for (std::size_t j = 0; j < times.size(); ++j) {
            Rng step_rng = sample_rng.stream(j);
            EnergyContext ctx = build_context(model, y0_f, c0_f, y_prev, c_prev, t_prev, times[j]);
            Tensor y = gibbs_sample(ctx, gibbs_k, step_rng);
            for (std::size_t i = 0; i < y.numel(); ++i) path.at(j, i) = y[i];
            if (mode == GenMode::kRollout) {
                // sampled visit is fully observed; re-impute only the context
                model.fill_visit(y, full, c, cmask, y_prev, c_prev);
                t_prev = times[j];
            }
        }
        out.paths.push_back(std::move(path));
    }
    return out;
}

}  // namespace dtg::nbm
