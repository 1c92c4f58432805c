#pragma once

#include <cstdint>
#include <vector>

#include "dtg/networks.hpp"
#include "dtg/rng.hpp"
#include "dtg/tensor.hpp"

namespace dtg::nbm {

// Network outputs frozen at one conditioning point (x, t_cur, t_fut).
// Energy over observed state y and hidden spins h in {-1,+1}^M:
//   U(y, h) = 1/2 (y-f)' diag(p) (y-f) - (y-f)' w h
struct EnergyContext {
    Tensor f;  // [N]
    Tensor p;  // [N], strictly positive
    Tensor w;  // [N, M]

    std::size_t n() const { return f.numel(); }
    std::size_t m() const { return w.cols(); }
    void validate() const;
};

double joint_energy(const EnergyContext& ctx, const Tensor& y, const Tensor& h);

// Hidden spins summed out: 1/2 (y-f)' diag(p) (y-f) - sum_i logcosh([w'(y-f)]_i).
// Equals -log sum_h exp(-joint) + M log 2.
double marginal_energy(const EnergyContext& ctx, const Tensor& y);

// Differentiable marginal energy for training losses; y enters as data.
ad::Var marginal_energy_graph(ad::Tape& t, ad::Var f, ad::Var p, ad::Var w, const Tensor& y);

// y | h ~ Normal(f + diag(p)^-1 w h, diag(p)^-1)
Tensor sample_y_given_h(const EnergyContext& ctx, const Tensor& h, Rng& rng);

// h_i | y ~ +1 with probability logistic(2 [w'(y-f)]_i), independent units.
Tensor sample_h_given_y(const EnergyContext& ctx, const Tensor& y, Rng& rng);

// Block Gibbs chain started at y = f; k rounds of (h | y, then y | h); the
// final y is returned.
Tensor gibbs_sample(const EnergyContext& ctx, int k, Rng& rng);

// Network forward passes at one conditioning point. The flow terms condition
// on the (imputed) baseline [y0, c0]; the coupling and precision nets see the
// (imputed) current visit [y_cur, c_cur].
EnergyContext build_context(Model& model, const Tensor& y0_f, const Tensor& c0_f,
                            const Tensor& ycur_f, const Tensor& ccur_f, double t_cur,
                            double t_fut);

enum class GenMode : std::uint8_t {
    kRollout,       // condition each step on the previously sampled visit
    kFromBaseline,  // condition every horizon directly on the baseline
};

struct SampleSet {
    std::vector<double> times;
    std::size_t n_dims = 0;
    GenMode mode = GenMode::kRollout;
    std::vector<Tensor> paths;  // each [times.size(), n_dims]
};

// Draw n_samples full trajectories at the requested horizons (months,
// strictly increasing, all positive). Deterministic per (rng stream, sample
// index, step index); samples are independent streams, so generation can be
// sharded by sample.
SampleSet generate_trajectory(Model& model, const Tensor& y0, const std::vector<std::uint8_t>& ymask,
                              const Tensor& c, const std::vector<std::uint8_t>& cmask,
                              const std::vector<double>& times, std::size_t n_samples, int gibbs_k,
                              const Rng& rng, GenMode mode = GenMode::kRollout);

}  // namespace dtg::nbm
