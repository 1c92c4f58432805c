#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtg/graph.hpp"
#include "dtg/rng.hpp"
#include "dtg/tensor.hpp"

namespace dtg {

// Architecture hyper-parameters. N/M/C are the observed, hidden and context
// dimensions; layer counts default to the single-layer configuration that
// the conditional energy model is designed around.
struct NetConfig {
    std::size_t n = 1;
    std::size_t m = 8;
    std::size_t c = 0;
    std::size_t imputer_embed = 8;
    std::size_t flow_depth = 3;
    std::size_t corrector_layers = 1;
    std::size_t wnet_layers = 1;
    std::size_t pnet_layers = 1;
    std::size_t tte_residual_layers = 1;
    // true: scale w(x) by 1/sqrt(N*M); false: by 1/sqrt(M)
    bool wnet_scale_total = true;

    std::size_t input_dim() const { return n + c; }
    void validate() const;
};

// Input wrapper used by every sub-network: LayerNorm (no affine) scaled by
// 1/sqrt(dim), which keeps linear-layer output variance set by the weight
// norm alone.
ad::Var norm_input(ad::Tape& t, ad::Var x);

struct Linear {
    ad::Param weight;  // [out, in]
    ad::Param bias;    // [out]

    Linear() = default;
    // weights ~ normal(0, 1/fan_in), zero bias
    Linear(const std::string& name, std::size_t out, std::size_t in, Rng& rng);

    ad::Var operator()(ad::Tape& t, ad::Var x);
    void set_identity();  // square layers only
};

// Autoencoder that fills missing entries of x = [y, c]. Encoder and decoder
// are each two arcsinh layers over norm_input; the conditional replacement
// keeps observed entries untouched, and downstream consumers receive the
// imputed slots as constants (no gradient back into the autoencoder).
struct Imputer {
    Linear enc1, enc2, dec1, dec2;

    // d(e(x)) for a zero-filled x; used by the reconstruction loss.
    ad::Var reconstruct(ad::Tape& t, ad::Var x_zerofilled);

    // Inference-mode conditional replacement over a raw (sentinel-filled)
    // vector and its observedness mask.
    Tensor fill(const Tensor& x, const std::vector<std::uint8_t>& mask);
};

// Stack of flow blocks: z <- theta(z + t * Linear(norm([z, c]))) with
// theta(x) = s * arcsinh(x / s) and s = exp(s_hat) shared across blocks.
struct Flow {
    std::vector<Linear> blocks;
    ad::Param s_hat;  // length N

    ad::Var operator()(ad::Tape& t, ad::Var state, ad::Var c, double time);
};

// Predictor-corrector mean: f = g(x, t_fut) + e^{-|λ_f|Δt} ⊙ q(g(x, t_cur) - y_cur)
// with x = [y0, c] and q a linear stack initialized to the identity.
struct MeanNet {
    Flow flow;
    std::vector<Linear> corrector;
    ad::Param lambda_f;  // length N

    ad::Var predict(ad::Tape& t, ad::Var y0, ad::Var c, ad::Var y_cur, double t_cur,
                    double t_fut);
    // Self-consistency target: g([g(x, t_cur), c], t_fut).
    ad::Var predict_star(ad::Tape& t, ad::Var y0, ad::Var c, double t_cur, double t_fut);
};

// W(x, Δt) = e^{-|λ_W|Δt} (row-wise) ⊙ scale · Linear(norm(x)) reshaped [N, M].
struct WNet {
    std::vector<Linear> layers;
    ad::Param lambda_w;  // length N
    double scale = 1.0;

    ad::Var operator()(ad::Tape& t, ad::Var x, double dt);
};

// P(x, Δt) = exp[β − log(1 + (1 − e^{-|λ_P|Δt}) e^{p(x)})]; equals e^β at
// Δt = 0 and decreases monotonically toward e^β / (1 + e^{p(x)}).
struct PNet {
    std::vector<Linear> layers;
    ad::Param lambda_p;  // length N
    ad::Param beta;      // length N

    ad::Var operator()(ad::Tape& t, ad::Var x, double dt);
};

// Event-time head over x = imputed [y(0), c]: residual arcsinh blocks, then
// norm + linear collapse to the log-time location a(x); log T = a + σ ε with
// ε minimum-Gumbel and σ = exp(sigma_hat).
struct TTEHead {
    std::vector<Linear> residual;
    Linear collapse;
    ad::Param sigma_hat;  // scalar

    ad::Var log_scale(ad::Tape& t, ad::Var x);  // a(x), scalar
    ad::Var sigma(ad::Tape& t);
    double median_time(const Tensor& x_filled);  // e^a (ln 2)^σ
};

struct Model {
    NetConfig cfg;
    Imputer imputer;
    MeanNet mean;
    WNet wnet;
    PNet pnet;
    std::vector<TTEHead> tte;  // one head per event outcome

    static Model init(const NetConfig& cfg, std::size_t n_outcomes, std::uint64_t seed);

    // Stable declaration order; also the serialization order.
    std::vector<ad::Param*> params();

    // Gate tensors (s, λ, β, σ) are excluded from weight decay.
    static bool is_gate(const ad::Param& p);

    // Convenience: imputer fill of a visit/context pair, split back apart.
    void fill_visit(const Tensor& y, const std::vector<std::uint8_t>& ymask, const Tensor& c,
                    const std::vector<std::uint8_t>& cmask, Tensor& y_out, Tensor& c_out);
};

}  // namespace dtg
