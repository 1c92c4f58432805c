#include "dtg/networks.hpp"

#include <cmath>

#include "dtg/errors.hpp"

namespace dtg {

using ad::Tape;
using ad::Var;

void NetConfig::validate() const {
    if (n < 1 || m < 1 || imputer_embed < 1) throw ConfigError("net: n, m, imputer_embed must be >= 1");
    if (flow_depth < 1 || corrector_layers < 1 || wnet_layers < 1 || pnet_layers < 1 ||
        tte_residual_layers < 1) {
        throw ConfigError("net: layer counts must be >= 1");
    }
}

Var norm_input(Tape& t, Var x) {
    double d = static_cast<double>(t.value(x).numel());
    return t.mul_scalar(t.layernorm(x), 1.0 / std::sqrt(d));
}

Linear::Linear(const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    Tensor w = Tensor::zeros({out, in});
    double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.values()) v = rng.normal(0.0, sd);
    weight = ad::Param(name + ".weight", std::move(w));
    bias = ad::Param(name + ".bias", Tensor::zeros({out}));
}

Var Linear::operator()(Tape& t, Var x) { return t.linear(weight, bias, x); }

void Linear::set_identity() {
    if (weight.value.shape()[0] != weight.value.shape()[1]) {
        throw ConfigError("identity init needs a square layer: " + weight.name);
    }
    weight.value.fill(0.0);
    for (std::size_t i = 0; i < weight.value.shape()[0]; ++i) weight.value.at(i, i) = 1.0;
    bias.value.fill(0.0);
}

Var Imputer::reconstruct(Tape& t, Var x_zerofilled) {
    auto layer = [&t](Linear& l, Var v) { return t.arcsinh(l(t, norm_input(t, v))); };
    Var h = layer(enc1, x_zerofilled);
    h = layer(enc2, h);
    h = layer(dec1, h);
    return layer(dec2, h);
}

Tensor Imputer::fill(const Tensor& x, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != x.numel()) throw ShapeError("imputer fill: mask length mismatch");
    Tensor z = x;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) z[i] = 0.0;
    }
    Tape t;
    Tensor rep = t.value(reconstruct(t, t.constant(z)));
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) rep[i] = x[i];
    }
    return rep;
}

Var Flow::operator()(Tape& t, Var state, Var c, double time) {
    Var s = t.exp(t.leaf(s_hat));
    Var s_inv = t.exp(t.mul_scalar(t.leaf(s_hat), -1.0));
    Var z = state;
    bool has_ctx = t.value(c).numel() > 0;
    for (auto& block : blocks) {
        Var input = has_ctx ? t.concat(z, c) : z;
        Var drift = block(t, norm_input(t, input));
        Var pre = t.add(z, t.mul_scalar(drift, time));
        z = t.mul(s, t.arcsinh(t.mul(s_inv, pre)));
    }
    return z;
}

Var MeanNet::predict(Tape& t, Var y0, Var c, Var y_cur, double t_cur, double t_fut) {
    Var g_fut = flow(t, y0, c, t_fut);
    Var g_cur = flow(t, y0, c, t_cur);
    Var residual = t.sub(g_cur, y_cur);
    for (auto& q : corrector) residual = q(t, residual);
    double dt = t_fut - t_cur;
    Var gate = t.exp(t.mul_scalar(t.abs(t.leaf(lambda_f)), -dt));
    return t.add(g_fut, t.mul(gate, residual));
}

Var MeanNet::predict_star(Tape& t, Var y0, Var c, double t_cur, double t_fut) {
    Var g_cur = flow(t, y0, c, t_cur);
    return flow(t, g_cur, c, t_fut);
}

Var WNet::operator()(Tape& t, Var x, double dt) {
    Var h = x;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = layers[i](t, norm_input(t, h));
    Var flat = t.mul_scalar(layers.back()(t, norm_input(t, h)), scale);
    std::size_t n = lambda_w.value.numel();
    Var mat = t.reshape(flat, {n, t.value(flat).numel() / n});
    Var gate = t.exp(t.mul_scalar(t.abs(t.leaf(lambda_w)), -dt));
    return t.row_scale(mat, gate);
}

Var PNet::operator()(Tape& t, Var x, double dt) {
    Var h = x;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = layers[i](t, norm_input(t, h));
    Var p = layers.back()(t, norm_input(t, h));
    Var gate = t.exp(t.mul_scalar(t.abs(t.leaf(lambda_p)), -dt));
    Var one_minus = t.add_scalar(t.mul_scalar(gate, -1.0), 1.0);
    Var inner = t.add_scalar(t.mul(one_minus, t.exp(p)), 1.0);
    return t.exp(t.sub(t.leaf(beta), t.log(inner)));
}

Var TTEHead::log_scale(Tape& t, Var x) {
    Var h = x;
    for (auto& r : residual) h = t.add(h, t.arcsinh(r(t, norm_input(t, h))));
    return t.sum(collapse(t, norm_input(t, h)));
}

Var TTEHead::sigma(Tape& t) { return t.exp(t.leaf(sigma_hat)); }

double TTEHead::median_time(const Tensor& x_filled) {
    Tape t;
    double a = t.value(log_scale(t, t.constant(x_filled))).item();
    double s = std::exp(sigma_hat.value.item());
    return std::exp(a) * std::pow(std::log(2.0), s);
}

Model Model::init(const NetConfig& cfg, std::size_t n_outcomes, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed, /*init stream*/ 0x1217);
    const std::size_t d = cfg.input_dim();
    const std::size_t e = cfg.imputer_embed;
    const std::size_t n = cfg.n;

    m.imputer.enc1 = Linear("imputer.enc1", e, d, rng);
    m.imputer.enc2 = Linear("imputer.enc2", e, e, rng);
    m.imputer.dec1 = Linear("imputer.dec1", e, e, rng);
    m.imputer.dec2 = Linear("imputer.dec2", d, e, rng);

    for (std::size_t l = 0; l < cfg.flow_depth; ++l) {
        m.mean.flow.blocks.emplace_back("mean.flow" + std::to_string(l + 1), n, d, rng);
    }
    m.mean.flow.s_hat = ad::Param("mean.s_hat", Tensor::zeros({n}));
    for (std::size_t l = 0; l < cfg.corrector_layers; ++l) {
        m.mean.corrector.emplace_back("mean.q" + std::to_string(l + 1), n, n, rng);
        m.mean.corrector.back().set_identity();
    }
    m.mean.lambda_f = ad::Param("mean.lambda", Tensor::full({n}, 0.1));

    for (std::size_t l = 0; l < cfg.wnet_layers; ++l) {
        bool last = l + 1 == cfg.wnet_layers;
        m.wnet.layers.emplace_back("wnet.m" + std::to_string(l + 1), last ? n * cfg.m : d, d, rng);
    }
    m.wnet.lambda_w = ad::Param("wnet.lambda", Tensor::full({n}, 0.1));
    m.wnet.scale = 1.0 / std::sqrt(static_cast<double>(cfg.wnet_scale_total ? n * cfg.m : cfg.m));

    for (std::size_t l = 0; l < cfg.pnet_layers; ++l) {
        bool last = l + 1 == cfg.pnet_layers;
        m.pnet.layers.emplace_back("pnet.m" + std::to_string(l + 1), last ? n : d, d, rng);
    }
    m.pnet.lambda_p = ad::Param("pnet.lambda", Tensor::full({n}, 0.1));
    m.pnet.beta = ad::Param("pnet.beta", Tensor::zeros({n}));

    for (std::size_t k = 0; k < n_outcomes; ++k) {
        TTEHead head;
        std::string base = "tte" + std::to_string(k + 1);
        for (std::size_t l = 0; l < cfg.tte_residual_layers; ++l) {
            head.residual.emplace_back(base + ".r" + std::to_string(l + 1), d, d, rng);
        }
        head.collapse = Linear(base + ".collapse", 1, d, rng);
        head.sigma_hat = ad::Param(base + ".sigma_hat", Tensor::scalar(0.0));
        m.tte.push_back(std::move(head));
    }
    return m;
}

std::vector<ad::Param*> Model::params() {
    std::vector<ad::Param*> out;
    auto lin = [&out](Linear& l) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    };
    lin(imputer.enc1);
    lin(imputer.enc2);
    lin(imputer.dec1);
    lin(imputer.dec2);
    for (auto& b : mean.flow.blocks) lin(b);
    out.push_back(&mean.flow.s_hat);
    for (auto& q : mean.corrector) lin(q);
    out.push_back(&mean.lambda_f);
    for (auto& l : wnet.layers) lin(l);
    out.push_back(&wnet.lambda_w);
    for (auto& l : pnet.layers) lin(l);
    out.push_back(&pnet.lambda_p);
    out.push_back(&pnet.beta);
    for (auto& head : tte) {
        for (auto& r : head.residual) lin(r);
        lin(head.collapse);
        out.push_back(&head.sigma_hat);
    }
    return out;
}

bool Model::is_gate(const ad::Param& p) {
    auto ends_with = [&p](const char* suffix) {
        std::string s(suffix);
        return p.name.size() >= s.size() && p.name.compare(p.name.size() - s.size(), s.size(), s) == 0;
    };
    return ends_with(".s_hat") || ends_with(".lambda") || ends_with(".beta") || ends_with(".sigma_hat");
}

void Model::fill_visit(const Tensor& y, const std::vector<std::uint8_t>& ymask, const Tensor& c,
                       const std::vector<std::uint8_t>& cmask, Tensor& y_out, Tensor& c_out) {
    std::vector<double> joint(y.values());
    joint.insert(joint.end(), c.values().begin(), c.values().end());
    std::vector<std::uint8_t> jmask(ymask);
    jmask.insert(jmask.end(), cmask.begin(), cmask.end());
    Tensor filled = imputer.fill(Tensor::vector(std::move(joint)), jmask);
    y_out = Tensor::zeros({y.numel()});
    for (std::size_t i = 0; i < y.numel(); ++i) y_out[i] = filled[i];
    c_out = Tensor::zeros({c.numel()});
    for (std::size_t i = 0; i < c.numel(); ++i) c_out[i] = filled[y.numel() + i];
}

}  // namespace dtg
