#include "dtg/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dtg/errors.hpp"

namespace dtg {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// rng stream labels inside train()
constexpr std::uint64_t kShuffleLabel = 0xE0;
constexpr std::uint64_t kCdLabel = 0xCD;

Tensor hconcat(const Tensor& a, const Tensor& b) {
    std::vector<double> v(a.values());
    v.insert(v.end(), b.values().begin(), b.values().end());
    return Tensor::vector(std::move(v));
}

Tensor mask_tensor(const std::vector<std::uint8_t>& mask) {
    std::vector<double> v(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 1.0 : 0.0;
    return Tensor::vector(std::move(v));
}

using Sampler = std::function<Tensor(std::size_t, const nbm::EnergyContext&)>;

ad::Var loss_rbm_impl(ad::Tape& t, Model& model, const std::vector<TripletExample>& triplets,
                      const Sampler& sampler) {
    if (triplets.empty()) return t.constant_scalar(0.0);
    ad::Var acc = t.constant_scalar(0.0);
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const TripletExample& tr = triplets[i];
        ad::Var y0 = t.constant(tr.y0_f);
        ad::Var c0 = t.constant(tr.c0_f);
        ad::Var ycur = t.constant(tr.ycur_f);
        ad::Var f = model.mean.predict(t, y0, c0, ycur, tr.t_cur, tr.t_fut);

        double dt = tr.t_fut - tr.t_cur;
        ad::Var x = t.constant(hconcat(tr.ycur_f, tr.ccur_f));
        ad::Var w = model.wnet(t, x, dt);
        ad::Var p = model.pnet(t, x, dt);

        nbm::EnergyContext ctx{t.value(f), t.value(p), t.value(w)};
        Tensor y_samp = sampler(i, ctx);

        ad::Var gap = t.sub(nbm::marginal_energy_graph(t, f, p, w, tr.yfut_f),
                            nbm::marginal_energy_graph(t, f, p, w, y_samp));
        acc = t.add(acc, gap);
    }
    return t.mul_scalar(acc, 1.0 / static_cast<double>(triplets.size()));
}

struct BatchLosses {
    LossTerms values;
    ad::Var total;
};

// Builds every positively weighted term on one tape and returns the weighted
// sum; rng drives the negative-phase sampling.
BatchLosses compute_losses(ad::Tape& t, Model& model, const TrainBatch& batch,
                           const LossWeights& w, int gibbs_k, Rng& rng) {
    BatchLosses out;
    out.total = t.constant_scalar(0.0);
    auto take = [&](double weight, ad::Var term, double& slot) {
        slot = t.value(term).item();
        out.total = t.add(out.total, t.mul_scalar(term, weight));
    };
    if (w.imputer > 0.0) take(w.imputer, loss_imputer(t, model, batch.visits), out.values.imputer);
    if (w.rbm > 0.0)
        take(w.rbm, loss_rbm(t, model, batch.triplets, gibbs_k, rng), out.values.rbm);
    if (w.mse > 0.0)
        take(w.mse, loss_featurewise_mse(t, model, batch.triplets), out.values.mse);
    if (w.consistency > 0.0)
        take(w.consistency, loss_consistency(t, model, batch.triplets), out.values.consistency);
    if (w.event > 0.0) take(w.event, loss_event(t, model, batch.events), out.values.event);
    out.values.total = t.value(out.total).item();
    return out;
}

bool finite(const LossTerms& v) {
    return std::isfinite(v.imputer) && std::isfinite(v.rbm) && std::isfinite(v.mse) &&
           std::isfinite(v.consistency) && std::isfinite(v.event) && std::isfinite(v.total);
}

std::string diverged_message(const LossTerms& v, std::size_t epoch, std::size_t batch_index,
                             const std::vector<std::string>& ids) {
    std::ostringstream os;
    os << "training diverged: non-finite loss at epoch " << epoch << ", batch " << batch_index
       << " (imputer=" << v.imputer << ", rbm=" << v.rbm << ", mse=" << v.mse
       << ", consistency=" << v.consistency << ", event=" << v.event << "); patients:";
    std::size_t shown = std::min<std::size_t>(ids.size(), 8);
    for (std::size_t i = 0; i < shown; ++i) os << ' ' << ids[i];
    if (ids.size() > shown) os << " (+" << ids.size() - shown << " more)";
    return os.str();
}

// Forward-only fit score used for model selection: imputer reconstruction,
// plain squared error of the conditional-mean predictor, and event likelihood.
// The weighted training objective cannot serve here: its sampling-gap term is a
// gradient estimator, not a fit measure, and the learned precisions rescale the
// trajectory term as calibration sharpens.
double fit_metric(Model& model, const std::vector<PatientRecord>& recs,
                  const std::vector<std::vector<std::size_t>>& spans) {
    double imputer = 0.0, predictor = 0.0, event = 0.0;
    std::size_t n_visits = 0, n_triplets = 0, n_events = 0;
    for (const auto& slice : spans) {
        TrainBatch batch = make_batch(model, recs, slice);
        ad::Tape t;
        if (!batch.visits.empty()) {
            imputer += t.value(loss_imputer(t, model, batch.visits)).item() *
                       static_cast<double>(batch.visits.size());
            n_visits += batch.visits.size();
        }
        for (const TripletExample& tr : batch.triplets) {
            ad::Var f = model.mean.predict(t, t.constant(tr.y0_f), t.constant(tr.c0_f),
                                           t.constant(tr.ycur_f), tr.t_cur, tr.t_fut);
            const Tensor& fv = t.value(f);
            for (std::size_t j = 0; j < tr.yfut.numel(); ++j) {
                if (!tr.fut_mask[j]) continue;
                double d = fv[j] - tr.yfut[j];
                predictor += d * d;
            }
        }
        n_triplets += batch.triplets.size();
        if (!batch.events.empty()) {
            event += t.value(loss_event(t, model, batch.events)).item() *
                     static_cast<double>(batch.events.size());
            n_events += batch.events.size();
        }
    }
    double score = 0.0;
    if (n_visits > 0) score += imputer / static_cast<double>(n_visits);
    if (n_triplets > 0) {
        score += predictor / static_cast<double>(n_triplets * model.cfg.n);
    }
    if (n_events > 0) score += event / static_cast<double>(n_events);
    return score;
}

}  // namespace

void LossWeights::validate() const {
    auto bad = [](double v) { return !(v >= 0.0) || !std::isfinite(v); };
    if (bad(imputer) || bad(rbm) || bad(mse) || bad(consistency) || bad(event)) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (imputer + rbm + mse + consistency + event <= 0.0) {
        throw ConfigError("at least one loss weight must be positive");
    }
    if (bad(weight_decay)) throw ConfigError("weight decay must be non-negative");
    for (const auto& [name, d] : decay_overrides) {
        if (bad(d)) throw ConfigError("weight decay override for '" + name + "' must be non-negative");
    }
}

double LossWeights::decay_for(const std::string& param_name) const {
    std::string head = param_name.substr(0, param_name.find('.'));
    auto it = decay_overrides.find(head);
    if (it != decay_overrides.end()) return it->second;
    if (head.rfind("tte", 0) == 0) {
        it = decay_overrides.find("tte");
        if (it != decay_overrides.end()) return it->second;
    }
    return weight_decay;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (gibbs_k < 1) throw ConfigError("gibbs steps must be at least 1");
    if (fold >= 0) {
        if (n_folds < 2) throw ConfigError("fold training needs at least 2 folds");
        if (fold >= n_folds) throw ConfigError("fold id out of range");
    }
}

TrainBatch make_batch(Model& model, const std::vector<PatientRecord>& records,
                      const std::vector<std::size_t>& idx) {
    TrainBatch b;
    double raw_sum = 0.0;
    for (std::size_t ri : idx) {
        if (ri >= records.size()) throw DataError("batch index out of range");
        const PatientRecord& rec = records[ri];
        b.patient_ids.push_back(rec.id);

        std::vector<Tensor> yf(rec.visits.size()), cf(rec.visits.size());
        for (std::size_t v = 0; v < rec.visits.size(); ++v) {
            model.fill_visit(rec.visits[v].values, rec.visits[v].mask, rec.context,
                             rec.context_mask, yf[v], cf[v]);
        }

        double raw_w = 1.0 / static_cast<double>(rec.visits.size());
        for (std::size_t v = 0; v < rec.visits.size(); ++v) {
            ImputerExample ex;
            ex.x = hconcat(rec.visits[v].values, rec.context);
            ex.mask = rec.visits[v].mask;
            ex.mask.insert(ex.mask.end(), rec.context_mask.begin(), rec.context_mask.end());
            ex.weight = raw_w;
            raw_sum += raw_w;
            b.visits.push_back(std::move(ex));
        }

        for (const Triplet& tr : build_triplets(rec)) {
            TripletExample e;
            e.y0_f = yf[0];
            e.c0_f = cf[0];
            e.ycur_f = yf[tr.cur_idx];
            e.ccur_f = cf[tr.cur_idx];
            e.yfut = tr.fut().values;
            e.yfut_f = yf[tr.fut_idx];
            e.fut_mask = tr.fut().mask;
            e.t_cur = tr.t_cur();
            e.t_fut = tr.t_fut();
            b.triplets.push_back(std::move(e));
        }

        for (std::size_t k = 0; k < rec.tte.size(); ++k) {
            if (!rec.tte[k].has_value()) continue;
            const TTERecord& r = *rec.tte[k];
            if (r.time <= 0.0) {
                if (r.event) {
                    throw DataError("event at time zero for patient '" + rec.id +
                                    "': log event time undefined");
                }
                continue;  // censored before any exposure carries no information
            }
            EventExample ev;
            ev.x0_f = hconcat(yf[0], cf[0]);
            ev.log_time = std::log(r.time);
            ev.event = r.event;
            ev.outcome = k;
            b.events.push_back(std::move(ev));
        }
    }

    if (raw_sum > 0.0) {
        double factor = static_cast<double>(b.visits.size()) / raw_sum;
        for (auto& ex : b.visits) ex.weight *= factor;
    }
    return b;
}

ad::Var loss_imputer(ad::Tape& t, Model& model, const std::vector<ImputerExample>& visits) {
    if (visits.empty()) return t.constant_scalar(0.0);
    ad::Var acc = t.constant_scalar(0.0);
    std::size_t dim = visits.front().x.numel();
    for (const ImputerExample& v : visits) {
        ad::Var x = t.constant(v.x);
        ad::Var diff = t.sub(model.imputer.reconstruct(t, x), x);
        ad::Var masked = t.mul(t.constant(mask_tensor(v.mask)), t.mul(diff, diff));
        acc = t.add(acc, t.mul_scalar(t.sum(masked), v.weight));
    }
    return t.mul_scalar(acc, 1.0 / (static_cast<double>(visits.size()) * static_cast<double>(dim)));
}

ad::Var loss_rbm(ad::Tape& t, Model& model, const std::vector<TripletExample>& triplets, int k,
                 Rng& rng) {
    if (k < 1) throw ConfigError("gibbs steps must be at least 1");
    return loss_rbm_impl(t, model, triplets,
                         [&](std::size_t, const nbm::EnergyContext& ctx) {
                             return nbm::gibbs_sample(ctx, k, rng);
                         });
}

ad::Var loss_rbm_with_samples(ad::Tape& t, Model& model,
                              const std::vector<TripletExample>& triplets,
                              const std::vector<Tensor>& samples) {
    if (samples.size() != triplets.size()) {
        throw ShapeError("one negative-phase sample per triplet required");
    }
    return loss_rbm_impl(t, model, triplets,
                         [&](std::size_t i, const nbm::EnergyContext&) { return samples[i]; });
}

ad::Var loss_featurewise_mse(ad::Tape& t, Model& model,
                             const std::vector<TripletExample>& triplets) {
    if (triplets.empty()) return t.constant_scalar(0.0);
    ad::Var acc = t.constant_scalar(0.0);
    for (const TripletExample& tr : triplets) {
        ad::Var g = model.mean.flow(t, t.constant(tr.y0_f), t.constant(tr.c0_f), tr.t_fut);

        // precision of the baseline-horizon prediction, held constant
        ad::Tape scratch;
        ad::Var p = model.pnet(scratch, scratch.constant(hconcat(tr.y0_f, tr.c0_f)), tr.t_fut);
        Tensor weight = scratch.value(p);
        for (std::size_t j = 0; j < weight.numel(); ++j) {
            if (!tr.fut_mask[j]) weight[j] = 0.0;
        }

        ad::Var diff = t.sub(g, t.constant(tr.yfut));
        acc = t.add(acc, t.sum(t.mul(t.constant(weight), t.mul(diff, diff))));
    }
    return t.mul_scalar(acc, 1.0 / static_cast<double>(triplets.size()));
}

ad::Var loss_consistency(ad::Tape& t, Model& model,
                         const std::vector<TripletExample>& triplets) {
    if (triplets.empty()) return t.constant_scalar(0.0);
    ad::Var acc = t.constant_scalar(0.0);
    for (const TripletExample& tr : triplets) {
        ad::Var y0 = t.constant(tr.y0_f);
        ad::Var c0 = t.constant(tr.c0_f);
        ad::Var direct = model.mean.flow(t, y0, c0, tr.t_fut);
        ad::Var star = model.mean.predict_star(t, y0, c0, tr.t_cur, tr.t_fut);
        ad::Var d = t.sub(direct, star);
        acc = t.add(acc, t.sum(t.mul(d, d)));
    }
    return t.mul_scalar(acc, 1.0 / static_cast<double>(triplets.size()));
}

ad::Var loss_event(ad::Tape& t, Model& model, const std::vector<EventExample>& events) {
    if (events.empty()) return t.constant_scalar(0.0);
    ad::Var acc = t.constant_scalar(0.0);
    for (const EventExample& ev : events) {
        if (ev.outcome >= model.tte.size()) throw DataError("event outcome index out of range");
        TTEHead& head = model.tte[ev.outcome];
        ad::Var a = head.log_scale(t, t.constant(ev.x0_f));
        ad::Var z = t.div(t.sub(t.constant_scalar(ev.log_time), a), head.sigma(t));
        ad::Var term = ev.event ? t.add(t.sub(t.leaf(head.sigma_hat), z), t.exp(z))
                                : t.exp(z);
        acc = t.add(acc, term);
    }
    return t.mul_scalar(acc, 1.0 / static_cast<double>(events.size()));
}

AdamW::AdamW(std::vector<ad::Param*> params, double lr) : params_(std::move(params)), lr_(lr) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ad::Param* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void AdamW::step(const std::function<double(const ad::Param&)>& decay) {
    ++t_;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ad::Param& p = *params_[i];
        double d = decay(p);
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            double g = p.grad[j];
            double& m = m_[i][j];
            double& v = v_[i][j];
            m = kBeta1 * m + (1.0 - kBeta1) * g;
            v = kBeta2 * v + (1.0 - kBeta2) * g * g;
            double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
            double old = p.value[j];
            p.value[j] = old - update - lr_ * d * old;
        }
    }
}

TrainResult train(const Schema& schema, const std::vector<PatientRecord>& train_records,
                  const std::vector<PatientRecord>& val_records, const NetConfig& net_cfg,
                  const TrainConfig& train_cfg, const LossWeights& weights) {
    schema.validate();
    net_cfg.validate();
    train_cfg.validate();
    weights.validate();
    if (train_records.empty()) throw DataError("training requires at least one patient");
    if (net_cfg.n != schema.n_long() || net_cfg.c != schema.n_ctx()) {
        throw ConfigError("network dimensions do not match the schema");
    }

    TrainResult out;
    out.normalizer = Normalizer::fit(schema, train_records);
    std::vector<PatientRecord> tr = out.normalizer.apply(train_records);
    std::vector<PatientRecord> va = out.normalizer.apply(val_records);
    out.model = Model::init(net_cfg, schema.tte_outcomes.size(), train_cfg.seed);

    std::vector<ad::Param*> params = out.model.params();
    AdamW opt(params, train_cfg.lr);
    auto decay = [&](const ad::Param& p) {
        return Model::is_gate(p) ? 0.0 : weights.decay_for(p.name);
    };

    std::vector<Tensor> best;
    auto snapshot = [&] {
        best.clear();
        for (const ad::Param* p : params) best.push_back(p->value);
    };
    snapshot();
    out.best_val = std::numeric_limits<double>::infinity();

    auto batch_spans = [&](std::size_t n, const std::vector<std::size_t>& order) {
        std::vector<std::vector<std::size_t>> spans;
        for (std::size_t s = 0; s < n; s += train_cfg.batch_size) {
            std::size_t e = std::min(n, s + train_cfg.batch_size);
            spans.emplace_back(order.begin() + s, order.begin() + e);
        }
        return spans;
    };

    const std::vector<PatientRecord>& eval_set = va.empty() ? tr : va;
    std::vector<std::size_t> eval_order(eval_set.size());
    std::iota(eval_order.begin(), eval_order.end(), std::size_t{0});
    const auto eval_spans = batch_spans(eval_set.size(), eval_order);

    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        // anneal linearly to a tenth of the initial rate to settle the tail
        if (train_cfg.epochs > 1) {
            double frac = static_cast<double>(epoch) / static_cast<double>(train_cfg.epochs - 1);
            opt.set_lr(train_cfg.lr * (1.0 - 0.9 * frac));
        }
        std::vector<std::size_t> order(tr.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(train_cfg.seed, kShuffleLabel, epoch);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }

        LossTerms epoch_terms;
        std::size_t batch_index = 0;
        for (const auto& slice : batch_spans(tr.size(), order)) {
            TrainBatch batch = make_batch(out.model, tr, slice);
            for (ad::Param* p : params) p->zero_grad();

            ad::Tape t;
            Rng cd(train_cfg.seed, kCdLabel, epoch, batch_index);
            BatchLosses losses = compute_losses(t, out.model, batch, weights,
                                                train_cfg.gibbs_k, cd);
            if (!finite(losses.values)) {
                throw NumericError(
                    diverged_message(losses.values, epoch, batch_index, batch.patient_ids));
            }
            t.backward(losses.total);
            opt.step(decay);

            double w = static_cast<double>(slice.size()) / static_cast<double>(tr.size());
            epoch_terms.imputer += w * losses.values.imputer;
            epoch_terms.rbm += w * losses.values.rbm;
            epoch_terms.mse += w * losses.values.mse;
            epoch_terms.consistency += w * losses.values.consistency;
            epoch_terms.event += w * losses.values.event;
            epoch_terms.total += w * losses.values.total;
            ++batch_index;
        }

        double val_total = fit_metric(out.model, eval_set, eval_spans);
        if (!std::isfinite(val_total)) {
            std::ostringstream os;
            os << "training diverged: non-finite fit score at epoch " << epoch;
            throw NumericError(os.str());
        }

        if (val_total < out.best_val) {
            out.best_val = val_total;
            out.best_epoch = epoch;
            snapshot();
        }
        out.curve.push_back({epoch, epoch_terms, val_total});
    }

    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    if (train_cfg.epochs == 0) out.best_val = 0.0;
    return out;
}

}  // namespace dtg
