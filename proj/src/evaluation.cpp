#include "dtg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "dtg/errors.hpp"

namespace dtg::eval {
namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double pop_var(const std::vector<double>& v, double mu) {
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size());
}

double pop_cov(const std::vector<double>& a, const std::vector<double>& b, double ma, double mb) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / static_cast<double>(a.size());
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// Chosen visit per (record, horizon): a visit binds to its nearest horizon
// when within half a bin width; the visit closest to the horizon wins the
// bin, earlier visit on ties. -1 marks an empty bin.
std::vector<std::vector<std::ptrdiff_t>> assign_bins(const std::vector<PatientRecord>& records,
                                                     const std::vector<double>& times,
                                                     double width) {
    std::vector<std::vector<std::ptrdiff_t>> pick(records.size(),
                                                  std::vector<std::ptrdiff_t>(times.size(), -1));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const PatientRecord& rec = records[i];
        for (std::size_t v = 0; v < rec.visits.size(); ++v) {
            double t = rec.visits[v].t;
            std::size_t best = 0;
            for (std::size_t b = 1; b < times.size(); ++b) {
                if (std::abs(t - times[b]) < std::abs(t - times[best])) best = b;
            }
            if (std::abs(t - times[best]) > width / 2.0) continue;
            std::ptrdiff_t& cur = pick[i][best];
            if (cur < 0 || std::abs(t - times[best]) <
                               std::abs(rec.visits[static_cast<std::size_t>(cur)].t - times[best])) {
                cur = static_cast<std::ptrdiff_t>(v);
            }
        }
    }
    return pick;
}

// Per-patient twin summary at one horizon row and variable, after shifting
// every draw by -base (the change-from-baseline convention when active).
void summarize_draws(const nbm::SampleSet& s, std::size_t bin, std::size_t j, double base,
                     double& mean, double& var) {
    std::vector<double> xs;
    xs.reserve(s.paths.size());
    for (const Tensor& p : s.paths) xs.push_back(p.at(bin, j) - base);
    mean = mean_of(xs);
    var = pop_var(xs, mean);
}

double draw_cov(const nbm::SampleSet& s, std::size_t bin, std::size_t ja, std::size_t jb,
                double base_a, double base_b) {
    std::vector<double> a, b;
    a.reserve(s.paths.size());
    b.reserve(s.paths.size());
    for (const Tensor& p : s.paths) {
        a.push_back(p.at(bin, ja) - base_a);
        b.push_back(p.at(bin, jb) - base_b);
    }
    return pop_cov(a, b, mean_of(a), mean_of(b));
}

std::optional<double> obs_std_of(const std::vector<double>& v) {
    if (v.size() < 2) return std::nullopt;
    return std::sqrt(pop_var(v, mean_of(v)));
}

// Nearest entry of `times` to t, required to match within a hair; the report
// only has rows at the generated horizons.
std::optional<std::size_t> horizon_index(const std::vector<double>& times, double t) {
    for (std::size_t b = 0; b < times.size(); ++b) {
        if (std::abs(times[b] - t) <= 1e-9) return b;
    }
    return std::nullopt;
}

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(12) << x;
    return os.str();
}

nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

double normal_pdf(double x, double mu, double sd) {
    double z = (x - mu) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::acos(-1.0)));
}

}  // namespace

// ---- metric kernels -------------------------------------------------------

std::optional<double> mu_pred(const std::vector<double>& means) {
    if (means.empty()) return std::nullopt;
    return mean_of(means);
}

std::optional<double> sigma_pred(const std::vector<double>& means, const std::vector<double>& vars) {
    if (means.size() != vars.size()) throw ShapeError("sigma_pred: means/vars length mismatch");
    if (means.size() < 2) return std::nullopt;
    return std::sqrt(pop_var(means, mean_of(means)) + mean_of(vars));
}

std::optional<double> rho_pred(const std::vector<double>& means_a, const std::vector<double>& means_b,
                               const std::vector<double>& vars_a, const std::vector<double>& vars_b,
                               const std::vector<double>& covs_ab) {
    const std::size_t n = means_a.size();
    if (means_b.size() != n || vars_a.size() != n || vars_b.size() != n || covs_ab.size() != n) {
        throw ShapeError("rho_pred: input length mismatch");
    }
    if (n < 2) return std::nullopt;
    // Single square root keeps the self-correlation and the dyadic
    // hand-arithmetic cases exact.
    const double va = pop_var(means_a, mean_of(means_a)) + mean_of(vars_a);
    const double vb = pop_var(means_b, mean_of(means_b)) + mean_of(vars_b);
    const double denom = std::sqrt(va * vb);
    if (!(denom > 0.0)) return std::nullopt;
    double cov = pop_cov(means_a, means_b, mean_of(means_a), mean_of(means_b)) + mean_of(covs_ab);
    return cov / denom;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: input length mismatch");
    if (x.size() < 3) return std::nullopt;
    double mx = mean_of(x), my = mean_of(y);
    double vx = pop_var(x, mx), vy = pop_var(y, my);
    if (!(vx > 0.0) || !(vy > 0.0)) return std::nullopt;
    return pop_cov(x, y, mx, my) / std::sqrt(vx * vy);
}

std::optional<double> auc_binary(const std::vector<std::uint8_t>& labels,
                                 const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw ShapeError("auc: input length mismatch");
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

std::optional<double> concordance_index(const std::vector<double>& scores,
                                        const std::vector<double>& times,
                                        const std::vector<std::uint8_t>& events, double horizon) {
    const std::size_t n = scores.size();
    if (times.size() != n || events.size() != n) throw ShapeError("c-index: input length mismatch");
    if (!(horizon > 0.0)) throw ConfigError("c-index horizon must be positive");
    std::vector<double> t(n);
    std::vector<std::uint8_t> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = std::min(times[i], horizon);
        e[i] = (events[i] && times[i] <= horizon) ? 1 : 0;
    }
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!e[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (t[j] <= t[i]) continue;  // comparable: i fails strictly first
            ++pairs;
            if (scores[j] > scores[i]) wins += 1.0;
            else if (scores[j] == scores[i]) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

// ---- cohort generation ----------------------------------------------------

void GenConfig::validate() const {
    if (times.empty()) throw ConfigError("generation needs at least one horizon");
    double prev = 0.0;
    for (double t : times) {
        if (!(t > prev) || !std::isfinite(t)) {
            throw ConfigError("generation horizons must be finite, positive, strictly increasing");
        }
        prev = t;
    }
    if (n_samples < 1) throw ConfigError("generation needs at least one sample");
    if (gibbs_k < 1) throw ConfigError("generation needs at least one sampling sweep");
}

CohortSamples generate_cohort(Model& model, const Normalizer& norm, const Schema& schema,
                              const std::vector<PatientRecord>& records, const GenConfig& gen,
                              const std::string& model_id) {
    gen.validate();
    const std::size_t n = schema.n_long(), c = schema.n_ctx();
    if (model.cfg.n != n || model.cfg.c != c) {
        throw ConfigError("model dimensions do not match the schema");
    }
    CohortSamples out;
    out.model_id = model_id;
    out.seed = gen.seed;
    out.mode = gen.mode;
    out.times = gen.times;
    out.ids.reserve(records.size());
    out.sets.reserve(records.size());
    Rng root(gen.seed, 0x7713ull);
    for (const PatientRecord& rec : records) {
        if (rec.visits.empty()) throw DataError("record without a baseline visit: " + rec.id);
        Tensor y0({n});
        for (std::size_t j = 0; j < n; ++j) {
            if (rec.baseline().observed(j)) y0[j] = norm.apply_long(j, rec.baseline().values[j]);
        }
        Tensor cx({c});
        for (std::size_t j = 0; j < c; ++j) {
            if (rec.context_mask[j]) cx[j] = norm.apply_ctx(j, rec.context[j]);
        }
        Rng pr = root.stream(fnv1a(rec.id));
        nbm::SampleSet s = nbm::generate_trajectory(model, y0, rec.baseline().mask, cx,
                                                    rec.context_mask, gen.times, gen.n_samples,
                                                    gen.gibbs_k, pr, gen.mode);
        for (Tensor& path : s.paths) {
            for (std::size_t b = 0; b < gen.times.size(); ++b) {
                for (std::size_t j = 0; j < n; ++j) {
                    path.at(b, j) = norm.invert_long(j, path.at(b, j));
                }
            }
        }
        out.ids.push_back(rec.id);
        out.sets.push_back(std::move(s));
    }
    return out;
}

// ---- report ---------------------------------------------------------------

EvalReport evaluate(const Schema& schema, const std::vector<PatientRecord>& records,
                    const CohortSamples& samples, const EvalConfig& cfg) {
    if (!(cfg.bin_width > 0.0)) throw ConfigError("bin width must be positive");
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < samples.ids.size(); ++i) {
        if (!by_id.emplace(samples.ids[i], i).second) {
            throw DataError("duplicate twin set for patient " + samples.ids[i]);
        }
    }
    std::vector<const nbm::SampleSet*> set_of(records.size(), nullptr);
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = by_id.find(records[i].id);
        if (it == by_id.end()) throw DataError("no twin set for patient " + records[i].id);
        set_of[i] = &samples.sets[it->second];
    }
    const std::vector<double>& times = samples.times;
    const auto pick = assign_bins(records, times, cfg.bin_width);

    EvalReport rep;
    const std::size_t n = schema.n_long();
    for (std::size_t j = 0; j < n; ++j) {
        const VarDef& vd = schema.longitudinal[j];
        const bool binary = vd.kind == VarKind::kBinary;
        const bool change = cfg.change_from_baseline && !binary;
        for (std::size_t b = 0; b < times.size(); ++b) {
            CellRow row;
            row.variable = vd.name;
            row.time = times[b];
            std::vector<double> obs, tmean, tvar;
            std::vector<std::uint8_t> labels;
            for (std::size_t i = 0; i < records.size(); ++i) {
                const std::ptrdiff_t vi = pick[i][b];
                if (vi < 0) continue;
                const PatientRecord& rec = records[i];
                const Visit& v = rec.visits[static_cast<std::size_t>(vi)];
                if (!v.observed(j)) continue;
                if (change && !rec.baseline().observed(j)) continue;
                const double base = change ? rec.baseline().values[j] : 0.0;
                obs.push_back(v.values[j] - base);
                double m = 0.0, var = 0.0;
                summarize_draws(*set_of[i], b, j, base, m, var);
                tmean.push_back(m);
                tvar.push_back(var);
                if (binary) labels.push_back(v.values[j] != 0.0 ? 1 : 0);
            }
            row.n = obs.size();
            row.obs_mean = mu_pred(obs);
            row.obs_std = obs_std_of(obs);
            row.pred_mean = mu_pred(tmean);
            row.pred_std = sigma_pred(tmean, tvar);
            if (binary) row.auc = auc_binary(labels, tmean);
            else row.pearson_r = pearson(obs, tmean);
            rep.cells.push_back(std::move(row));
        }
    }

    for (std::size_t ja = 0; ja < n; ++ja) {
        for (std::size_t jb = ja + 1; jb < n; ++jb) {
            const bool change_a = cfg.change_from_baseline && schema.longitudinal[ja].kind == VarKind::kContinuous;
            const bool change_b = cfg.change_from_baseline && schema.longitudinal[jb].kind == VarKind::kContinuous;
            for (std::size_t b = 0; b < times.size(); ++b) {
                RhoRow row;
                row.var_a = schema.longitudinal[ja].name;
                row.var_b = schema.longitudinal[jb].name;
                row.time = times[b];
                std::vector<double> oa, ob, ma, mb, va, vb, cab;
                for (std::size_t i = 0; i < records.size(); ++i) {
                    const std::ptrdiff_t vi = pick[i][b];
                    if (vi < 0) continue;
                    const PatientRecord& rec = records[i];
                    const Visit& v = rec.visits[static_cast<std::size_t>(vi)];
                    if (!v.observed(ja) || !v.observed(jb)) continue;
                    if (change_a && !rec.baseline().observed(ja)) continue;
                    if (change_b && !rec.baseline().observed(jb)) continue;
                    const double base_a = change_a ? rec.baseline().values[ja] : 0.0;
                    const double base_b = change_b ? rec.baseline().values[jb] : 0.0;
                    oa.push_back(v.values[ja] - base_a);
                    ob.push_back(v.values[jb] - base_b);
                    double m = 0.0, var = 0.0;
                    summarize_draws(*set_of[i], b, ja, base_a, m, var);
                    ma.push_back(m);
                    va.push_back(var);
                    summarize_draws(*set_of[i], b, jb, base_b, m, var);
                    mb.push_back(m);
                    vb.push_back(var);
                    cab.push_back(draw_cov(*set_of[i], b, ja, jb, base_a, base_b));
                }
                row.n = oa.size();
                row.obs_rho = pearson(oa, ob);
                row.pred_rho = rho_pred(ma, mb, va, vb, cab);
                rep.correlations.push_back(std::move(row));
            }
        }
    }
    return rep;
}

std::vector<std::vector<double>> survival_scores(Model& model, const Normalizer& norm,
                                                 const Schema& schema,
                                                 const std::vector<PatientRecord>& records) {
    const std::size_t n = schema.n_long(), c = schema.n_ctx();
    if (model.cfg.n != n || model.cfg.c != c) {
        throw ConfigError("model dimensions do not match the schema");
    }
    if (model.tte.size() != schema.tte_outcomes.size()) {
        throw ConfigError("model outcome heads do not match the schema");
    }
    std::vector<std::vector<double>> out(model.tte.size());
    for (auto& v : out) v.reserve(records.size());
    for (const PatientRecord& rec : records) {
        if (rec.visits.empty()) throw DataError("record without a baseline visit: " + rec.id);
        Tensor y0({n}), cx({c});
        for (std::size_t j = 0; j < n; ++j) {
            if (rec.baseline().observed(j)) y0[j] = norm.apply_long(j, rec.baseline().values[j]);
        }
        for (std::size_t j = 0; j < c; ++j) {
            if (rec.context_mask[j]) cx[j] = norm.apply_ctx(j, rec.context[j]);
        }
        Tensor yf, cf;
        model.fill_visit(y0, rec.baseline().mask, cx, rec.context_mask, yf, cf);
        Tensor x({n + c});
        for (std::size_t j = 0; j < n; ++j) x[j] = yf[j];
        for (std::size_t j = 0; j < c; ++j) x[n + j] = cf[j];
        for (std::size_t o = 0; o < model.tte.size(); ++o) {
            out[o].push_back(model.tte[o].median_time(x));
        }
    }
    return out;
}

void append_concordance(EvalReport& report, Model& model, const Normalizer& norm,
                        const Schema& schema, const std::vector<PatientRecord>& records,
                        const std::vector<double>& horizons) {
    const auto scores = survival_scores(model, norm, schema, records);
    for (std::size_t o = 0; o < schema.tte_outcomes.size(); ++o) {
        std::vector<double> sc, tm;
        std::vector<std::uint8_t> ev;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& rec = records[i].tte;
            if (o >= rec.size() || !rec[o]) continue;
            sc.push_back(scores[o][i]);
            tm.push_back(rec[o]->time);
            ev.push_back(rec[o]->event ? 1 : 0);
        }
        for (double h : horizons) {
            CindexRow row;
            row.outcome = schema.tte_outcomes[o];
            row.horizon = h;
            row.n = sc.size();
            row.cindex = concordance_index(sc, tm, ev, h);
            report.concordance.push_back(std::move(row));
        }
    }
}

// ---- diagnostics ----------------------------------------------------------

std::optional<SensitivityResult> input_sensitivity(Model& model, const Normalizer& norm,
                                                   const Schema& schema,
                                                   const std::vector<PatientRecord>& records,
                                                   const std::string& feature,
                                                   const std::string& outcome, double time,
                                                   const GenConfig& gen, const EvalConfig& cfg) {
    const auto oj = schema.long_index(outcome);
    if (oj < 0 || schema.longitudinal[static_cast<std::size_t>(oj)].kind != VarKind::kContinuous) {
        return std::nullopt;
    }
    const auto fl = schema.long_index(feature);
    const auto fc = schema.ctx_index(feature);
    if (fl < 0 && fc < 0) return std::nullopt;
    if (!horizon_index(gen.times, time)) return std::nullopt;

    auto pearson_at = [&](const CohortSamples& cs) -> std::optional<double> {
        EvalReport rep = evaluate(schema, records, cs, cfg);
        for (const CellRow& row : rep.cells) {
            if (row.variable == outcome && std::abs(row.time - time) <= 1e-9) return row.pearson_r;
        }
        return std::nullopt;
    };

    CohortSamples base = generate_cohort(model, norm, schema, records, gen, "full-input");
    auto r0 = pearson_at(base);

    std::vector<PatientRecord> masked = records;
    for (PatientRecord& rec : masked) {
        if (fl >= 0) {
            if (rec.visits.empty()) continue;
            rec.visits[0].mask[static_cast<std::size_t>(fl)] = 0;
            rec.visits[0].values[static_cast<std::size_t>(fl)] = 0.0;
        } else {
            rec.context_mask[static_cast<std::size_t>(fc)] = 0;
            rec.context[static_cast<std::size_t>(fc)] = 0.0;
        }
    }
    CohortSamples hidden = generate_cohort(model, norm, schema, masked, gen, "masked-input");
    auto r1 = pearson_at(hidden);
    if (!r0 || !r1) return std::nullopt;
    return SensitivityResult{*r0, *r1, *r0 - *r1};
}

std::optional<QuartileDensity> quartile_difference_density(
    const Schema& schema, const std::vector<PatientRecord>& records, const CohortSamples& samples,
    const std::string& stratify_var, const std::string& outcome_var, double time,
    const EvalConfig& cfg) {
    const auto oj = schema.long_index(outcome_var);
    if (oj < 0) return std::nullopt;
    const std::size_t j = static_cast<std::size_t>(oj);
    const auto bt = horizon_index(samples.times, time);
    if (!bt) return std::nullopt;

    const auto sl = schema.long_index(stratify_var);
    const auto sc = schema.ctx_index(stratify_var);
    if (sl < 0 && sc < 0) return std::nullopt;

    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < samples.ids.size(); ++i) by_id.emplace(samples.ids[i], i);
    const auto pick = assign_bins(records, samples.times, cfg.bin_width);

    const bool change =
        cfg.change_from_baseline && schema.longitudinal[j].kind == VarKind::kContinuous;

    struct Member {
        double strat;
        std::string id;
        double obs;
        const nbm::SampleSet* set;
        double base;
    };
    std::vector<Member> elig;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const PatientRecord& rec = records[i];
        if (rec.visits.empty()) continue;
        double strat = 0.0;
        if (sl >= 0) {
            if (!rec.baseline().observed(static_cast<std::size_t>(sl))) continue;
            strat = rec.baseline().values[static_cast<std::size_t>(sl)];
        } else {
            if (!rec.context_mask[static_cast<std::size_t>(sc)]) continue;
            strat = rec.context[static_cast<std::size_t>(sc)];
        }
        const std::ptrdiff_t vi = pick[i][*bt];
        if (vi < 0) continue;
        const Visit& v = rec.visits[static_cast<std::size_t>(vi)];
        if (!v.observed(j)) continue;
        if (change && !rec.baseline().observed(j)) continue;
        auto it = by_id.find(rec.id);
        if (it == by_id.end()) continue;
        const double base = change ? rec.baseline().values[j] : 0.0;
        elig.push_back({strat, rec.id, v.values[j] - base, &samples.sets[it->second], base});
    }
    if (elig.size() < 8) return std::nullopt;
    std::sort(elig.begin(), elig.end(), [](const Member& a, const Member& b) {
        if (a.strat != b.strat) return a.strat < b.strat;
        return a.id < b.id;
    });
    const std::size_t q = elig.size() / 4;

    auto summarize = [&](std::size_t lo, std::size_t hi, GaussianSummary& data,
                         GaussianSummary& twin) {
        std::vector<double> d, t;
        for (std::size_t i = lo; i < hi; ++i) {
            d.push_back(elig[i].obs);
            for (const Tensor& p : elig[i].set->paths) t.push_back(p.at(*bt, j) - elig[i].base);
        }
        data = {d.size(), mean_of(d), std::sqrt(pop_var(d, mean_of(d)))};
        twin = {t.size(), mean_of(t), std::sqrt(pop_var(t, mean_of(t)))};
    };

    QuartileDensity out;
    out.stratify_var = stratify_var;
    out.outcome_var = outcome_var;
    out.time = time;
    summarize(0, q, out.data_bottom, out.twin_bottom);
    summarize(elig.size() - q, elig.size(), out.data_top, out.twin_top);
    for (const GaussianSummary* g :
         {&out.data_bottom, &out.data_top, &out.twin_bottom, &out.twin_top}) {
        if (!(g->std_dev > 0.0)) return std::nullopt;  // degenerate density
    }

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const GaussianSummary* g :
         {&out.data_bottom, &out.data_top, &out.twin_bottom, &out.twin_top}) {
        lo = std::min(lo, g->mean - 4.0 * g->std_dev);
        hi = std::max(hi, g->mean + 4.0 * g->std_dev);
    }
    const std::size_t pts = 101;
    out.grid.resize(pts);
    out.data_diff.resize(pts);
    out.twin_diff.resize(pts);
    for (std::size_t i = 0; i < pts; ++i) {
        double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(pts - 1);
        out.grid[i] = x;
        out.data_diff[i] = normal_pdf(x, out.data_top.mean, out.data_top.std_dev) -
                           normal_pdf(x, out.data_bottom.mean, out.data_bottom.std_dev);
        out.twin_diff[i] = normal_pdf(x, out.twin_top.mean, out.twin_top.std_dev) -
                           normal_pdf(x, out.twin_bottom.mean, out.twin_bottom.std_dev);
    }
    return out;
}

// ---- cross-validation -----------------------------------------------------

CrossValResult cross_validate(const Schema& schema, const std::vector<PatientRecord>& records,
                              const NetConfig& net_cfg, const TrainConfig& train_cfg,
                              const LossWeights& weights, const GenConfig& gen,
                              const EvalConfig& cfg) {
    const int k = train_cfg.n_folds;
    if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (records.size() < static_cast<std::size_t>(k)) {
        throw DataError("cross-validation has more folds than patients");
    }
    CrossValResult out;
    out.fold_of = split_folds(records.size(), k, train_cfg.seed);
    out.fold_train_ids.resize(static_cast<std::size_t>(k));
    out.merged.model_id = "cross-validation";
    out.merged.seed = gen.seed;
    out.merged.mode = gen.mode;
    out.merged.times = gen.times;
    out.merged.ids.resize(records.size());
    out.merged.sets.resize(records.size());

    std::vector<std::vector<double>> med(schema.tte_outcomes.size(),
                                         std::vector<double>(records.size(), 0.0));
    for (int f = 0; f < k; ++f) {
        std::vector<PatientRecord> train_recs, held_recs;
        std::vector<std::size_t> held_idx;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (out.fold_of[i] == f) {
                held_recs.push_back(records[i]);
                held_idx.push_back(i);
            } else {
                train_recs.push_back(records[i]);
                out.fold_train_ids[static_cast<std::size_t>(f)].push_back(records[i].id);
            }
        }
        if (train_recs.empty()) throw DataError("fold with no training records");
        TrainConfig tc = train_cfg;
        tc.fold = -1;  // the split happens here, not inside train()
        TrainResult res = train(schema, train_recs, {}, net_cfg, tc, weights);
        out.fold_best_val.push_back(res.best_val);
        if (held_recs.empty()) continue;
        CohortSamples cs = generate_cohort(res.model, res.normalizer, schema, held_recs, gen,
                                           "fold-" + std::to_string(f));
        const auto sc = survival_scores(res.model, res.normalizer, schema, held_recs);
        for (std::size_t h = 0; h < held_idx.size(); ++h) {
            out.merged.ids[held_idx[h]] = std::move(cs.ids[h]);
            out.merged.sets[held_idx[h]] = std::move(cs.sets[h]);
            for (std::size_t o = 0; o < med.size(); ++o) med[o][held_idx[h]] = sc[o][h];
        }
    }
    out.report = evaluate(schema, records, out.merged, cfg);
    for (std::size_t o = 0; o < schema.tte_outcomes.size(); ++o) {
        std::vector<double> sc, tm;
        std::vector<std::uint8_t> ev;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& rec = records[i].tte;
            if (o >= rec.size() || !rec[o]) continue;
            sc.push_back(med[o][i]);
            tm.push_back(rec[o]->time);
            ev.push_back(rec[o]->event ? 1 : 0);
        }
        for (double h : gen.times) {
            CindexRow row;
            row.outcome = schema.tte_outcomes[o];
            row.horizon = h;
            row.n = sc.size();
            row.cindex = concordance_index(sc, tm, ev, h);
            out.report.concordance.push_back(std::move(row));
        }
    }
    return out;
}

// ---- serialization --------------------------------------------------------

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "variable,time,cohort,n,obs_mean,obs_std,pred_mean,pred_std,pearson_r,auc\n";
    auto put = [&os](const std::optional<double>& v) {
        os << ',';
        if (v) os << fmt(*v);
    };
    for (const CellRow& r : cells) {
        os << r.variable << ',' << fmt(r.time) << ',' << r.cohort << ',' << r.n;
        put(r.obs_mean);
        put(r.obs_std);
        put(r.pred_mean);
        put(r.pred_std);
        put(r.pearson_r);
        put(r.auc);
        os << '\n';
    }
    return os.str();
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const CellRow& r : cells) {
        j["cells"].push_back({{"variable", r.variable},
                              {"time", r.time},
                              {"cohort", r.cohort},
                              {"n", r.n},
                              {"obs_mean", opt_json(r.obs_mean)},
                              {"obs_std", opt_json(r.obs_std)},
                              {"pred_mean", opt_json(r.pred_mean)},
                              {"pred_std", opt_json(r.pred_std)},
                              {"pearson_r", opt_json(r.pearson_r)},
                              {"auc", opt_json(r.auc)}});
    }
    j["correlations"] = nlohmann::json::array();
    for (const RhoRow& r : correlations) {
        j["correlations"].push_back({{"var_a", r.var_a},
                                     {"var_b", r.var_b},
                                     {"time", r.time},
                                     {"cohort", r.cohort},
                                     {"n", r.n},
                                     {"obs_rho", opt_json(r.obs_rho)},
                                     {"pred_rho", opt_json(r.pred_rho)}});
    }
    j["concordance"] = nlohmann::json::array();
    for (const CindexRow& r : concordance) {
        j["concordance"].push_back({{"outcome", r.outcome},
                                    {"horizon", r.horizon},
                                    {"n", r.n},
                                    {"cindex", opt_json(r.cindex)}});
    }
    return j.dump(2);
}

}  // namespace dtg::eval
