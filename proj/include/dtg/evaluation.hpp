#pragma once
// Twin-vs-data evaluation: cohort generation in raw units, moment metrics
// over per-patient sample summaries, correlation/AUC/concordance kernels, a
// variable-by-horizon report table, feature-sensitivity and quartile-density
// diagnostics, and patient-level cross-validation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtg/datamodel.hpp"
#include "dtg/nbm.hpp"
#include "dtg/networks.hpp"
#include "dtg/training.hpp"

namespace dtg::eval {

// ---- metric kernels -------------------------------------------------------
// Moments use the population convention (divide by n). Every kernel is
// invariant to a joint permutation of its inputs and returns nullopt instead
// of dividing by zero.

// Mean over patients of the per-patient twin means. Empty -> absent.
std::optional<double> mu_pred(const std::vector<double>& means);

// Marginal twin std: between-patient variance of the means plus the average
// within-patient variance, square-rooted. Fewer than two patients -> absent.
std::optional<double> sigma_pred(const std::vector<double>& means, const std::vector<double>& vars);

// Marginal twin correlation between two variables: (between-patient
// covariance of the means + average within-patient covariance) over the
// product of the matching sigma_pred values. Zero denominator -> absent.
std::optional<double> rho_pred(const std::vector<double>& means_a, const std::vector<double>& means_b,
                               const std::vector<double>& vars_a, const std::vector<double>& vars_b,
                               const std::vector<double>& covs_ab);

// Pearson correlation; needs at least three pairs and spread on both sides.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

// Probability that a positive outranks a negative, ties counted half.
// Needs both classes present.
std::optional<double> auc_binary(const std::vector<std::uint8_t>& labels,
                                 const std::vector<double>& scores);

// Harrell's concordance of a survival score (higher = predicted to last
// longer) against right-censored times. Events past the horizon are treated
// as censored at the horizon. Score ties count half; no comparable pair ->
// absent.
std::optional<double> concordance_index(const std::vector<double>& scores,
                                        const std::vector<double>& times,
                                        const std::vector<std::uint8_t>& events, double horizon);

// ---- cohort generation ----------------------------------------------------

struct GenConfig {
    std::vector<double> times;  // months, strictly increasing, all positive
    std::size_t n_samples = 64;
    int gibbs_k = 16;
    nbm::GenMode mode = nbm::GenMode::kRollout;
    std::uint64_t seed = 0;

    void validate() const;
};

// Twin draws for a whole cohort, in raw data units.
struct CohortSamples {
    std::string model_id;  // provenance tag copied into artifacts
    std::uint64_t seed = 0;
    nbm::GenMode mode = nbm::GenMode::kRollout;
    std::vector<double> times;
    std::vector<std::string> ids;      // record ids, parallel to sets
    std::vector<nbm::SampleSet> sets;  // raw units
};

// Draws twins for each raw record from its baseline visit and context.
// Conditioning inputs pass through `norm`; outputs are mapped back to raw
// units. Each patient draws from an rng stream keyed by (seed, record id),
// so a patient's twins do not depend on cohort order or batching.
CohortSamples generate_cohort(Model& model, const Normalizer& norm, const Schema& schema,
                              const std::vector<PatientRecord>& records, const GenConfig& gen,
                              const std::string& model_id = {});

// ---- report ---------------------------------------------------------------

struct EvalConfig {
    // A visit matches a requested horizon when it is the visit nearest that
    // horizon for its patient and lies within half a bin width of it.
    double bin_width = 3.0;  // months
    // Compare continuous longitudinal variables as deltas from the observed
    // baseline; patients with an unobserved baseline sit out that variable.
    bool change_from_baseline = true;
};

struct CellRow {
    std::string variable;
    double time = 0.0;
    std::string cohort = "all";
    std::size_t n = 0;  // patients contributing
    std::optional<double> obs_mean, obs_std;
    std::optional<double> pred_mean, pred_std;
    std::optional<double> pearson_r;  // continuous variables
    std::optional<double> auc;        // binary variables
};

struct RhoRow {
    std::string var_a, var_b;
    double time = 0.0;
    std::string cohort = "all";
    std::size_t n = 0;
    std::optional<double> obs_rho;   // across patients, observed values
    std::optional<double> pred_rho;  // rho_pred over the twin draws
};

struct CindexRow {
    std::string outcome;
    double horizon = 0.0;
    std::size_t n = 0;  // patients with a recorded outcome
    std::optional<double> cindex;
};

struct EvalReport {
    std::vector<CellRow> cells;
    std::vector<RhoRow> correlations;
    std::vector<CindexRow> concordance;

    std::string to_csv() const;   // cells: one row per variable x time x cohort
    std::string to_json() const;  // everything
};

// Builds the per-variable, per-horizon table plus pairwise twin correlations.
// Observations and twins enter a cell only for patients observed there (and
// at baseline, under the change convention); binary variables report AUC of
// the mean twin value against the observed class instead of Pearson.
EvalReport evaluate(const Schema& schema, const std::vector<PatientRecord>& records,
                    const CohortSamples& samples, const EvalConfig& cfg);

// Survival scores (median event time) for every record, one vector per
// outcome, from the model's event head over the imputed baseline.
std::vector<std::vector<double>> survival_scores(Model& model, const Normalizer& norm,
                                                 const Schema& schema,
                                                 const std::vector<PatientRecord>& records);

// Appends one concordance row per outcome x horizon using survival_scores.
void append_concordance(EvalReport& report, Model& model, const Normalizer& norm,
                        const Schema& schema, const std::vector<PatientRecord>& records,
                        const std::vector<double>& horizons);

// ---- diagnostics ----------------------------------------------------------

struct SensitivityResult {
    double base_r = 0.0;    // observed-vs-twin Pearson with full inputs
    double masked_r = 0.0;  // same with the feature hidden from the model
    double delta = 0.0;     // base_r - masked_r; positive = feature helps
};

// Regenerates twins with `feature` (a context variable or a longitudinal
// variable's baseline value) masked from the conditioning inputs and reports
// the drop in the Pearson of `outcome` at `time`. Observed data, including
// baselines used by the change convention, is untouched. Absent when either
// Pearson is undefined or names are unknown.
std::optional<SensitivityResult> input_sensitivity(Model& model, const Normalizer& norm,
                                                   const Schema& schema,
                                                   const std::vector<PatientRecord>& records,
                                                   const std::string& feature,
                                                   const std::string& outcome, double time,
                                                   const GenConfig& gen, const EvalConfig& cfg);

struct GaussianSummary {
    std::size_t n = 0;  // patients (data) or pooled draws (twins)
    double mean = 0.0;
    double std_dev = 0.0;
};

struct QuartileDensity {
    std::string stratify_var, outcome_var;
    double time = 0.0;
    GaussianSummary data_bottom, data_top, twin_bottom, twin_top;
    std::vector<double> grid;       // shared abscissa
    std::vector<double> data_diff;  // Normal(top) - Normal(bottom), data
    std::vector<double> twin_diff;  // same from the twin summaries
};

// Splits patients into bottom and top quartiles of the observed baseline
// value of `stratify_var` (longitudinal baseline or context), summarizes
// `outcome_var` at `time` as Gaussians for data and twins, and tabulates the
// top-minus-bottom density difference on a fixed grid. Fewer than eight
// stratifiable patients -> absent.
std::optional<QuartileDensity> quartile_difference_density(
    const Schema& schema, const std::vector<PatientRecord>& records, const CohortSamples& samples,
    const std::string& stratify_var, const std::string& outcome_var, double time,
    const EvalConfig& cfg);

// ---- cross-validation -----------------------------------------------------

struct CrossValResult {
    CohortSamples merged;  // per patient, twins from the fold model that never saw them
    std::vector<int> fold_of;                               // per record
    std::vector<std::vector<std::string>> fold_train_ids;   // audit: ids each fold trained on
    std::vector<double> fold_best_val;                      // selection score per fold
    EvalReport report;     // evaluate() over the merged held-out twins
};

// Trains one model per fold on the records outside it, generates twins for
// the held-out patients with that model and its own normalizer, and scores
// the merged cohort, so no patient is ever scored by a model that trained on
// them. Deterministic for fixed seeds; fold assignment comes from
// split_folds(records.size(), train_cfg.n_folds, train_cfg.seed).
CrossValResult cross_validate(const Schema& schema, const std::vector<PatientRecord>& records,
                              const NetConfig& net_cfg, const TrainConfig& train_cfg,
                              const LossWeights& weights, const GenConfig& gen,
                              const EvalConfig& cfg);

}  // namespace dtg::eval
