#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dtg/datamodel.hpp"
#include "dtg/nbm.hpp"
#include "dtg/networks.hpp"

namespace dtg {

struct LossWeights {
    double imputer = 1.0;
    double rbm = 1.0;
    double mse = 1.0;
    double consistency = 1.0;
    double event = 1.0;

    double weight_decay = 0.1;                      // applied per sub-network
    std::map<std::string, double> decay_overrides;  // keyed by sub-network name

    // At least one loss weight positive; weights and decays non-negative.
    void validate() const;

    // Decay for a parameter, looked up by its sub-network ("mean.flow1.weight"
    // -> "mean"; any "tteK" falls back to a "tte" entry). Gate parameters are
    // excluded from decay by the optimizer, not here.
    double decay_for(const std::string& param_name) const;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    int gibbs_k = 16;
    std::uint64_t seed = 0;
    int fold = -1;  // held-out validation fold; -1 trains on everything
    int n_folds = 5;

    void validate() const;
};

// One zero-filled visit for the reconstruction loss. The weight makes the
// per-patient contribution uniform and is normalized to sum to the visit
// count across the batch.
struct ImputerExample {
    Tensor x;  // [n + c], zero-filled
    std::vector<std::uint8_t> mask;
    double weight = 1.0;
};

// One causal (baseline, current, future) step with inference-mode fills.
struct TripletExample {
    Tensor y0_f, c0_f;      // imputed baseline
    Tensor ycur_f, ccur_f;  // imputed current visit
    Tensor yfut;            // raw future visit, zero-filled
    Tensor yfut_f;          // imputed future visit
    std::vector<std::uint8_t> fut_mask;
    double t_cur = 0.0, t_fut = 0.0;
};

struct EventExample {
    Tensor x0_f;  // imputed [y(0), c]
    double log_time = 0.0;
    bool event = false;
    std::size_t outcome = 0;
};

struct TrainBatch {
    std::vector<ImputerExample> visits;
    std::vector<TripletExample> triplets;
    std::vector<EventExample> events;
    std::vector<std::string> patient_ids;
};

// Assemble a batch from normalized records. Fills run in inference mode, so
// the resulting tensors enter the losses as constants. Event records with
// time 0 are dropped when censored (no information) and rejected when they
// carry an event (log-time undefined).
TrainBatch make_batch(Model& model, const std::vector<PatientRecord>& records,
                      const std::vector<std::size_t>& idx);

// Each loss appends to the caller's tape and returns a scalar; empty inputs
// yield a constant zero. Only the sub-network named by the loss receives
// gradients from it.
ad::Var loss_imputer(ad::Tape& t, Model& model, const std::vector<ImputerExample>& visits);

// Energy gap E[U(data)] - E[U(sample)] per triplet, samples drawn by k-step
// block Gibbs without gradient tracking; the sampler's draws re-enter the
// energy as constants.
ad::Var loss_rbm(ad::Tape& t, Model& model, const std::vector<TripletExample>& triplets, int k,
                 Rng& rng);

// Same loss with caller-supplied negative-phase samples (one per triplet);
// deterministic, which makes it finite-difference checkable.
ad::Var loss_rbm_with_samples(ad::Tape& t, Model& model,
                              const std::vector<TripletExample>& triplets,
                              const std::vector<Tensor>& samples);

// Observed-dim squared error of the baseline flow prediction, weighted by the
// precision net's output held constant.
ad::Var loss_featurewise_mse(ad::Tape& t, Model& model,
                             const std::vector<TripletExample>& triplets);

// Squared gap between the direct flow prediction and its two-stage
// composition through the current visit.
ad::Var loss_consistency(ad::Tape& t, Model& model,
                         const std::vector<TripletExample>& triplets);

// Negative log-likelihood of log event times: density term for events,
// survival term for right-censored records.
ad::Var loss_event(ad::Tape& t, Model& model, const std::vector<EventExample>& events);

struct LossTerms {
    double imputer = 0.0, rbm = 0.0, mse = 0.0, consistency = 0.0, event = 0.0;
    double total = 0.0;  // weighted sum
};

// Decoupled-decay Adam: moments see raw gradients only, decay multiplies the
// parameter directly (p -= lr * decay * p).
class AdamW {
  public:
    AdamW(std::vector<ad::Param*> params, double lr);

    void set_lr(double lr) { lr_ = lr; }
    void step(const std::function<double(const ad::Param&)>& decay);

  private:
    std::vector<ad::Param*> params_;
    std::vector<Tensor> m_, v_;
    double lr_;
    std::size_t t_ = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    LossTerms train;
    double val_total = 0.0;  // fit score used for model selection
};

struct TrainResult {
    Model model;            // parameters of the best-scoring epoch
    Normalizer normalizer;  // fitted on the training records
    std::vector<EpochStats> curve;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
};

// Full training loop: fit the normalizer, initialize the model, iterate
// epochs of shuffled patient minibatches, and track per-term telemetry. The
// learning rate anneals linearly from lr to lr/10 across the run.
// Model selection minimizes a forward-only fit score (imputer reconstruction,
// squared error of the conditional-mean predictor, event likelihood) computed
// on val_records after each epoch, or on the training records when none are
// given; curve rows report it as val_total. The weighted objective is not used
// for selection because its sampling-gap term measures distribution match, not
// fit, and the learned precisions rescale the trajectory term. Non-finite
// losses abort with a diagnostic naming the offending batch. Single-threaded
// and bit-deterministic for a fixed seed.
TrainResult train(const Schema& schema, const std::vector<PatientRecord>& train_records,
                  const std::vector<PatientRecord>& val_records, const NetConfig& net_cfg,
                  const TrainConfig& train_cfg, const LossWeights& weights);

}  // namespace dtg
