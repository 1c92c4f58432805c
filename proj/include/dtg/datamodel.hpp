#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtg/tensor.hpp"

namespace dtg {

enum class VarKind : std::uint8_t { kContinuous, kBinary };

struct VarDef {
    std::string name;
    VarKind kind = VarKind::kContinuous;
};

// Dataset layout: which longitudinal variables exist (dimension N), which
// baseline context variables, and which time-to-event outcomes.
struct Schema {
    std::vector<VarDef> longitudinal;
    std::vector<VarDef> context;
    std::vector<std::string> tte_outcomes;
    std::string time_unit = "months";

    std::size_t n_long() const { return longitudinal.size(); }
    std::size_t n_ctx() const { return context.size(); }

    // -1 when absent.
    int long_index(const std::string& name) const;
    int ctx_index(const std::string& name) const;
    int outcome_index(const std::string& name) const;

    // Unique names across all groups; at least one longitudinal variable.
    void validate() const;
};

// One observation row. Masked-out slots hold 0.0 and must never be read as
// data; the mask alone decides observedness.
struct Visit {
    double t = 0.0;
    Tensor values;
    std::vector<std::uint8_t> mask;

    bool observed(std::size_t j) const { return mask[j] != 0; }
};

struct TTERecord {
    double time = 0.0;  // months; 0 allowed for immediate censoring
    bool event = false;
};

struct PatientRecord {
    std::string id;
    Tensor context;
    std::vector<std::uint8_t> context_mask;
    std::vector<Visit> visits;  // strictly increasing t, visits[0].t == 0
    std::vector<std::optional<TTERecord>> tte;  // parallel to schema.tte_outcomes

    const Visit& baseline() const { return visits.front(); }
};

// A causal (current -> future) training pair within one patient, viewed in
// place. y0 is always the baseline visit of the same record.
struct Triplet {
    const PatientRecord* rec = nullptr;
    std::size_t cur_idx = 0;
    std::size_t fut_idx = 0;

    const Visit& y0() const { return rec->visits.front(); }
    const Visit& cur() const { return rec->visits[cur_idx]; }
    const Visit& fut() const { return rec->visits[fut_idx]; }
    double t_cur() const { return cur().t; }
    double t_fut() const { return fut().t; }
};

struct DatasetPaths {
    std::string longitudinal;  // required
    std::string context;       // "" when the schema has no context vars
    std::string tte;           // "" when the schema has no tte outcomes
};

// CSV ingestion per the documented formats. Unknown columns, duplicate
// (patient, time) rows, decreasing times, negative times, missing baseline
// rows and non-{0,1} binary values all raise DataError.
std::vector<PatientRecord> load_dataset(const DatasetPaths& paths, const Schema& schema);

void write_dataset(const DatasetPaths& paths, const Schema& schema,
                   const std::vector<PatientRecord>& records);

// All ordered visit pairs (i < j) of one record; C(#visits, 2) entries.
std::vector<Triplet> build_triplets(const PatientRecord& rec);

// Triplets for a whole cohort, record order preserved.
std::vector<Triplet> build_triplets(const std::vector<PatientRecord>& records);

// Per-variable affine transform into model space: continuous vars are
// z-scored (population convention, observed entries only), binary vars map
// {0,1} -> {-1,+1}. Inversion is exact.
struct Normalizer {
    std::vector<double> long_mean, long_scale;
    std::vector<double> ctx_mean, ctx_scale;
    std::vector<std::uint8_t> long_binary, ctx_binary;
    std::vector<std::string> clamped;  // vars whose std was 0 and got clamped to 1

    static Normalizer fit(const Schema& schema, const std::vector<PatientRecord>& train);

    double apply_long(std::size_t j, double v) const;
    double invert_long(std::size_t j, double v) const;
    double apply_ctx(std::size_t j, double v) const;
    double invert_ctx(std::size_t j, double v) const;

    // Transformed copy of the records (masks untouched, masked slots stay 0).
    std::vector<PatientRecord> apply(const std::vector<PatientRecord>& records) const;
};

// Deterministic partition of patients into k folds whose sizes differ by at
// most one; returns the fold id of each record index.
std::vector<int> split_folds(std::size_t n_patients, int k, std::uint64_t seed);

}  // namespace dtg
