#pragma once
// On-disk formats: schema JSON, model checkpoints (one-line JSON header plus
// a little-endian 64-bit parameter blob), twin sample files, training-curve
// tables, and the flat JSON run configuration shared by the command surface.

#include <cstdint>
#include <string>
#include <vector>

#include "dtg/datamodel.hpp"
#include "dtg/evaluation.hpp"
#include "dtg/networks.hpp"
#include "dtg/synth.hpp"
#include "dtg/training.hpp"

namespace dtg::io {

// Schema file: {"time_unit": ..., "longitudinal": [{"name","kind"}...],
// "context": [...], "tte_outcomes": [...]}; kind is "continuous" or "binary".
Schema load_schema(const std::string& path);
void save_schema(const std::string& path, const Schema& schema);

// Checkpoint: header line with format version, schema, net config, outcome
// count and normalizer; then every parameter tensor in declaration order as
// little-endian doubles. Loading rebuilds the model and restores the exact
// bytes, so generation after a round trip is bit-identical.
struct Checkpoint {
    Schema schema;
    NetConfig net;
    Model model;
    Normalizer normalizer;
};
void save_checkpoint(const std::string& path, const Schema& schema, Model& model,
                     const Normalizer& norm);
Checkpoint load_checkpoint(const std::string& path);

// Twin samples: two comment lines with provenance (model id, seed, mode),
// then one CSV row per (patient, draw, horizon) with raw-unit values. The
// writer is deterministic byte for byte.
void save_samples(const std::string& path, const Schema& schema,
                  const eval::CohortSamples& samples);
eval::CohortSamples load_samples(const std::string& path);

void save_curve(const std::string& path, const std::vector<EpochStats>& curve);

// Flat JSON run configuration. Unknown keys and type mismatches raise
// ConfigError; "seed" is mandatory.
struct RunConfig {
    std::string schema_path;
    std::string data_long, data_ctx, data_tte;
    std::string model_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;

    NetConfig net;  // n and c come from the schema at use time
    TrainConfig train;
    LossWeights weights;

    std::vector<double> times = {1.0, 2.0, 4.0, 8.0};
    std::size_t samples = 64;
    double bin_width = 3.0;
    bool change_from_baseline = true;
    bool from_baseline_mode = false;  // generate every horizon from t=0

    // synthetic-cohort knobs (synth command)
    std::size_t synth_patients = 0;
    synth::OUSpec ou;
    bool has_tte = false;
    synth::TTESpec tte;
};
RunConfig load_run_config(const std::string& path);
// Fully resolved config, written beside every command's outputs.
std::string run_config_json(const RunConfig& cfg);

}  // namespace dtg::io
