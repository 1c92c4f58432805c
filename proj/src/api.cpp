#include "dtg/dtg.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dtg/datamodel.hpp"
#include "dtg/errors.hpp"
#include "dtg/evaluation.hpp"
#include "dtg/gradcheck.hpp"
#include "dtg/io.hpp"
#include "dtg/synth.hpp"
#include "dtg/training.hpp"

struct dtg_session {
    std::map<std::string, std::string> options;
    std::string last_error;
};

namespace {

using namespace dtg;

std::uint64_t parse_u64(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        std::uint64_t v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + " must be a non-negative integer, got: " + s);
    }
}

int parse_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + " must be an integer, got: " + s);
    }
}

std::vector<double> parse_times(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string field;
    while (std::getline(is, field, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(field, &used));
            if (used != field.size()) throw std::invalid_argument(field);
        } catch (const std::exception&) {
            throw ConfigError("times must be comma-separated numbers, got: " + s);
        }
    }
    if (out.empty()) throw ConfigError("times must list at least one horizon");
    return out;
}

void check_threads(const std::string& s, const char* what) {
    if (parse_int(s, what) < 1) {
        throw ConfigError(std::string(what) + " must be at least 1, got: " + s);
    }
    // every code path is serial, so any positive cap is honored as-is
}

io::RunConfig resolve(const dtg_session& s, bool config_required) {
    io::RunConfig cfg;
    auto it = s.options.find("config");
    if (it != s.options.end()) cfg = io::load_run_config(it->second);
    else if (config_required) throw ConfigError("this command needs --config");

    if ((it = s.options.find("seed")) != s.options.end()) {
        cfg.seed = parse_u64(it->second, "seed");
    }
    if ((it = s.options.find("out")) != s.options.end()) cfg.out_dir = it->second;
    if ((it = s.options.find("model")) != s.options.end()) cfg.model_path = it->second;
    if ((it = s.options.find("times")) != s.options.end()) cfg.times = parse_times(it->second);
    if ((it = s.options.find("samples")) != s.options.end()) {
        cfg.samples = parse_u64(it->second, "samples");
    }
    if ((it = s.options.find("fold")) != s.options.end()) {
        cfg.train.fold = parse_int(it->second, "fold");
    }
    if ((it = s.options.find("threads")) != s.options.end()) {
        check_threads(it->second, "threads");
    } else if (const char* env = std::getenv("DTG_THREADS")) {
        check_threads(env, "DTG_THREADS");
    }
    cfg.train.seed = cfg.seed;
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

std::filesystem::path prepare_out(const io::RunConfig& cfg) {
    std::filesystem::path dir(cfg.out_dir.empty() ? "." : cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string());
    write_text(dir / "config_echo.json", io::run_config_json(cfg) + "\n");
    return dir;
}

DatasetPaths data_paths(const io::RunConfig& cfg) {
    if (cfg.data_long.empty()) throw ConfigError("config needs a \"longitudinal\" data path");
    return {cfg.data_long, cfg.data_ctx, cfg.data_tte};
}

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void cmd_synth(io::RunConfig cfg) {
    if (cfg.synth_patients == 0) {
        throw ConfigError("synth needs \"synth_patients\" > 0 in the config");
    }
    synth::OUSpec spec = cfg.ou;
    const std::size_t n = spec.n_dims, c = spec.n_ctx;
    if (spec.theta.empty()) spec.theta.assign(n, 1.0);
    if (spec.sigma.empty()) spec.sigma.assign(n, std::sqrt(2.0));
    if (spec.mean0.empty()) spec.mean0.assign(n, 0.0);
    if (spec.mean_ctx.numel() == 0) {
        spec.mean_ctx = Tensor({n, c});
        for (std::size_t i = 0; i < n && i < c; ++i) spec.mean_ctx.at(i, i) = 1.0;
    }
    if (spec.corr.numel() == 0) {
        spec.corr = Tensor({n, n});
        for (std::size_t i = 0; i < n; ++i) spec.corr.at(i, i) = 1.0;
    }
    if (spec.schedules.empty()) spec.schedules = {{0.0, 1.0, 2.0, 4.0, 8.0}};

    std::vector<synth::TTESpec> ttes;
    if (cfg.has_tte) {
        if (cfg.tte.ctx_weights.empty()) cfg.tte.ctx_weights.assign(c, 0.0);
        ttes.push_back(cfg.tte);
    }
    Schema schema = synth::default_schema(n, c, ttes.size());

    std::vector<PatientRecord> truth;
    std::vector<PatientRecord> records =
        synth::gen_cohort(spec, ttes, cfg.synth_patients, cfg.seed, &truth);

    auto dir = prepare_out(cfg);
    io::save_schema((dir / "schema.json").string(), schema);
    auto paths = [&](const char* prefix) {
        DatasetPaths p;
        p.longitudinal = (dir / (std::string(prefix) + "longitudinal.csv")).string();
        if (c > 0) p.context = (dir / (std::string(prefix) + "context.csv")).string();
        if (!ttes.empty()) p.tte = (dir / (std::string(prefix) + "tte.csv")).string();
        return p;
    };
    write_dataset(paths(""), schema, records);
    write_dataset(paths("truth_"), schema, truth);
    std::printf("synth: wrote %zu patients to %s\n", records.size(), dir.string().c_str());
}

void cmd_train(const io::RunConfig& cfg) {
    if (cfg.schema_path.empty()) throw ConfigError("train needs a \"schema\" path");
    Schema schema = io::load_schema(cfg.schema_path);
    std::vector<PatientRecord> records = load_dataset(data_paths(cfg), schema);

    NetConfig net = cfg.net;
    net.n = schema.n_long();
    net.c = schema.n_ctx();

    TrainConfig tc = cfg.train;
    std::vector<PatientRecord> train_recs, val_recs;
    if (tc.fold >= 0) {
        tc.validate();
        const auto folds = split_folds(records.size(), tc.n_folds, cfg.seed);
        for (std::size_t i = 0; i < records.size(); ++i) {
            (folds[i] == tc.fold ? val_recs : train_recs).push_back(records[i]);
        }
    } else {
        train_recs = records;
    }

    TrainResult res = train(schema, train_recs, val_recs, net, tc, cfg.weights);
    auto dir = prepare_out(cfg);
    io::save_checkpoint((dir / "model.dtg").string(), schema, res.model, res.normalizer);
    io::save_curve((dir / "training_curve.csv").string(), res.curve);
    std::printf("train: best epoch %zu, fit score %s, model at %s\n", res.best_epoch,
                g17(res.best_val).c_str(), (dir / "model.dtg").string().c_str());
}

io::Checkpoint load_model(const io::RunConfig& cfg) {
    if (cfg.model_path.empty()) throw ConfigError("this command needs --model");
    return io::load_checkpoint(cfg.model_path);
}

eval::GenConfig gen_config(const io::RunConfig& cfg) {
    eval::GenConfig gen;
    gen.times = cfg.times;
    gen.n_samples = cfg.samples;
    gen.gibbs_k = cfg.train.gibbs_k;
    gen.seed = cfg.seed;
    gen.mode = cfg.from_baseline_mode ? nbm::GenMode::kFromBaseline : nbm::GenMode::kRollout;
    return gen;
}

void cmd_generate(const io::RunConfig& cfg) {
    io::Checkpoint ck = load_model(cfg);
    std::vector<PatientRecord> records = load_dataset(data_paths(cfg), ck.schema);
    eval::CohortSamples cs = eval::generate_cohort(ck.model, ck.normalizer, ck.schema, records,
                                                   gen_config(cfg), cfg.model_path);
    auto dir = prepare_out(cfg);
    io::save_samples((dir / "samples.csv").string(), ck.schema, cs);
    std::printf("generate: %zu patients x %zu draws at %zu horizons -> %s\n", cs.ids.size(),
                cfg.samples, cfg.times.size(), (dir / "samples.csv").string().c_str());
}

void cmd_evaluate(const io::RunConfig& cfg) {
    io::Checkpoint ck = load_model(cfg);
    std::vector<PatientRecord> records = load_dataset(data_paths(cfg), ck.schema);
    eval::CohortSamples cs = eval::generate_cohort(ck.model, ck.normalizer, ck.schema, records,
                                                   gen_config(cfg), cfg.model_path);
    eval::EvalConfig ec;
    ec.bin_width = cfg.bin_width;
    ec.change_from_baseline = cfg.change_from_baseline;
    eval::EvalReport rep = eval::evaluate(ck.schema, records, cs, ec);
    eval::append_concordance(rep, ck.model, ck.normalizer, ck.schema, records, cfg.times);
    auto dir = prepare_out(cfg);
    write_text(dir / "report.csv", rep.to_csv());
    write_text(dir / "report.json", rep.to_json() + "\n");
    std::printf("evaluate: %zu cells -> %s\n", rep.cells.size(),
                (dir / "report.csv").string().c_str());
}

void cmd_twin_record(const io::RunConfig& cfg) {
    io::Checkpoint ck = load_model(cfg);
    std::vector<PatientRecord> records = load_dataset(data_paths(cfg), ck.schema);
    eval::CohortSamples cs = eval::generate_cohort(ck.model, ck.normalizer, ck.schema, records,
                                                   gen_config(cfg), cfg.model_path);
    std::ostringstream os;
    os << "patient,variable";
    for (double t : cfg.times) os << ",t=" << g17(t);
    os << '\n';
    char cell[96];
    for (std::size_t i = 0; i < cs.ids.size(); ++i) {
        const nbm::SampleSet& s = cs.sets[i];
        for (std::size_t j = 0; j < ck.schema.n_long(); ++j) {
            os << cs.ids[i] << ',' << ck.schema.longitudinal[j].name;
            for (std::size_t b = 0; b < s.times.size(); ++b) {
                double m = 0.0;
                for (const Tensor& p : s.paths) m += p.at(b, j);
                m /= static_cast<double>(s.paths.size());
                double v = 0.0;
                for (const Tensor& p : s.paths) v += (p.at(b, j) - m) * (p.at(b, j) - m);
                v /= static_cast<double>(s.paths.size());
                std::snprintf(cell, sizeof cell, ",%.6g±%.6g", m, std::sqrt(v));
                os << cell;
            }
            os << '\n';
        }
    }
    auto dir = prepare_out(cfg);
    write_text(dir / "twin_records.csv", os.str());
    std::printf("twin-record: %zu patients -> %s\n", cs.ids.size(),
                (dir / "twin_records.csv").string().c_str());
}

bool cmd_gradcheck(const io::RunConfig& cfg, std::string& failures) {
    const auto rows = gradcheck_suite(cfg.seed);
    std::ostringstream csv;
    csv << "check,max_rel_err,pass\n";
    bool all_pass = true;
    for (const GradCheckRow& r : rows) {
        std::printf("%-32s %12.4e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        csv << r.name << ',' << g17(r.max_rel_err) << ',' << (r.pass ? "1" : "0") << '\n';
        if (!r.pass) {
            all_pass = false;
            failures += (failures.empty() ? "" : ", ") + r.name;
        }
    }
    auto dir = prepare_out(cfg);
    write_text(dir / "gradcheck.csv", csv.str());
    return all_pass;
}

}  // namespace

extern "C" {

dtg_session* dtg_open(void) { return new (std::nothrow) dtg_session; }

void dtg_close(dtg_session* s) { delete s; }

const char* dtg_last_error(const dtg_session* s) { return s ? s->last_error.c_str() : ""; }

dtg_status dtg_set_option(dtg_session* s, const char* key, const char* value) {
    if (!s) return DTG_ERR_CONFIG;
    if (!key || !value) {
        s->last_error = "option key and value must be non-null";
        return DTG_ERR_CONFIG;
    }
    static const char* known[] = {"config", "seed", "out",  "model",
                                  "times",  "samples", "fold", "threads"};
    for (const char* k : known) {
        if (std::string(key) == k) {
            s->options[key] = value;
            s->last_error.clear();
            return DTG_OK;
        }
    }
    s->last_error = std::string("unknown option: ") + key;
    return DTG_ERR_CONFIG;
}

dtg_status dtg_run(dtg_session* s, const char* command) {
    if (!s) return DTG_ERR_CONFIG;
    s->last_error.clear();
    const std::string cmd = command ? command : "";
    try {
        io::RunConfig cfg = resolve(*s, cmd != "gradcheck");
        if (cmd == "synth") cmd_synth(cfg);
        else if (cmd == "train") cmd_train(cfg);
        else if (cmd == "generate") cmd_generate(cfg);
        else if (cmd == "evaluate") cmd_evaluate(cfg);
        else if (cmd == "twin-record") cmd_twin_record(cfg);
        else if (cmd == "gradcheck") {
            std::string failures;
            if (!cmd_gradcheck(cfg, failures)) {
                s->last_error = "gradient checks failed: " + failures;
                return DTG_ERR_GRADCHECK;
            }
        } else {
            throw ConfigError("unknown command: " + cmd);
        }
        return DTG_OK;
    } catch (const ConfigError& e) {
        s->last_error = e.what();
        return DTG_ERR_CONFIG;
    } catch (const DataError& e) {
        s->last_error = e.what();
        return DTG_ERR_DATA;
    } catch (const NumericError& e) {
        s->last_error = e.what();
        return DTG_ERR_NUMERIC;
    } catch (const std::exception& e) {
        s->last_error = e.what();
        return DTG_ERR_NUMERIC;
    }
}

}  // extern "C"
