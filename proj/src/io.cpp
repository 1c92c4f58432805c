#include "dtg/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "dtg/errors.hpp"

namespace dtg::io {
namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json schema_to_json(const Schema& s) {
    auto vars = [](const std::vector<VarDef>& vs) {
        json a = json::array();
        for (const VarDef& v : vs) {
            a.push_back({{"name", v.name},
                         {"kind", v.kind == VarKind::kBinary ? "binary" : "continuous"}});
        }
        return a;
    };
    return {{"time_unit", s.time_unit},
            {"longitudinal", vars(s.longitudinal)},
            {"context", vars(s.context)},
            {"tte_outcomes", s.tte_outcomes}};
}

Schema schema_from_json(const json& j) {
    Schema s;
    auto vars = [](const json& a) {
        std::vector<VarDef> out;
        for (const json& v : a) {
            VarDef d;
            d.name = v.at("name").get<std::string>();
            std::string kind = v.at("kind").get<std::string>();
            if (kind == "continuous") d.kind = VarKind::kContinuous;
            else if (kind == "binary") d.kind = VarKind::kBinary;
            else throw ConfigError("unknown variable kind: " + kind);
            out.push_back(std::move(d));
        }
        return out;
    };
    if (j.contains("time_unit")) s.time_unit = j.at("time_unit").get<std::string>();
    s.longitudinal = vars(j.at("longitudinal"));
    if (j.contains("context")) s.context = vars(j.at("context"));
    if (j.contains("tte_outcomes")) {
        s.tte_outcomes = j.at("tte_outcomes").get<std::vector<std::string>>();
    }
    s.validate();
    return s;
}

json normalizer_to_json(const Normalizer& n) {
    return {{"long_mean", n.long_mean},     {"long_scale", n.long_scale},
            {"ctx_mean", n.ctx_mean},       {"ctx_scale", n.ctx_scale},
            {"long_binary", n.long_binary}, {"ctx_binary", n.ctx_binary},
            {"clamped", n.clamped}};
}

Normalizer normalizer_from_json(const json& j) {
    Normalizer n;
    n.long_mean = j.at("long_mean").get<std::vector<double>>();
    n.long_scale = j.at("long_scale").get<std::vector<double>>();
    n.ctx_mean = j.at("ctx_mean").get<std::vector<double>>();
    n.ctx_scale = j.at("ctx_scale").get<std::vector<double>>();
    n.long_binary = j.at("long_binary").get<std::vector<std::uint8_t>>();
    n.ctx_binary = j.at("ctx_binary").get<std::vector<std::uint8_t>>();
    n.clamped = j.at("clamped").get<std::vector<std::string>>();
    return n;
}

json net_to_json(const NetConfig& c) {
    return {{"n", c.n},
            {"m", c.m},
            {"c", c.c},
            {"imputer_embed", c.imputer_embed},
            {"flow_depth", c.flow_depth},
            {"corrector_layers", c.corrector_layers},
            {"wnet_layers", c.wnet_layers},
            {"pnet_layers", c.pnet_layers},
            {"tte_residual_layers", c.tte_residual_layers},
            {"wnet_scale_total", c.wnet_scale_total}};
}

NetConfig net_from_json(const json& j) {
    NetConfig c;
    c.n = j.at("n").get<std::size_t>();
    c.m = j.at("m").get<std::size_t>();
    c.c = j.at("c").get<std::size_t>();
    c.imputer_embed = j.at("imputer_embed").get<std::size_t>();
    c.flow_depth = j.at("flow_depth").get<std::size_t>();
    c.corrector_layers = j.at("corrector_layers").get<std::size_t>();
    c.wnet_layers = j.at("wnet_layers").get<std::size_t>();
    c.pnet_layers = j.at("pnet_layers").get<std::size_t>();
    c.tte_residual_layers = j.at("tte_residual_layers").get<std::size_t>();
    c.wnet_scale_total = j.at("wnet_scale_total").get<bool>();
    return c;
}

void write_le_doubles(std::ostream& os, const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
        unsigned char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
        os.write(reinterpret_cast<const char*>(buf), 8);
    }
}

void read_le_doubles(std::istream& is, Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        unsigned char buf[8];
        is.read(reinterpret_cast<char*>(buf), 8);
        if (!is) throw DataError("checkpoint blob truncated");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
        t[i] = std::bit_cast<double>(bits);
    }
}

json parse_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed ") + what + " " + path + ": " + e.what());
    }
}

const char* mode_name(nbm::GenMode m) {
    return m == nbm::GenMode::kRollout ? "rollout" : "baseline";
}

nbm::GenMode mode_from(const std::string& s) {
    if (s == "rollout") return nbm::GenMode::kRollout;
    if (s == "baseline") return nbm::GenMode::kFromBaseline;
    throw DataError("unknown generation mode: " + s);
}

}  // namespace

Schema load_schema(const std::string& path) {
    try {
        return schema_from_json(parse_file(path, "schema"));
    } catch (const json::exception& e) {
        throw ConfigError("malformed schema " + path + ": " + e.what());
    }
}

void save_schema(const std::string& path, const Schema& schema) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write schema: " + path);
    out << schema_to_json(schema).dump(2) << '\n';
}

void save_checkpoint(const std::string& path, const Schema& schema, Model& model,
                     const Normalizer& norm) {
    std::size_t count = 0;
    for (const ad::Param* p : model.params()) count += p->numel();
    json header = {{"format", "dtg-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"schema", schema_to_json(schema)},
                   {"net", net_to_json(model.cfg)},
                   {"n_outcomes", model.tte.size()},
                   {"normalizer", normalizer_to_json(norm)},
                   {"param_count", count}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out << header.dump() << '\n';
    for (ad::Param* p : model.params()) write_le_doubles(out, p->value);
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("checkpoint missing header: " + path);
    json header;
    try {
        header = json::parse(line);
        if (header.at("format").get<std::string>() != "dtg-checkpoint") {
            throw DataError("not a checkpoint file: " + path);
        }
        int version = header.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(version));
        }
        Checkpoint ck{schema_from_json(header.at("schema")), net_from_json(header.at("net")),
                      Model{}, normalizer_from_json(header.at("normalizer"))};
        const auto n_outcomes = header.at("n_outcomes").get<std::size_t>();
        ck.model = Model::init(ck.net, n_outcomes, 0);
        std::size_t count = 0;
        for (ad::Param* p : ck.model.params()) {
            read_le_doubles(in, p->value);
            count += p->numel();
        }
        if (count != header.at("param_count").get<std::size_t>()) {
            throw DataError("checkpoint parameter count mismatch: " + path);
        }
        char extra;
        if (in.read(&extra, 1)) throw DataError("checkpoint has trailing bytes: " + path);
        return ck;
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header " + path + ": " + e.what());
    }
}

void save_samples(const std::string& path, const Schema& schema,
                  const eval::CohortSamples& samples) {
    if (samples.ids.size() != samples.sets.size()) {
        throw ShapeError("sample ids and sets disagree");
    }
    std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
    if (!out) throw ConfigError("cannot write samples: " + path);
    out << "# dtg-samples v1\n";
    out << "# model=" << samples.model_id << " seed=" << samples.seed
        << " mode=" << mode_name(samples.mode) << "\n";
    out << "patient,sample,time";
    for (const VarDef& v : schema.longitudinal) out << ',' << v.name;
    out << '\n';
    for (std::size_t i = 0; i < samples.ids.size(); ++i) {
        const std::string& id = samples.ids[i];
        if (id.find(',') != std::string::npos || id.find('\n') != std::string::npos) {
            throw DataError("patient id not serializable: " + id);
        }
        const nbm::SampleSet& s = samples.sets[i];
        if (s.n_dims != schema.n_long()) throw ShapeError("sample set width != schema");
        for (std::size_t k = 0; k < s.paths.size(); ++k) {
            for (std::size_t b = 0; b < s.times.size(); ++b) {
                out << id << ',' << k << ',' << g17(s.times[b]);
                for (std::size_t j = 0; j < s.n_dims; ++j) out << ',' << g17(s.paths[k].at(b, j));
                out << '\n';
            }
        }
    }
    if (!out) throw DataError("sample write failed: " + path);
}

eval::CohortSamples load_samples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open samples: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "# dtg-samples v1") {
        throw DataError("not a samples file: " + path);
    }
    eval::CohortSamples out;
    if (!std::getline(in, line) || line.rfind("# model=", 0) != 0) {
        throw DataError("samples file missing provenance: " + path);
    }
    {
        std::size_t sp = line.find(" seed=");
        std::size_t mp = line.find(" mode=");
        if (sp == std::string::npos || mp == std::string::npos || mp < sp) {
            throw DataError("samples file provenance malformed: " + path);
        }
        out.model_id = line.substr(8, sp - 8);
        out.seed = std::stoull(line.substr(sp + 6, mp - sp - 6));
        out.mode = mode_from(line.substr(mp + 6));
    }
    if (!std::getline(in, line) || line.rfind("patient,sample,time", 0) != 0) {
        throw DataError("samples file missing column header: " + path);
    }
    std::size_t n_dims = 0;
    for (char ch : line) n_dims += ch == ',';
    n_dims -= 2;

    struct Raw {
        std::vector<double> times;
        std::vector<std::vector<double>> draws;  // flat [time, dim] rows per draw
    };
    std::vector<Raw> raws;
    std::unordered_map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, field;
        if (!std::getline(row, id, ',')) throw DataError("bad sample row: " + line);
        if (!std::getline(row, field, ',')) throw DataError("bad sample row: " + line);
        const std::size_t k = std::stoul(field);
        if (!std::getline(row, field, ',')) throw DataError("bad sample row: " + line);
        const double t = std::stod(field);
        auto [it, fresh] = index.emplace(id, raws.size());
        if (fresh) {
            out.ids.push_back(id);
            raws.emplace_back();
        }
        Raw& r = raws[it->second];
        if (k == r.draws.size()) r.draws.emplace_back();
        else if (k + 1 != r.draws.size()) throw DataError("sample rows out of order: " + line);
        if (k == 0) r.times.push_back(t);
        std::vector<double>& flat = r.draws[k];
        while (std::getline(row, field, ',')) flat.push_back(std::stod(field));
        if (flat.size() % n_dims != 0) throw DataError("bad sample row width: " + line);
    }
    for (const Raw& r : raws) {
        nbm::SampleSet s;
        s.times = r.times;
        s.n_dims = n_dims;
        s.mode = out.mode;
        for (const std::vector<double>& flat : r.draws) {
            if (flat.size() != r.times.size() * n_dims) {
                throw DataError("ragged sample set in " + path);
            }
            Tensor p({r.times.size(), n_dims});
            for (std::size_t e = 0; e < flat.size(); ++e) p[e] = flat[e];
            s.paths.push_back(std::move(p));
        }
        if (!out.sets.empty() && r.times != out.sets.front().times) {
            throw DataError("sample sets disagree on horizons in " + path);
        }
        out.sets.push_back(std::move(s));
    }
    if (!out.sets.empty()) out.times = out.sets.front().times;
    return out;
}

void save_curve(const std::string& path, const std::vector<EpochStats>& curve) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write training curve: " + path);
    out << "epoch,imputer,rbm,mse,consistency,event,total,val_total\n";
    for (const EpochStats& e : curve) {
        out << e.epoch << ',' << g17(e.train.imputer) << ',' << g17(e.train.rbm) << ','
            << g17(e.train.mse) << ',' << g17(e.train.consistency) << ',' << g17(e.train.event)
            << ',' << g17(e.train.total) << ',' << g17(e.val_total) << '\n';
    }
}

RunConfig load_run_config(const std::string& path) {
    json j = parse_file(path, "config");
    if (!j.is_object()) throw ConfigError("config must be a JSON object: " + path);
    RunConfig cfg;
    bool have_seed = false;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "schema") cfg.schema_path = val.get<std::string>();
            else if (key == "longitudinal") cfg.data_long = val.get<std::string>();
            else if (key == "context") cfg.data_ctx = val.get<std::string>();
            else if (key == "tte") cfg.data_tte = val.get<std::string>();
            else if (key == "model") cfg.model_path = val.get<std::string>();
            else if (key == "out") cfg.out_dir = val.get<std::string>();
            else if (key == "seed") {
                cfg.seed = val.get<std::uint64_t>();
                have_seed = true;
            } else if (key == "hidden_dim") cfg.net.m = val.get<std::size_t>();
            else if (key == "imputer_embed") cfg.net.imputer_embed = val.get<std::size_t>();
            else if (key == "flow_depth") cfg.net.flow_depth = val.get<std::size_t>();
            else if (key == "corrector_layers") cfg.net.corrector_layers = val.get<std::size_t>();
            else if (key == "wnet_layers") cfg.net.wnet_layers = val.get<std::size_t>();
            else if (key == "pnet_layers") cfg.net.pnet_layers = val.get<std::size_t>();
            else if (key == "tte_residual_layers") {
                cfg.net.tte_residual_layers = val.get<std::size_t>();
            } else if (key == "wnet_scale_total") cfg.net.wnet_scale_total = val.get<bool>();
            else if (key == "epochs") cfg.train.epochs = val.get<std::size_t>();
            else if (key == "batch_size") cfg.train.batch_size = val.get<std::size_t>();
            else if (key == "lr") cfg.train.lr = val.get<double>();
            else if (key == "gibbs_k") cfg.train.gibbs_k = val.get<int>();
            else if (key == "fold") cfg.train.fold = val.get<int>();
            else if (key == "n_folds") cfg.train.n_folds = val.get<int>();
            else if (key == "w_imputer") cfg.weights.imputer = val.get<double>();
            else if (key == "w_rbm") cfg.weights.rbm = val.get<double>();
            else if (key == "w_mse") cfg.weights.mse = val.get<double>();
            else if (key == "w_consistency") cfg.weights.consistency = val.get<double>();
            else if (key == "w_event") cfg.weights.event = val.get<double>();
            else if (key == "weight_decay") cfg.weights.weight_decay = val.get<double>();
            else if (key.rfind("decay_", 0) == 0) {
                cfg.weights.decay_overrides[key.substr(6)] = val.get<double>();
            } else if (key == "times") cfg.times = val.get<std::vector<double>>();
            else if (key == "samples") cfg.samples = val.get<std::size_t>();
            else if (key == "bin_width") cfg.bin_width = val.get<double>();
            else if (key == "change_from_baseline") cfg.change_from_baseline = val.get<bool>();
            else if (key == "from_baseline_mode") cfg.from_baseline_mode = val.get<bool>();
            else if (key == "synth_patients") cfg.synth_patients = val.get<std::size_t>();
            else if (key == "ou_dims") cfg.ou.n_dims = val.get<std::size_t>();
            else if (key == "ou_ctx") cfg.ou.n_ctx = val.get<std::size_t>();
            else if (key == "ou_theta") cfg.ou.theta = val.get<std::vector<double>>();
            else if (key == "ou_sigma") cfg.ou.sigma = val.get<std::vector<double>>();
            else if (key == "ou_mean0") cfg.ou.mean0 = val.get<std::vector<double>>();
            else if (key == "ou_mean_ctx" || key == "ou_corr") {
                auto rows = val.get<std::vector<std::vector<double>>>();
                if (rows.empty()) throw ConfigError("empty matrix for " + key);
                Tensor t({rows.size(), rows[0].size()});
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (rows[r].size() != rows[0].size()) {
                        throw ConfigError("ragged matrix for " + key);
                    }
                    for (std::size_t cidx = 0; cidx < rows[r].size(); ++cidx) {
                        t.at(r, cidx) = rows[r][cidx];
                    }
                }
                (key == "ou_corr" ? cfg.ou.corr : cfg.ou.mean_ctx) = t;
            } else if (key == "ou_schedules") {
                cfg.ou.schedules = val.get<std::vector<std::vector<double>>>();
            } else if (key == "ou_missing") cfg.ou.missing_rate = val.get<double>();
            else if (key == "ou_ctx_missing") cfg.ou.ctx_missing_rate = val.get<double>();
            else if (key == "tte_intercept") {
                cfg.tte.intercept = val.get<double>();
                cfg.has_tte = true;
            } else if (key == "tte_weights") {
                cfg.tte.ctx_weights = val.get<std::vector<double>>();
                cfg.has_tte = true;
            } else if (key == "tte_kappa") {
                cfg.tte.kappa = val.get<double>();
                cfg.has_tte = true;
            } else if (key == "tte_censor_lo") {
                cfg.tte.censor_lo = val.get<double>();
                cfg.has_tte = true;
            } else if (key == "tte_censor_hi") {
                cfg.tte.censor_hi = val.get<double>();
                cfg.has_tte = true;
            } else {
                throw ConfigError("unknown config key: " + key);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError("bad config value in " + path + ": " + e.what());
    }
    if (!have_seed) throw ConfigError("config is missing the mandatory \"seed\" key");
    return cfg;
}

std::string run_config_json(const RunConfig& cfg) {
    json j = {{"schema", cfg.schema_path},
              {"longitudinal", cfg.data_long},
              {"context", cfg.data_ctx},
              {"tte", cfg.data_tte},
              {"model", cfg.model_path},
              {"out", cfg.out_dir},
              {"seed", cfg.seed},
              {"hidden_dim", cfg.net.m},
              {"imputer_embed", cfg.net.imputer_embed},
              {"flow_depth", cfg.net.flow_depth},
              {"corrector_layers", cfg.net.corrector_layers},
              {"wnet_layers", cfg.net.wnet_layers},
              {"pnet_layers", cfg.net.pnet_layers},
              {"tte_residual_layers", cfg.net.tte_residual_layers},
              {"wnet_scale_total", cfg.net.wnet_scale_total},
              {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size},
              {"lr", cfg.train.lr},
              {"gibbs_k", cfg.train.gibbs_k},
              {"fold", cfg.train.fold},
              {"n_folds", cfg.train.n_folds},
              {"w_imputer", cfg.weights.imputer},
              {"w_rbm", cfg.weights.rbm},
              {"w_mse", cfg.weights.mse},
              {"w_consistency", cfg.weights.consistency},
              {"w_event", cfg.weights.event},
              {"weight_decay", cfg.weights.weight_decay},
              {"times", cfg.times},
              {"samples", cfg.samples},
              {"bin_width", cfg.bin_width},
              {"change_from_baseline", cfg.change_from_baseline},
              {"from_baseline_mode", cfg.from_baseline_mode}};
    for (const auto& [k, v] : cfg.weights.decay_overrides) j["decay_" + k] = v;
    if (cfg.synth_patients > 0) {
        j["synth_patients"] = cfg.synth_patients;
        j["ou_dims"] = cfg.ou.n_dims;
        j["ou_ctx"] = cfg.ou.n_ctx;
        j["ou_theta"] = cfg.ou.theta;
        j["ou_sigma"] = cfg.ou.sigma;
        j["ou_mean0"] = cfg.ou.mean0;
        auto mat = [](const Tensor& t) {
            std::vector<std::vector<double>> rows(t.rows(), std::vector<double>(t.cols()));
            for (std::size_t r = 0; r < t.rows(); ++r) {
                for (std::size_t c = 0; c < t.cols(); ++c) rows[r][c] = t.at(r, c);
            }
            return rows;
        };
        if (cfg.ou.mean_ctx.numel() > 0) j["ou_mean_ctx"] = mat(cfg.ou.mean_ctx);
        if (cfg.ou.corr.numel() > 0) j["ou_corr"] = mat(cfg.ou.corr);
        j["ou_schedules"] = cfg.ou.schedules;
        j["ou_missing"] = cfg.ou.missing_rate;
        j["ou_ctx_missing"] = cfg.ou.ctx_missing_rate;
        if (cfg.has_tte) {
            j["tte_intercept"] = cfg.tte.intercept;
            j["tte_weights"] = cfg.tte.ctx_weights;
            j["tte_kappa"] = cfg.tte.kappa;
            j["tte_censor_lo"] = cfg.tte.censor_lo;
            j["tte_censor_hi"] = cfg.tte.censor_hi;
        }
    }
    return j.dump(2);
}

}  // namespace dtg::io
