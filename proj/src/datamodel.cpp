#include "dtg/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dtg/errors.hpp"
#include "dtg/rng.hpp"

namespace dtg {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    out.push_back(field);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_num(const std::string& raw, const std::string& where) {
    std::string s = trim(raw);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw DataError("not a finite number at " + where + ": '" + raw + "'");
    }
    return v;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    if (lines.empty()) throw DataError("empty file: " + path);
    return lines;
}

// Maps header columns (after the fixed prefix) onto schema positions.
std::vector<int> map_columns(const std::vector<std::string>& header, std::size_t fixed,
                             const std::vector<VarDef>& vars, const std::string& path) {
    std::vector<int> col_to_var(header.size() - fixed, -1);
    std::set<int> seen;
    for (std::size_t c = fixed; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        int idx = -1;
        for (std::size_t j = 0; j < vars.size(); ++j) {
            if (vars[j].name == name) {
                idx = static_cast<int>(j);
                break;
            }
        }
        if (idx < 0) throw DataError(path + ": unknown column '" + name + "'");
        if (!seen.insert(idx).second) throw DataError(path + ": duplicate column '" + name + "'");
        col_to_var[c - fixed] = idx;
    }
    if (seen.size() != vars.size()) throw DataError(path + ": header is missing declared variables");
    return col_to_var;
}

void check_binary(double v, const std::string& name, const std::string& where) {
    if (v != 0.0 && v != 1.0) {
        throw DataError("binary variable '" + name + "' must be 0 or 1 at " + where);
    }
}

}  // namespace

int Schema::long_index(const std::string& name) const {
    for (std::size_t i = 0; i < longitudinal.size(); ++i)
        if (longitudinal[i].name == name) return static_cast<int>(i);
    return -1;
}

int Schema::ctx_index(const std::string& name) const {
    for (std::size_t i = 0; i < context.size(); ++i)
        if (context[i].name == name) return static_cast<int>(i);
    return -1;
}

int Schema::outcome_index(const std::string& name) const {
    for (std::size_t i = 0; i < tte_outcomes.size(); ++i)
        if (tte_outcomes[i] == name) return static_cast<int>(i);
    return -1;
}

void Schema::validate() const {
    if (longitudinal.empty()) throw ConfigError("schema needs at least one longitudinal variable");
    std::set<std::string> names;
    auto add = [&names](const std::string& n) {
        if (n.empty()) throw ConfigError("schema has an empty variable name");
        if (!names.insert(n).second) throw ConfigError("duplicate variable name in schema: " + n);
    };
    for (const auto& v : longitudinal) add(v.name);
    for (const auto& v : context) add(v.name);
    for (const auto& n : tte_outcomes) add(n);
}

std::vector<PatientRecord> load_dataset(const DatasetPaths& paths, const Schema& schema) {
    schema.validate();
    const std::size_t n = schema.n_long();
    const std::size_t c = schema.n_ctx();

    auto lines = read_lines(paths.longitudinal);
    auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || trim(header[0]) != "patient_id" || trim(header[1]) != "time") {
        throw DataError(paths.longitudinal + ": header must start with patient_id,time");
    }
    auto col_to_var = map_columns(header, 2, schema.longitudinal, paths.longitudinal);

    std::vector<PatientRecord> records;
    std::map<std::string, std::size_t> by_id;

    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        auto f = split_csv_line(lines[li]);
        const std::string where = paths.longitudinal + ":" + std::to_string(li + 1);
        if (f.size() != header.size()) throw DataError(where + ": wrong field count");
        std::string id = trim(f[0]);
        if (id.empty()) throw DataError(where + ": empty patient_id");
        double t = parse_num(f[1], where);
        if (t < 0.0) throw DataError(where + ": negative time");

        auto it = by_id.find(id);
        if (it == by_id.end()) {
            PatientRecord rec;
            rec.id = id;
            rec.context = Tensor::zeros({c});
            rec.context_mask.assign(c, 0);
            rec.tte.assign(schema.tte_outcomes.size(), std::nullopt);
            by_id[id] = records.size();
            records.push_back(std::move(rec));
            it = by_id.find(id);
        }
        PatientRecord& rec = records[it->second];
        if (!rec.visits.empty()) {
            double prev = rec.visits.back().t;
            if (t == prev) throw DataError(where + ": duplicate (patient,time) row");
            if (t < prev) throw DataError(where + ": visit times must increase within a patient");
        }

        Visit v;
        v.t = t;
        v.values = Tensor::zeros({n});
        v.mask.assign(n, 0);
        for (std::size_t k = 2; k < f.size(); ++k) {
            if (trim(f[k]).empty()) continue;  // blank = missing
            int j = col_to_var[k - 2];
            double val = parse_num(f[k], where);
            if (schema.longitudinal[j].kind == VarKind::kBinary) {
                check_binary(val, schema.longitudinal[j].name, where);
            }
            v.values[static_cast<std::size_t>(j)] = val;
            v.mask[static_cast<std::size_t>(j)] = 1;
        }
        rec.visits.push_back(std::move(v));
    }

    for (const auto& rec : records) {
        if (rec.visits.front().t != 0.0) {
            throw DataError(paths.longitudinal + ": patient '" + rec.id + "' has no baseline (t=0) row");
        }
    }

    if (!paths.context.empty()) {
        auto clines = read_lines(paths.context);
        auto chead = split_csv_line(clines[0]);
        if (chead.empty() || trim(chead[0]) != "patient_id") {
            throw DataError(paths.context + ": header must start with patient_id");
        }
        auto ctx_cols = map_columns(chead, 1, schema.context, paths.context);
        std::set<std::string> seen;
        for (std::size_t li = 1; li < clines.size(); ++li) {
            if (trim(clines[li]).empty()) continue;
            auto f = split_csv_line(clines[li]);
            const std::string where = paths.context + ":" + std::to_string(li + 1);
            if (f.size() != chead.size()) throw DataError(where + ": wrong field count");
            std::string id = trim(f[0]);
            auto it = by_id.find(id);
            if (it == by_id.end()) throw DataError(where + ": unknown patient '" + id + "'");
            if (!seen.insert(id).second) throw DataError(where + ": duplicate context row for '" + id + "'");
            PatientRecord& rec = records[it->second];
            for (std::size_t k = 1; k < f.size(); ++k) {
                if (trim(f[k]).empty()) continue;
                int j = ctx_cols[k - 1];
                double val = parse_num(f[k], where);
                if (schema.context[j].kind == VarKind::kBinary) {
                    check_binary(val, schema.context[j].name, where);
                }
                rec.context[static_cast<std::size_t>(j)] = val;
                rec.context_mask[static_cast<std::size_t>(j)] = 1;
            }
        }
    }

    if (!paths.tte.empty()) {
        auto tlines = read_lines(paths.tte);
        auto thead = split_csv_line(tlines[0]);
        if (thead.size() != 4 || trim(thead[0]) != "patient_id" || trim(thead[1]) != "outcome" ||
            trim(thead[2]) != "time" || trim(thead[3]) != "event") {
            throw DataError(paths.tte + ": header must be patient_id,outcome,time,event");
        }
        std::set<std::pair<std::string, int>> seen;
        for (std::size_t li = 1; li < tlines.size(); ++li) {
            if (trim(tlines[li]).empty()) continue;
            auto f = split_csv_line(tlines[li]);
            const std::string where = paths.tte + ":" + std::to_string(li + 1);
            if (f.size() != 4) throw DataError(where + ": wrong field count");
            std::string id = trim(f[0]);
            auto it = by_id.find(id);
            if (it == by_id.end()) throw DataError(where + ": unknown patient '" + id + "'");
            int oi = schema.outcome_index(trim(f[1]));
            if (oi < 0) throw DataError(where + ": unknown outcome '" + trim(f[1]) + "'");
            if (!seen.insert({id, oi}).second) {
                throw DataError(where + ": duplicate outcome row for '" + id + "'");
            }
            double time = parse_num(f[2], where);
            if (time < 0.0) throw DataError(where + ": negative event time");
            double ev = parse_num(f[3], where);
            if (ev != 0.0 && ev != 1.0) throw DataError(where + ": event must be 0 or 1");
            records[it->second].tte[static_cast<std::size_t>(oi)] = TTERecord{time, ev == 1.0};
        }
    }

    return records;
}

void write_dataset(const DatasetPaths& paths, const Schema& schema,
                   const std::vector<PatientRecord>& records) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };

    {
        std::ofstream out(paths.longitudinal);
        if (!out) throw DataError("cannot write file: " + paths.longitudinal);
        out << "patient_id,time";
        for (const auto& v : schema.longitudinal) out << "," << v.name;
        out << "\n";
        for (const auto& rec : records) {
            for (const auto& visit : rec.visits) {
                out << rec.id << "," << num(visit.t);
                for (std::size_t j = 0; j < schema.n_long(); ++j) {
                    out << ",";
                    if (visit.observed(j)) out << num(visit.values[j]);
                }
                out << "\n";
            }
        }
    }

    if (!paths.context.empty() && schema.n_ctx() > 0) {
        std::ofstream out(paths.context);
        if (!out) throw DataError("cannot write file: " + paths.context);
        out << "patient_id";
        for (const auto& v : schema.context) out << "," << v.name;
        out << "\n";
        for (const auto& rec : records) {
            out << rec.id;
            for (std::size_t j = 0; j < schema.n_ctx(); ++j) {
                out << ",";
                if (rec.context_mask[j]) out << num(rec.context[j]);
            }
            out << "\n";
        }
    }

    if (!paths.tte.empty() && !schema.tte_outcomes.empty()) {
        std::ofstream out(paths.tte);
        if (!out) throw DataError("cannot write file: " + paths.tte);
        out << "patient_id,outcome,time,event\n";
        for (const auto& rec : records) {
            for (std::size_t oi = 0; oi < rec.tte.size(); ++oi) {
                if (!rec.tte[oi]) continue;
                out << rec.id << "," << schema.tte_outcomes[oi] << "," << num(rec.tte[oi]->time)
                    << "," << (rec.tte[oi]->event ? 1 : 0) << "\n";
            }
        }
    }
}

std::vector<Triplet> build_triplets(const PatientRecord& rec) {
    std::vector<Triplet> out;
    const std::size_t v = rec.visits.size();
    if (v < 2) return out;
    out.reserve(v * (v - 1) / 2);
    for (std::size_t i = 0; i < v; ++i) {
        for (std::size_t j = i + 1; j < v; ++j) {
            out.push_back(Triplet{&rec, i, j});
        }
    }
    return out;
}

std::vector<Triplet> build_triplets(const std::vector<PatientRecord>& records) {
    std::vector<Triplet> out;
    for (const auto& rec : records) {
        auto t = build_triplets(rec);
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

Normalizer Normalizer::fit(const Schema& schema, const std::vector<PatientRecord>& train) {
    Normalizer nz;
    auto fit_one = [&nz](const VarDef& var, const std::vector<double>& obs, std::vector<double>& means,
                         std::vector<double>& scales, std::vector<std::uint8_t>& binary) {
        if (var.kind == VarKind::kBinary) {
            binary.push_back(1);
            means.push_back(0.0);
            scales.push_back(1.0);
            return;
        }
        binary.push_back(0);
        double mean = 0.0;
        for (double v : obs) mean += v;
        if (!obs.empty()) mean /= static_cast<double>(obs.size());
        double var2 = 0.0;
        for (double v : obs) var2 += (v - mean) * (v - mean);
        if (!obs.empty()) var2 /= static_cast<double>(obs.size());
        double sd = std::sqrt(var2);
        if (sd == 0.0) {
            sd = 1.0;
            nz.clamped.push_back(var.name);
        }
        means.push_back(mean);
        scales.push_back(sd);
    };

    for (std::size_t j = 0; j < schema.n_long(); ++j) {
        std::vector<double> obs;
        for (const auto& rec : train) {
            for (const auto& visit : rec.visits) {
                if (visit.observed(j)) obs.push_back(visit.values[j]);
            }
        }
        fit_one(schema.longitudinal[j], obs, nz.long_mean, nz.long_scale, nz.long_binary);
    }
    for (std::size_t j = 0; j < schema.n_ctx(); ++j) {
        std::vector<double> obs;
        for (const auto& rec : train) {
            if (rec.context_mask[j]) obs.push_back(rec.context[j]);
        }
        fit_one(schema.context[j], obs, nz.ctx_mean, nz.ctx_scale, nz.ctx_binary);
    }
    return nz;
}

double Normalizer::apply_long(std::size_t j, double v) const {
    return long_binary[j] ? 2.0 * v - 1.0 : (v - long_mean[j]) / long_scale[j];
}

double Normalizer::invert_long(std::size_t j, double v) const {
    return long_binary[j] ? (v + 1.0) / 2.0 : v * long_scale[j] + long_mean[j];
}

double Normalizer::apply_ctx(std::size_t j, double v) const {
    return ctx_binary[j] ? 2.0 * v - 1.0 : (v - ctx_mean[j]) / ctx_scale[j];
}

double Normalizer::invert_ctx(std::size_t j, double v) const {
    return ctx_binary[j] ? (v + 1.0) / 2.0 : v * ctx_scale[j] + ctx_mean[j];
}

std::vector<PatientRecord> Normalizer::apply(const std::vector<PatientRecord>& records) const {
    std::vector<PatientRecord> out = records;
    for (auto& rec : out) {
        for (auto& visit : rec.visits) {
            for (std::size_t j = 0; j < visit.mask.size(); ++j) {
                if (visit.observed(j)) visit.values[j] = apply_long(j, visit.values[j]);
            }
        }
        for (std::size_t j = 0; j < rec.context_mask.size(); ++j) {
            if (rec.context_mask[j]) rec.context[j] = apply_ctx(j, rec.context[j]);
        }
    }
    return out;
}

std::vector<int> split_folds(std::size_t n_patients, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("fold count must be at least 2");
    if (n_patients < static_cast<std::size_t>(k)) {
        throw DataError("fewer patients than folds");
    }
    std::vector<std::size_t> order(n_patients);
    for (std::size_t i = 0; i < n_patients; ++i) order[i] = i;
    Rng rng(seed, /*folds stream*/ 0xF01D5);
    for (std::size_t i = n_patients; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<int> fold(n_patients, 0);
    for (std::size_t pos = 0; pos < n_patients; ++pos) {
        fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    }
    return fold;
}

}  // namespace dtg
