#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dtg/dtg.h"

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dtg_api_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string at(const std::string& name) const { return (path / name).string(); }
    static inline int counter = 0;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Session {
    dtg_session* s = dtg_open();
    ~Session() { dtg_close(s); }
    void set(const char* k, const std::string& v) { REQUIRE(dtg_set_option(s, k, v.c_str()) == DTG_OK); }
    dtg_status run(const char* cmd) { return dtg_run(s, cmd); }
    std::string err() const { return dtg_last_error(s); }
};

// Tiny end-to-end config: 20 synthetic patients, 2 epochs, small nets.
std::string tiny_config(const TempDir& tmp) {
    std::ostringstream os;
    os << R"({
        "seed": 11,
        "synth_patients": 20, "ou_dims": 1, "ou_ctx": 1,
        "ou_schedules": [[0, 1, 2, 4]], "ou_missing": 0.1,
        "tte_intercept": 1.0, "tte_weights": [0.5],
        "schema": ")" << tmp.at("schema.json") << R"(",
        "longitudinal": ")" << tmp.at("longitudinal.csv") << R"(",
        "context": ")" << tmp.at("context.csv") << R"(",
        "tte": ")" << tmp.at("tte.csv") << R"(",
        "model": ")" << tmp.at("model.dtg") << R"(",
        "hidden_dim": 4, "flow_depth": 2, "epochs": 2, "batch_size": 8,
        "gibbs_k": 2, "samples": 3, "times": [1, 4]
    })";
    std::string p = tmp.at("cfg.json");
    std::ofstream(p) << os.str();
    return p;
}

}  // namespace

TEST_CASE("option validation") {
    Session s;
    CHECK(dtg_set_option(s.s, "mystery", "1") == DTG_ERR_CONFIG);
    CHECK(std::string(dtg_last_error(s.s)).find("mystery") != std::string::npos);
    CHECK(dtg_set_option(nullptr, "seed", "1") == DTG_ERR_CONFIG);
    CHECK(dtg_set_option(s.s, "seed", nullptr) == DTG_ERR_CONFIG);
    CHECK(dtg_run(s.s, "no-such-command") == DTG_ERR_CONFIG);
    CHECK(dtg_run(nullptr, "synth") == DTG_ERR_CONFIG);

    SUBCASE("bad option values surface when the command runs") {
        s.set("seed", "not a number");
        CHECK(s.run("gradcheck") == DTG_ERR_CONFIG);
        CHECK(s.err().find("seed") != std::string::npos);
    }
    SUBCASE("thread caps must be positive") {
        s.set("threads", "0");
        CHECK(s.run("gradcheck") == DTG_ERR_CONFIG);
        CHECK(s.err().find("threads") != std::string::npos);
    }
}

TEST_CASE("missing inputs map to config errors") {
    TempDir tmp;
    Session s;
    s.set("out", tmp.at("out"));
    CHECK(s.run("train") == DTG_ERR_CONFIG);  // no config at all
    s.set("config", tmp.at("nowhere.json"));
    CHECK(s.run("train") == DTG_ERR_CONFIG);  // config file absent
}

TEST_CASE("malformed data maps to a data error") {
    TempDir tmp;
    std::ofstream(tmp.at("schema.json"))
        << R"({"longitudinal":[{"name":"y1","kind":"continuous"}],"context":[],"tte_outcomes":[]})";
    std::ofstream(tmp.at("long.csv")) << "patient,time,y1\np0,abc,1.0\n";
    std::ofstream(tmp.at("cfg.json")) << R"({"seed":1,"schema":")" << tmp.at("schema.json")
                                      << R"(","longitudinal":")" << tmp.at("long.csv")
                                      << R"(","epochs":1})";
    Session s;
    s.set("config", tmp.at("cfg.json"));
    s.set("out", tmp.at("out"));
    CHECK(s.run("train") == DTG_ERR_DATA);
    CHECK(!s.err().empty());
}

TEST_CASE("gradcheck command") {
    TempDir tmp;
    Session s;
    s.set("out", tmp.at("out"));
    s.set("seed", "3");
    REQUIRE(s.run("gradcheck") == DTG_OK);
    std::string csv = slurp(tmp.at("out") + "/gradcheck.csv");
    CHECK(csv.find("check,max_rel_err,pass") == 0);
    CHECK(csv.find("marginal_energy") != std::string::npos);
    CHECK(csv.find("false") == std::string::npos);
}

TEST_CASE("pipeline runs end to end and is deterministic") {
    TempDir tmp;
    std::string cfg = tiny_config(tmp);

    {
        Session s;
        s.set("config", cfg);
        s.set("out", tmp.path.string());
        REQUIRE(s.run("synth") == DTG_OK);
        REQUIRE(fs::exists(tmp.at("schema.json")));
        REQUIRE(fs::exists(tmp.at("longitudinal.csv")));
        REQUIRE(fs::exists(tmp.at("truth_context.csv")));

        REQUIRE(s.run("train") == DTG_OK);
        REQUIRE(fs::exists(tmp.at("model.dtg")));
        REQUIRE(fs::exists(tmp.at("training_curve.csv")));

        REQUIRE(s.run("generate") == DTG_OK);
        REQUIRE(fs::exists(tmp.at("samples.csv")));

        REQUIRE(s.run("evaluate") == DTG_OK);
        REQUIRE(fs::exists(tmp.at("report.csv")));
        REQUIRE(fs::exists(tmp.at("report.json")));

        REQUIRE(s.run("twin-record") == DTG_OK);
        REQUIRE(fs::exists(tmp.at("twin_records.csv")));
    }

    std::string report = slurp(tmp.at("report.json"));
    CHECK(report.find("\"concordance\"") != std::string::npos);
    CHECK(report.find("y1") != std::string::npos);

    SUBCASE("re-running generation reproduces the samples byte for byte") {
        std::string first = slurp(tmp.at("samples.csv"));
        Session s;
        s.set("config", cfg);
        s.set("out", tmp.path.string());
        REQUIRE(s.run("generate") == DTG_OK);
        CHECK(slurp(tmp.at("samples.csv")) == first);
    }
    SUBCASE("per-command option overrides win over the config") {
        Session s;
        s.set("config", cfg);
        s.set("out", tmp.at("alt"));
        s.set("samples", "2");
        s.set("times", "1,2");
        s.set("model", tmp.at("model.dtg"));
        REQUIRE(s.run("generate") == DTG_OK);
        std::string text = slurp(tmp.at("alt") + "/samples.csv");
        std::istringstream in(text);
        std::string line;
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty() && line[0] != '#' && line.rfind("patient", 0) != 0) ++rows;
        CHECK(rows == 20 * 2 * 2);  // patients x draws x horizons
    }
}
