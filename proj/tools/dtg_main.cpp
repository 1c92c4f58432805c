// Command-line front end; all work happens behind the C API.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dtg/dtg.h"

int main(int argc, char** argv) {
    CLI::App app{"digital twin generator: synthetic cohorts, training, twin "
                 "generation and evaluation"};
    app.require_subcommand(1);

    struct Flags {
        std::string config, seed, out, model, times, samples, fold, threads;
    };
    std::vector<std::pair<CLI::App*, Flags*>> subs;
    std::vector<Flags> storage(6);
    const char* names[] = {"synth", "train", "generate", "evaluate", "gradcheck", "twin-record"};
    const char* descs[] = {"draw a synthetic cohort with known ground truth",
                           "fit a model and write a checkpoint",
                           "draw twin trajectories for a cohort",
                           "score twins against observed data",
                           "audit analytic gradients with finite differences",
                           "per-patient mean and spread tables"};
    for (int i = 0; i < 6; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descs[i]);
        Flags& f = storage[static_cast<std::size_t>(i)];
        sub->add_option("-c,--config", f.config, "flat JSON run configuration");
        sub->add_option("--seed", f.seed, "seed override");
        sub->add_option("--out", f.out, "output directory override");
        sub->add_option("--model", f.model, "checkpoint path");
        sub->add_option("--times", f.times, "horizons in months, e.g. \"1,3,6,12\"");
        sub->add_option("--samples", f.samples, "draws per patient");
        sub->add_option("--fold", f.fold, "held-out fold for train");
        sub->add_option("--threads", f.threads, "parallelism cap (DTG_THREADS also works)");
        subs.emplace_back(sub, &f);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the message or help text
        return code == 0 ? 0 : DTG_ERR_CONFIG;
    }

    dtg_session* session = dtg_open();
    if (!session) {
        std::fprintf(stderr, "error: out of memory\n");
        return DTG_ERR_NUMERIC;
    }
    int rc = DTG_OK;
    for (auto& [sub, f] : subs) {
        if (!sub->parsed()) continue;
        const std::pair<const char*, const std::string*> opts[] = {
            {"config", &f->config}, {"seed", &f->seed},       {"out", &f->out},
            {"model", &f->model},   {"times", &f->times},     {"samples", &f->samples},
            {"fold", &f->fold},     {"threads", &f->threads},
        };
        for (const auto& [key, val] : opts) {
            if (val->empty()) continue;
            rc = dtg_set_option(session, key, val->c_str());
            if (rc != DTG_OK) break;
        }
        if (rc == DTG_OK) rc = dtg_run(session, sub->get_name().c_str());
        break;
    }
    if (rc != DTG_OK) std::fprintf(stderr, "error: %s\n", dtg_last_error(session));
    dtg_close(session);
    return rc;
}
