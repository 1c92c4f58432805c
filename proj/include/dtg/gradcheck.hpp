#pragma once
// Finite-difference audit of the analytic gradients: every sub-network
// forward pass and every training loss, run on small fresh instances.

#include <cstdint>
#include <string>
#include <vector>

namespace dtg {

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central differences (step 1e-5) against tape gradients over every element
// of every parameter; pass means the worst relative error is below 1e-4.
// Deterministic for a fixed seed.
std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed);

}  // namespace dtg
