#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaptvig {

struct ComponentCheck {
    std::string name;
    double max_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Finite-difference verification of every primitive, the AGC and attention
/// blocks (temperature included), a tiny end-to-end model, and the taped
/// temperature gradient against its closed form. Deterministic per seed.
std::vector<ComponentCheck> run_grad_checks(std::uint64_t seed);

bool all_pass(const std::vector<ComponentCheck>& checks);

}  // namespace adaptvig
