#pragma once

#include "bsgmm/config.hpp"

#include <iosfwd>

namespace bsgmm::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitNotConverged = 2;

// Each command writes its artifacts under config.common.out and returns 0
// when every requested computation converged. Input errors propagate as
// exceptions; progress goes to `log`.
int run_fit(const config::FitConfig& config, std::ostream& log);
int run_simulate(const config::SimulateConfig& config, std::ostream& log);
int run_efa(const config::EfaConfig& config, std::ostream& log);

}  // namespace bsgmm::cli
