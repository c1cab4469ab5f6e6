#pragma once

#include "lipsub/reduced_solver.hpp"
#include "lipsub/scenario.hpp"

namespace lipsub {

// One full-space implicit-Euler (or quasi-static) Newton step with per-element
// SPD projection and a sparse symmetric solve; same exit taxonomy as the
// reduced solver.
ExitReport full_step(SimState& state, const FrameInput& frame, const PotentialContext& base_ctx,
                     const MassMatrix& mass, const SolverConfig& cfg, bool quasi_static);

struct EpisodeLog {
    std::uint64_t seed = 0;
    int steps = 0;
    bool dropped = false;
};

struct DatasetGenResult {
    Dataset train;
    Dataset test;
    std::vector<EpisodeLog> episodes;
};

// Runs seeded episodes of the scenario with randomly sampled interactions and
// records a snapshot of the free DOFs at every accepted step. The trailing
// `test_fraction` of episodes goes to the held-out split.
DatasetGenResult generate_dataset(const Scenario& scenario, const SolverConfig& cfg,
                                  std::uint64_t seed);

}  // namespace lipsub
