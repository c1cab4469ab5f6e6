#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lipsub/energy.hpp"
#include "lipsub/losses.hpp"
#include "lipsub/mesh.hpp"
#include "lipsub/reduced_solver.hpp"
#include "lipsub/rng.hpp"
#include "lipsub/sdf.hpp"

namespace lipsub {

struct InteractionParams {
    double force_min = 0.0;
    double force_max = 0.0;
    double patch_radius = 0.0;
    int steps_min = 1;
    int steps_max = 1;
};

struct PinMotion {
    enum class Kind { None, Oscillate } kind = Kind::None;
    Eigen::VectorXd axis;
    double amplitude = 0.0;
    double period = 1.0;
};

// A randomly placed constant force on a vertex patch for a step interval.
struct Interaction {
    std::vector<int> patch;
    Eigen::VectorXd force_per_vertex;  // dim
    int start = 0;
    int duration = 0;
};

struct Scenario {
    std::string name;
    Mesh mesh;
    MaterialParams material;
    Eigen::VectorXd gravity;  // dim
    double dt = 0.05;
    bool quasi_static = false;
    std::vector<SdfShape> colliders;
    InteractionParams interact;
    PinMotion pin_motion;
    int episodes = 10;
    int steps_per_episode = 100;
    double test_fraction = 0.2;

    PotentialContext context() const {
        PotentialContext ctx(mesh, material);
        ctx.colliders = colliders;
        return ctx;
    }
};

Scenario load_scenario(const std::string& path);
Scenario scenario_from_json(const nlohmann::json& j, const std::string& base_dir);

// Prescribed pin positions at time t.
Eigen::MatrixXd pin_positions_at(const Scenario& scenario, double t);

// One random interaction within an episode of the given length.
Interaction sample_interaction(const Scenario& scenario, int episode_steps, Rng& rng);

// Back-to-back random interactions covering `steps` (used for benchmark replays).
std::vector<Interaction> replay_interactions(const Scenario& scenario, int steps, Rng& rng);

// Gravity plus the active interactions at `step`, as a free-DOF force vector.
FrameInput frame_at(const Scenario& scenario, const MassMatrix& mass,
                    const std::vector<Interaction>& interactions, int step, double t);

// On-disk dataset: manifest JSON plus a row-major little-endian f64 matrix.
void save_dataset(const Dataset& dataset, const std::string& dir, const nlohmann::json& extra);
Dataset load_dataset(const std::string& dir);

SimState rest_state(const Mesh& mesh, int subspace_dim = 0);

}  // namespace lipsub
