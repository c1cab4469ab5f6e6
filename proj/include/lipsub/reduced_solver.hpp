#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>

#include "lipsub/energy.hpp"
#include "lipsub/losses.hpp"
#include "lipsub/mesh.hpp"
#include "lipsub/net.hpp"

namespace lipsub {

enum class SolveMethod { Lbfgs, ProjectiveNewton };

struct SolverConfig {
    double epsilon = 1e-5;   // gradient infinity-norm threshold
    int max_iters = 1024;
    int max_linesearch = 128;
    int lbfgs_history = 8;
    double dt = 0.05;        // timestep (s); dynamics only
    SolveMethod method = SolveMethod::Lbfgs;
    std::optional<ElementSubset> runtime_cubature;

    void validate() const;
};

// Exit taxonomy:
//   I   converged          |g|_inf < epsilon
//   II  saddle             search direction failed the descent test
//   III line-search cap    max_linesearch backtracking steps exhausted
//   IV  iteration cap      max_iters reached
struct ExitReport {
    enum Code { Converged = 1, Saddle = 2, LinesearchCap = 3, IterationCap = 4 };
    Code code = IterationCap;
    int iterations = 0;
    double final_grad_inf_norm = 0.0;
    double wall_time_ms = 0.0;
};

const char* exit_code_name(ExitReport::Code code);

struct SimState {
    Eigen::MatrixXd positions;   // V x dim
    Eigen::MatrixXd velocities;  // V x dim
    Eigen::VectorXd z;           // subspace coordinates (reduced mode)
    double t = 0.0;
};

// value + gradient callback; the gradient pointer may be null.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;
// exact objective Hessian (projective Newton projects it internally)
using HessianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

ExitReport lbfgs_minimize(const Objective& objective, Eigen::VectorXd& x, const SolverConfig& cfg);
ExitReport projective_newton_minimize(const Objective& objective, const HessianFn& hessian,
                                      Eigen::VectorXd& x, const SolverConfig& cfg);

// Reduced incremental potential E(z) = |f(z) - qbar|_M^2 / (2 dt^2) + P(f(z)).
// Without `qbar` (quasi-static) the inertia term is dropped.
struct ReducedObjective {
    const SubspaceModel* model = nullptr;
    const PotentialContext* ctx = nullptr;
    const MassMatrix* mass = nullptr;
    std::optional<Eigen::VectorXd> qbar;
    double dt = 0.05;
    const ElementSubset* runtime_cubature = nullptr;  // elastic term only

    double eval(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const;
    Eigen::MatrixXd hessian(const Eigen::VectorXd& z) const;
    Objective as_objective() const;
};

// Per-frame inputs evaluated at step boundaries.
struct FrameInput {
    Eigen::MatrixXd pin_positions;      // V x dim
    Eigen::VectorXd external_force;     // n (free DOFs)
};

// One implicit-Euler (or quasi-static) step in the subspace, warm-started at
// the previous z. Updates positions/velocities/z/t in place.
ExitReport reduced_step(SimState& state, const FrameInput& frame, const SubspaceModel& model,
                        const PotentialContext& base_ctx, const MassMatrix& mass,
                        const SolverConfig& cfg, bool quasi_static);

}  // namespace lipsub
