#include "lipsub/reduced_solver.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void SolverConfig::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("solver: epsilon must be > 0");
    if (max_iters < 1 || max_linesearch < 1)
        throw std::invalid_argument("solver: iteration caps must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("solver: dt must be > 0");
    if (lbfgs_history < 1) throw std::invalid_argument("solver: lbfgs history must be >= 1");
}

const char* exit_code_name(ExitReport::Code code) {
    switch (code) {
        case ExitReport::Converged: return "I";
        case ExitReport::Saddle: return "II";
        case ExitReport::LinesearchCap: return "III";
        case ExitReport::IterationCap: return "IV";
    }
    return "?";
}

namespace {

constexpr double kArmijoC = 1e-4;

struct LineSearchResult {
    bool ok = false;
    double step = 0.0;
    double value = 0.0;
};

// Backtracking Armijo search with step halving from alpha = 1.
LineSearchResult armijo(const Objective& objective, const VectorXd& x, const VectorXd& d,
                        double f0, double gtd, int max_linesearch, VectorXd& trial) {
    double alpha = 1.0;
    for (int ls = 0; ls < max_linesearch; ++ls) {
        trial = x + alpha * d;
        const double f = objective(trial, nullptr);
        if (std::isfinite(f) && f <= f0 + kArmijoC * alpha * gtd)
            return {true, alpha, f};
        alpha *= 0.5;
    }
    return {};
}

}  // namespace

ExitReport lbfgs_minimize(const Objective& objective, Eigen::VectorXd& x, const SolverConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&](ExitReport r) {
        r.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count();
        return r;
    };

    VectorXd g(x.size());
    double f = objective(x, &g);
    std::deque<std::pair<VectorXd, VectorXd>> history;  // (s, y)

    ExitReport report;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        report.iterations = iter;
        report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
        if (report.final_grad_inf_norm < cfg.epsilon) {
            report.code = ExitReport::Converged;
            return finish(report);
        }

        // Two-loop recursion over the stored curvature pairs.
        VectorXd d = -g;
        std::vector<double> alpha(history.size());
        for (long i = static_cast<long>(history.size()) - 1; i >= 0; --i) {
            const auto& [s, y] = history[i];
            alpha[i] = s.dot(d) / y.dot(s);
            d -= alpha[i] * y;
        }
        if (!history.empty()) {
            const auto& [s, y] = history.back();
            d *= s.dot(y) / y.dot(y);
        }
        for (std::size_t i = 0; i < history.size(); ++i) {
            const auto& [s, y] = history[i];
            const double beta = y.dot(d) / y.dot(s);
            d += (alpha[i] - beta) * s;
        }

        const double gtd = g.dot(d);
        if (!(gtd < 0.0)) {
            report.code = ExitReport::Saddle;
            return finish(report);
        }

        VectorXd trial;
        const LineSearchResult ls = armijo(objective, x, d, f, gtd, cfg.max_linesearch, trial);
        if (!ls.ok) {
            report.code = ExitReport::LinesearchCap;
            return finish(report);
        }

        VectorXd g_new(x.size());
        const double f_new = objective(trial, &g_new);
        const VectorXd s = trial - x;
        const VectorXd y = g_new - g;
        // Skip pairs with non-positive curvature so the two-loop stays well posed.
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            history.emplace_back(s, y);
            if (static_cast<int>(history.size()) > cfg.lbfgs_history) history.pop_front();
        }
        x = trial;
        f = f_new;
        g = g_new;
    }
    report.iterations = cfg.max_iters;
    report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
    if (report.final_grad_inf_norm < cfg.epsilon)
        report.code = ExitReport::Converged;
    else
        report.code = ExitReport::IterationCap;
    return finish(report);
}

ExitReport projective_newton_minimize(const Objective& objective, const HessianFn& hessian,
                                      Eigen::VectorXd& x, const SolverConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&](ExitReport r) {
        r.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count();
        return r;
    };

    VectorXd g(x.size());
    double f = objective(x, &g);

    ExitReport report;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        report.iterations = iter;
        report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
        if (report.final_grad_inf_norm < cfg.epsilon) {
            report.code = ExitReport::Converged;
            return finish(report);
        }

        const MatrixXd H = project_spd(hessian(x));
        Eigen::LDLT<MatrixXd> ldlt(H);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("projective newton: factorization failed");
        VectorXd d = ldlt.solve(-g);
        if (!d.allFinite()) throw std::runtime_error("projective newton: singular system");

        const double gtd = g.dot(d);
        if (!(gtd < 0.0)) {
            report.code = ExitReport::Saddle;
            return finish(report);
        }

        VectorXd trial;
        const LineSearchResult ls = armijo(objective, x, d, f, gtd, cfg.max_linesearch, trial);
        if (!ls.ok) {
            report.code = ExitReport::LinesearchCap;
            return finish(report);
        }
        x = trial;
        f = objective(x, &g);
    }
    report.iterations = cfg.max_iters;
    report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
    report.code = report.final_grad_inf_norm < cfg.epsilon ? ExitReport::Converged
                                                           : ExitReport::IterationCap;
    return finish(report);
}

double ReducedObjective::eval(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const {
    const VectorXd q = decode(*model, z);
    const ElementSubset full = runtime_cubature ? ElementSubset{} : ElementSubset::full(ctx->mesh->num_elements());
    const ElementSubset& subset = runtime_cubature ? *runtime_cubature : full;
    const AssembledPotential ap = assemble(*ctx, q, false, &subset);

    double value = ap.value;
    VectorXd full_grad = ap.gradient;
    if (qbar) {
        const VectorXd diff = q - *qbar;
        const double inv_dt2 = 1.0 / (dt * dt);
        value += 0.5 * inv_dt2 * (mass->diag.array() * diff.array().square()).sum();
        full_grad += inv_dt2 * mass->diag.cwiseProduct(diff);
    }
    if (!std::isfinite(value))
        throw std::runtime_error("reduced objective: non-finite energy");
    if (grad) *grad = decode_jacobian(*model, z).transpose() * full_grad;
    return value;
}

Eigen::MatrixXd ReducedObjective::hessian(const Eigen::VectorXd& z) const {
    const VectorXd q = decode(*model, z);
    const ElementSubset full = runtime_cubature ? ElementSubset{} : ElementSubset::full(ctx->mesh->num_elements());
    const ElementSubset& subset = runtime_cubature ? *runtime_cubature : full;
    const AssembledPotential ap = assemble(*ctx, q, true, &subset);
    const MatrixXd J = decode_jacobian(*model, z);

    VectorXd residual = ap.gradient;
    MatrixXd HJ = *ap.hessian * J;
    if (qbar) {
        const double inv_dt2 = 1.0 / (dt * dt);
        residual += inv_dt2 * mass->diag.cwiseProduct(q - *qbar);
        HJ += inv_dt2 * mass->diag.asDiagonal() * J;
    }
    MatrixXd H = J.transpose() * HJ;
    const int r = model->r;
    for (int a = 0; a < r; ++a)
        for (int b = a; b < r; ++b) {
            const VectorXd s = decode_second_directional(*model, z, VectorXd::Unit(r, a),
                                                         VectorXd::Unit(r, b));
            const double v = residual.dot(s);
            H(a, b) += v;
            if (a != b) H(b, a) += v;
        }
    return H;
}

Objective ReducedObjective::as_objective() const {
    return [this](const VectorXd& z, VectorXd* grad) { return eval(z, grad); };
}

ExitReport reduced_step(SimState& state, const FrameInput& frame, const SubspaceModel& model,
                        const PotentialContext& base_ctx, const MassMatrix& mass,
                        const SolverConfig& cfg, bool quasi_static) {
    const Mesh& mesh = *base_ctx.mesh;
    PotentialContext ctx = base_ctx;
    ctx.pin_positions = frame.pin_positions;

    ReducedObjective objective;
    objective.model = &model;
    objective.ctx = &ctx;
    objective.mass = &mass;
    objective.dt = cfg.dt;
    if (cfg.runtime_cubature) objective.runtime_cubature = &*cfg.runtime_cubature;

    const VectorXd q_prev = dof_pack(mesh, state.positions);
    if (!quasi_static) {
        const VectorXd v_prev = dof_pack(mesh, state.velocities);
        objective.qbar = q_prev + cfg.dt * v_prev +
                         (cfg.dt * cfg.dt) * frame.external_force.cwiseQuotient(mass.diag);
    }

    VectorXd z = state.z;
    ExitReport report;
    if (cfg.method == SolveMethod::Lbfgs) {
        report = lbfgs_minimize(objective.as_objective(), z, cfg);
    } else {
        report = projective_newton_minimize(
            objective.as_objective(), [&](const VectorXd& zz) { return objective.hessian(zz); }, z,
            cfg);
    }

    const VectorXd q_new = decode(model, z);
    const Eigen::MatrixXd positions_new = dof_unpack(mesh, q_new, frame.pin_positions);
    if (quasi_static) {
        state.velocities.setZero();
    } else {
        state.velocities = (positions_new - state.positions) / cfg.dt;
    }
    state.positions = positions_new;
    state.z = z;
    state.t += cfg.dt;
    return report;
}

}  // namespace lipsub
