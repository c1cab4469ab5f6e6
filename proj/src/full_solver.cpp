#include "lipsub/full_solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ExitReport full_step(SimState& state, const FrameInput& frame, const PotentialContext& base_ctx,
                     const MassMatrix& mass, const SolverConfig& cfg, bool quasi_static) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const Mesh& mesh = *base_ctx.mesh;
    PotentialContext ctx = base_ctx;
    ctx.pin_positions = frame.pin_positions;
    const int n = mesh.num_dofs();
    const double inv_dt2 = 1.0 / (cfg.dt * cfg.dt);

    const VectorXd q_prev = dof_pack(mesh, state.positions);
    VectorXd qbar;
    if (!quasi_static) {
        const VectorXd v_prev = dof_pack(mesh, state.velocities);
        qbar = q_prev + cfg.dt * v_prev + (cfg.dt * cfg.dt) * frame.external_force.cwiseQuotient(mass.diag);
    }

    auto energy = [&](const VectorXd& q, VectorXd* grad) {
        const AssembledPotential ap = assemble(ctx, q, false);
        double value = ap.value;
        if (grad) *grad = ap.gradient;
        if (!quasi_static) {
            const VectorXd diff = q - qbar;
            value += 0.5 * inv_dt2 * (mass.diag.array() * diff.array().square()).sum();
            if (grad) *grad += inv_dt2 * mass.diag.cwiseProduct(diff);
        }
        return value;
    };

    VectorXd q = q_prev;
    VectorXd g(n);
    double f = energy(q, &g);

    ExitReport report;
    auto finish = [&](ExitReport r) {
        const Eigen::MatrixXd positions_new = dof_unpack(mesh, q, frame.pin_positions);
        if (quasi_static)
            state.velocities.setZero();
        else
            state.velocities = (positions_new - state.positions) / cfg.dt;
        state.positions = positions_new;
        state.t += cfg.dt;
        r.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count();
        return r;
    };

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        report.iterations = iter;
        report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
        if (report.final_grad_inf_norm < cfg.epsilon) {
            report.code = ExitReport::Converged;
            return finish(report);
        }

        AssembledPotential ap = assemble(ctx, q, true, nullptr, {}, /*project_elements=*/true);
        Eigen::SparseMatrix<double> H = *ap.hessian;
        if (!quasi_static) {
            for (int i = 0; i < n; ++i) H.coeffRef(i, i) += inv_dt2 * mass.diag[i];
        } else {
            // Tiny Tikhonov term keeps the projected system factorizable when
            // an unloaded direction has exactly zero stiffness.
            for (int i = 0; i < n; ++i) H.coeffRef(i, i) += 1e-12;
        }
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H);
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("full solver: factorization failed");
        const VectorXd d = solver.solve(-g);
        if (!d.allFinite()) throw std::runtime_error("full solver: singular system");

        const double gtd = g.dot(d);
        if (!(gtd < 0.0)) {
            report.code = ExitReport::Saddle;
            return finish(report);
        }

        double alpha = 1.0;
        bool accepted = false;
        VectorXd trial;
        for (int ls = 0; ls < cfg.max_linesearch; ++ls) {
            trial = q + alpha * d;
            const double ft = energy(trial, nullptr);
            if (std::isfinite(ft) && ft <= f + 1e-4 * alpha * gtd) {
                accepted = true;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            report.code = ExitReport::LinesearchCap;
            return finish(report);
        }
        q = trial;
        f = energy(q, &g);
    }
    report.iterations = cfg.max_iters;
    report.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
    report.code = report.final_grad_inf_norm < cfg.epsilon ? ExitReport::Converged
                                                           : ExitReport::IterationCap;
    return finish(report);
}

DatasetGenResult generate_dataset(const Scenario& scenario, const SolverConfig& cfg,
                                  std::uint64_t seed) {
    const Mesh& mesh = scenario.mesh;
    const PotentialContext ctx = scenario.context();
    const MassMatrix mass = lump_mass(mesh, scenario.material);

    DatasetGenResult result;
    std::vector<VectorXd> train_rows, test_rows;
    const int test_start =
        scenario.episodes - static_cast<int>(std::ceil(scenario.test_fraction * scenario.episodes));

    for (int ep = 0; ep < scenario.episodes; ++ep) {
        EpisodeLog log;
        log.seed = seed + static_cast<std::uint64_t>(ep);
        Rng rng = substream(seed, 1000 + static_cast<std::uint64_t>(ep));
        std::vector<Interaction> interactions{sample_interaction(scenario, scenario.steps_per_episode, rng)};

        SimState state = rest_state(mesh);
        std::vector<VectorXd> rows;
        bool dropped = false;
        for (int step = 0; step < scenario.steps_per_episode; ++step) {
            const FrameInput frame = frame_at(scenario, mass, interactions, step, state.t + scenario.dt);
            try {
                full_step(state, frame, ctx, mass, cfg, scenario.quasi_static);
            } catch (const std::exception&) {
                dropped = true;
                break;
            }
            rows.push_back(dof_pack(mesh, state.positions));
        }
        log.steps = static_cast<int>(rows.size());
        log.dropped = dropped;
        result.episodes.push_back(log);
        if (dropped) continue;
        auto& sink = ep >= test_start ? test_rows : train_rows;
        for (auto& r : rows) sink.push_back(std::move(r));
    }

    auto pack = [&](const std::vector<VectorXd>& rows) {
        Dataset d;
        d.provenance = scenario.name + ":" + std::to_string(seed);
        d.snapshots.resize(static_cast<long>(rows.size()), mesh.num_dofs());
        for (std::size_t i = 0; i < rows.size(); ++i)
            d.snapshots.row(static_cast<long>(i)) = rows[i].transpose();
        return d;
    };
    result.train = pack(train_rows);
    result.test = pack(test_rows);
    return result;
}

}  // namespace lipsub
