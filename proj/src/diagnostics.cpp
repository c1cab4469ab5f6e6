#include "lipsub/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double estimate_lipschitz(const SubspaceModel& model, const Tape::Potential& pot, int order,
                          const Eigen::MatrixXd& z_samples) {
    if (z_samples.cols() < 2)
        throw std::invalid_argument("estimate_lipschitz: need at least two samples");
    // Drop exact duplicates.
    std::vector<long> keep;
    for (long i = 0; i < z_samples.cols(); ++i) {
        bool dup = false;
        for (long j : keep)
            if ((z_samples.col(i) - z_samples.col(j)).norm() == 0.0) {
                dup = true;
                break;
            }
        if (!dup) keep.push_back(i);
    }

    std::vector<MatrixXd> derivs;
    derivs.reserve(keep.size());
    for (long i : keep) {
        const VectorXd z = z_samples.col(i);
        switch (order) {
            case 0: {
                MatrixXd m(1, 1);
                m(0, 0) = reduced_potential(model, pot, z);
                derivs.push_back(std::move(m));
                break;
            }
            case 1: derivs.push_back(reduced_potential_gradient(model, pot, z)); break;
            case 2: derivs.push_back(reduced_potential_hessian(model, pot, z)); break;
            default: throw std::invalid_argument("estimate_lipschitz: order must be 0, 1 or 2");
        }
    }

    double best = 0.0;
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = i + 1; j < keep.size(); ++j) {
            const double dz = (z_samples.col(keep[i]) - z_samples.col(keep[j])).norm();
            best = std::max(best, (derivs[i] - derivs[j]).norm() / dz);
        }
    return best;
}

double estimate_lipschitz(const SubspaceModel& model, const PotentialContext& ctx, TrainMode mode,
                          const Dataset* dataset, int order, int sample_count, std::uint64_t seed,
                          const CubatureSet* cubature) {
    if (sample_count < 2) throw std::invalid_argument("estimate_lipschitz: sample_count >= 2");
    Rng rng = substream(seed, 11);
    const MatrixXd Z = sample_pullback(model, mode, dataset, sample_count, rng);
    Tape::Potential pot{&ctx, ElementSubset::full(ctx.mesh->num_elements()), PotentialTerms{}};
    if (cubature) {
        pot.subset = cubature->to_subset();
        pot.terms = PotentialTerms{true, false, false};
    }
    return estimate_lipschitz(model, pot, order, Z);
}

std::vector<ProjectionStat> projection_error(const SubspaceModel& model, const Mesh& mesh,
                                             const MassMatrix& mass,
                                             const std::vector<Eigen::VectorXd>& states,
                                             const SolverConfig& cfg) {
    if (!model.has_encoder())
        throw std::runtime_error("projection_error: needs a supervised model (encoder)");
    std::vector<ProjectionStat> stats;
    stats.reserve(states.size());
    for (const VectorXd& q : states) {
        const Objective obj = [&](const VectorXd& z, VectorXd* grad) {
            const VectorXd diff = decode(model, z) - q;
            if (grad)
                *grad = decode_jacobian(model, z).transpose() * mass.diag.cwiseProduct(diff);
            return 0.5 * (mass.diag.array() * diff.array().square()).sum();
        };
        ProjectionStat st;
        VectorXd z = encode(model, q);
        {
            const VectorXd diff = decode(model, z) - q;
            st.init_m_norm_error = std::sqrt((mass.diag.array() * diff.array().square()).sum());
        }
        st.exit = lbfgs_minimize(obj, z, cfg);
        st.converged = st.exit.code == ExitReport::Converged;
        const VectorXd diff = decode(model, z) - q;
        st.m_norm_error = std::sqrt((mass.diag.array() * diff.array().square()).sum());
        double sum = 0.0;
        int count = 0;
        for (int v = 0; v < mesh.num_vertices(); ++v) {
            const int f = mesh.free_index[v];
            if (f < 0) continue;
            sum += diff.segment(f * mesh.dim, mesh.dim).norm();
            ++count;
        }
        st.vertex_mean_error = count > 0 ? sum / count : 0.0;
        stats.push_back(st);
    }
    return stats;
}

BenchRecord run_benchmark(const Scenario& scenario,
                          const std::map<std::string, SubspaceModel>& models,
                          const BenchOptions& options, TrainMode mode, const Dataset* testset) {
    const Mesh& mesh = scenario.mesh;
    const PotentialContext ctx = scenario.context();
    const MassMatrix mass = lump_mass(mesh, scenario.material);

    BenchRecord record;
    record.scenario = scenario.name;
    record.n = mesh.num_dofs();
    record.elements = mesh.num_elements();

    for (const auto& [name, model] : models) {
        if (model.n != mesh.num_dofs())
            throw std::invalid_argument("benchmark: checkpoint '" + name + "' has n = " +
                                        std::to_string(model.n) + " but the scenario needs " +
                                        std::to_string(mesh.num_dofs()));
        record.r = model.r;
    }

    // One identical frame sequence for every cell.
    Rng replay_rng = substream(options.replay_seed, 7);
    const std::vector<Interaction> interactions =
        replay_interactions(scenario, options.steps, replay_rng);

    for (const auto& [name, model] : models) {
        for (SolveMethod method : options.methods) {
            for (double eps : options.epsilons) {
                SolverConfig cfg = options.solver;
                cfg.dt = scenario.dt;
                cfg.epsilon = eps;
                cfg.method = method;

                SimState state = rest_state(mesh, model.r);
                if (model.has_encoder())
                    state.z = encode(model, dof_pack(mesh, state.positions));

                BenchCell cell;
                cell.variant = name;
                cell.method = method == SolveMethod::Lbfgs ? "lbfgs" : "projective_newton";
                cell.epsilon = eps;
                cell.steps = options.steps;
                double grad_sum = 0.0, grad_sum_I = 0.0, iter_sum = 0.0, ms_sum = 0.0;
                int count_I = 0;
                for (int step = 0; step < options.steps; ++step) {
                    const FrameInput frame =
                        frame_at(scenario, mass, interactions, step, state.t + scenario.dt);
                    const ExitReport rep =
                        reduced_step(state, frame, model, ctx, mass, cfg, scenario.quasi_static);
                    cell.reports.push_back(rep);
                    cell.exit_pct[rep.code - 1] += 1.0;
                    grad_sum += rep.final_grad_inf_norm;
                    iter_sum += rep.iterations;
                    ms_sum += rep.wall_time_ms;
                    if (rep.code == ExitReport::Converged) {
                        grad_sum_I += rep.final_grad_inf_norm;
                        ++count_I;
                    }
                }
                for (double& p : cell.exit_pct) p *= 100.0 / options.steps;
                cell.mean_exit_grad_inf = grad_sum / options.steps;
                cell.mean_exit_grad_inf_I = count_I > 0 ? grad_sum_I / count_I : 0.0;
                cell.mean_iterations = iter_sum / options.steps;
                cell.mean_step_ms = ms_sum / options.steps;
                record.cells.push_back(std::move(cell));
            }
        }

        VariantSummary vs;
        vs.variant = name;
        for (int order = 0; order <= 2; ++order)
            vs.lip[order] = estimate_lipschitz(model, ctx, mode, testset, order,
                                               options.lipschitz_samples, options.lipschitz_seed);
        record.variants.push_back(std::move(vs));
    }
    return record;
}

const char* kExitTableHeader =
    "scenario,variant,method,epsilon,steps,exit_I_pct,exit_II_pct,exit_III_pct,exit_IV_pct,"
    "mean_exit_grad_inf,mean_exit_grad_inf_I,mean_iterations";
const char* kSummaryHeader = "scenario,variant,n,elements,r,lip_order0,lip_order1,lip_order2";
const char* kTimingHeader = "scenario,variant,method,epsilon,mean_step_ms";

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("csv: cannot write '" + path + "'");
    return out;
}

}  // namespace

void write_exit_table_csv(const BenchRecord& record, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << kExitTableHeader << "\n";
    char buf[512];
    for (const BenchCell& c : record.cells) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%g,%d,%.4f,%.4f,%.4f,%.4f,%.6e,%.6e,%.4f",
                      record.scenario.c_str(), c.variant.c_str(), c.method.c_str(), c.epsilon,
                      c.steps, c.exit_pct[0], c.exit_pct[1], c.exit_pct[2], c.exit_pct[3],
                      c.mean_exit_grad_inf, c.mean_exit_grad_inf_I, c.mean_iterations);
        out << buf << "\n";
    }
}

void write_summary_csv(const BenchRecord& record, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << kSummaryHeader << "\n";
    char buf[512];
    for (const VariantSummary& v : record.variants) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%d,%.6e,%.6e,%.6e", record.scenario.c_str(),
                      v.variant.c_str(), record.n, record.elements, record.r, v.lip[0], v.lip[1],
                      v.lip[2]);
        out << buf << "\n";
    }
}

void write_timing_csv(const BenchRecord& record, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << kTimingHeader << "\n";
    char buf[512];
    for (const BenchCell& c : record.cells) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%g,%.3f", record.scenario.c_str(),
                      c.variant.c_str(), c.method.c_str(), c.epsilon, c.mean_step_ms);
        out << buf << "\n";
    }
}

}  // namespace lipsub
