#pragma once

#include <map>
#include <string>
#include <vector>

#include "lipsub/cubature.hpp"
#include "lipsub/losses.hpp"
#include "lipsub/reduced_solver.hpp"
#include "lipsub/scenario.hpp"

namespace lipsub {

// Order-statistics Lipschitz estimate: max over all unordered sample pairs of
// |D^o P(z_i) - D^o P(z_j)|_F / |z_i - z_j|. Exact duplicates are dropped.
double estimate_lipschitz(const SubspaceModel& model, const Tape::Potential& pot, int order,
                          const Eigen::MatrixXd& z_samples);

// Samples the pull-back distribution itself (encoder on snapshots for
// supervised models, standard Gaussian otherwise). Full assembly unless a
// cubature set is passed.
double estimate_lipschitz(const SubspaceModel& model, const PotentialContext& ctx, TrainMode mode,
                          const Dataset* dataset, int order, int sample_count, std::uint64_t seed,
                          const CubatureSet* cubature = nullptr);

struct ProjectionStat {
    double vertex_mean_error = 0.0;   // mean over free vertices of point distance
    double m_norm_error = 0.0;        // |decode(z*) - q|_M
    double init_m_norm_error = 0.0;   // |decode(encode(q)) - q|_M
    bool converged = false;
    ExitReport exit;
};

// Closest-point projection onto the configuration manifold, initialized at the
// encoder image. Non-converged states are flagged but still reported.
std::vector<ProjectionStat> projection_error(const SubspaceModel& model, const Mesh& mesh,
                                             const MassMatrix& mass,
                                             const std::vector<Eigen::VectorXd>& states,
                                             const SolverConfig& cfg);

struct BenchCell {
    std::string variant;
    std::string method;
    double epsilon = 0.0;
    int steps = 0;
    double exit_pct[4] = {0, 0, 0, 0};
    double mean_exit_grad_inf = 0.0;
    double mean_exit_grad_inf_I = 0.0;  // over code-I steps only
    double mean_iterations = 0.0;
    double mean_step_ms = 0.0;
    std::vector<ExitReport> reports;
};

struct VariantSummary {
    std::string variant;
    double lip[3] = {0, 0, 0};
    int cubature_S = 0;
};

struct BenchRecord {
    std::string scenario;
    int n = 0, elements = 0, r = 0;
    std::vector<BenchCell> cells;
    std::vector<VariantSummary> variants;
};

struct BenchOptions {
    std::vector<double> epsilons{1e-4, 1e-5, 1e-6};
    std::vector<SolveMethod> methods{SolveMethod::Lbfgs};
    int steps = 200;
    std::uint64_t replay_seed = 7;
    int lipschitz_samples = 64;
    std::uint64_t lipschitz_seed = 11;
    SolverConfig solver;  // epsilon/method overridden per cell
};

// Replays the identical frame sequence through every variant x method x
// epsilon cell and collects exit statistics plus per-variant Lipschitz
// constants.
BenchRecord run_benchmark(const Scenario& scenario,
                          const std::map<std::string, SubspaceModel>& models,
                          const BenchOptions& options, TrainMode mode, const Dataset* testset);

// Deterministic CSVs; timing goes to its own file because wall-clock content
// cannot be reproduced byte-for-byte.
extern const char* kExitTableHeader;
extern const char* kSummaryHeader;
extern const char* kTimingHeader;
void write_exit_table_csv(const BenchRecord& record, const std::string& path);
void write_summary_csv(const BenchRecord& record, const std::string& path);
void write_timing_csv(const BenchRecord& record, const std::string& path);

}  // namespace lipsub
