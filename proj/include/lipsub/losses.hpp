#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lipsub/mesh.hpp"
#include "lipsub/net.hpp"
#include "lipsub/rng.hpp"
#include "lipsub/tape.hpp"

namespace lipsub {

enum class TrainMode { Supervised, Unsupervised };

struct TrainConfig {
    TrainMode mode = TrainMode::Supervised;
    double lambda_ls = 0.0;
    int order = 2;           // Lipschitz loss order (0, 1, 2)
    double lambda_rep = 1.0; // repulsion weight (unsupervised)
    double sigma = 1.0;      // repulsion length-scale ratio
    int batch_size = 32;     // must be even (pairs)
    double learning_rate = 1e-4;
    double lr_stage2 = 0.0;  // 0 -> inherit learning_rate
    bool cosine_decay = true;
    int stage1_steps = 0;
    int stage2_steps = 0;
    std::uint64_t seed = 0;

    // Cubature used by the order-2 loss during stage 2: either an explicit
    // set (see cubature.hpp) or a fit at the stage boundary.
    double cubature_fraction = 0.15;  // >= 1 requests the full element set
    int cubature_samples = 0;         // 0 -> 10x the target size

    // network architecture (built when train() is handed no model)
    int arch_hidden_layers = 5;
    int arch_hidden_width = 0;  // 0 -> max(64, 4r)
    Activation arch_activation = Activation::Silu;

    void validate() const;
};

struct Dataset {
    Eigen::MatrixXd snapshots;  // frames x n, one free-DOF vector per row
    std::string provenance;

    long frames() const { return snapshots.rows(); }
};

// Per-DOF mean and a shared global standard deviation.
void normalization_from_dataset(const Dataset& dataset, Eigen::VectorXd& shift,
                                Eigen::VectorXd& scale);

// ---- tape builders ------------------------------------------------------------

// Model parameters registered as tape leaves; ids follow parameter_refs order.
struct TapeModel {
    std::vector<std::pair<Var, Var>> dec;  // (W, b) per decoder layer
    std::vector<std::pair<Var, Var>> enc;
    Var scale_c, shift_c;
};
TapeModel register_model(Tape& t, const SubspaceModel& model);

// Decoder forward with optional Jacobian propagation; per-layer nodes are kept
// so second-directional passes can reuse them.
struct DecodeTrace {
    Var q;  // n x 1
    Var J;  // n x r when built with Jacobian
    bool has_jacobian = false;
    std::vector<Var> a, d1, ahat;
    std::vector<Var> d2;                 // lazy
    std::vector<std::vector<Var>> cols;  // lazy Ahat columns
    Var ones_row;
};
DecodeTrace tape_decode(Tape& t, const TapeModel& tm, const SubspaceModel& model, Var z,
                        bool want_jacobian);
// d^2 decode / dz^2 in basis directions (c, d); requires a Jacobian trace.
Var tape_second_directional(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            DecodeTrace& trace, int c, int d);
Var tape_encode(Tape& t, const TapeModel& tm, const SubspaceModel& model, Var q);

// Reduced D^o of the weighted elastic potential at a trace.
Var tape_reduced_derivative(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            DecodeTrace& trace, int order, const Tape::Potential& pot);

Var build_reconstruction_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                              const std::vector<Eigen::VectorXd>& batch, const MassMatrix& mass);

// Potential term over the batch plus the pairwise log-ratio repulsion term;
// consecutive batch entries form the pairs. Component values are reported
// through the optional out-pointers.
Var build_unsupervised_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            const std::vector<Eigen::VectorXd>& z_batch,
                            const Tape::Potential& pot, const MassMatrix& mass,
                            double lambda_rep, double sigma, double* potential_out = nullptr,
                            double* repulsion_out = nullptr);

Var build_lipschitz_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                         const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs,
                         int order, const Tape::Potential& pot);

// ---- value-only wrappers (spec operations) -------------------------------------

double reconstruction_loss(const SubspaceModel& model, const std::vector<Eigen::VectorXd>& batch,
                           const MassMatrix& mass);
double unsupervised_loss(const SubspaceModel& model, const std::vector<Eigen::VectorXd>& z_batch,
                         const Tape::Potential& pot, const MassMatrix& mass, double lambda_rep,
                         double sigma);
double lipschitz_loss(const SubspaceModel& model,
                      const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs,
                      int order, const Tape::Potential& pot);

// ---- pull-back sampling ---------------------------------------------------------

// Supervised: encode uniformly drawn snapshots; unsupervised: standard Gaussian.
Eigen::MatrixXd sample_pullback(const SubspaceModel& model, TrainMode mode,
                                const Dataset* dataset, int count, Rng& rng);

// Shuffles a fresh batch and pairs consecutive samples; coincident pairs are
// resampled.
std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> sample_pullback_pairs(
    const SubspaceModel& model, TrainMode mode, const Dataset* dataset, int pair_count, Rng& rng);

// ---- direct reduced derivatives (no tape; all potential terms allowed) ---------

double reduced_potential(const SubspaceModel& model, const Tape::Potential& pot,
                         const Eigen::VectorXd& z);
Eigen::VectorXd reduced_potential_gradient(const SubspaceModel& model, const Tape::Potential& pot,
                                           const Eigen::VectorXd& z);
Eigen::MatrixXd reduced_potential_hessian(const SubspaceModel& model, const Tape::Potential& pot,
                                          const Eigen::VectorXd& z);

}  // namespace lipsub
