#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "lipsub/losses.hpp"
#include "lipsub/net.hpp"

namespace lipsub {

struct CubatureSet {
    std::vector<int> element_ids;  // sorted unique
    Eigen::VectorXd weights;       // matching, non-negative
    double fit_error = 0.0;        // relative training residual
    std::string provenance;        // hash of the model the fit used

    int size() const { return static_cast<int>(element_ids.size()); }
    ElementSubset to_subset() const {
        ElementSubset s;
        s.ids = element_ids;
        s.weights = weights;
        return s;
    }
    void validate() const;
};

// Non-negative least squares (Lawson-Hanson). Returns x >= 0 minimizing |Ax-b|.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter = 0);

// Training system for cubature weights: one column block per element stacking
// the per-sample reduced element gradients J^T dPe/dq, each sample block
// normalized by the norm of its full reduced gradient; b stacks the normalized
// full reduced gradients, so A * 1 = b. Samples whose full gradient norm falls
// below 1e-12 are skipped (their count is reported).
struct CubatureSystem {
    Eigen::MatrixXd A;  // (kept_samples * r) x E
    Eigen::VectorXd b;
    int skipped_samples = 0;
};
CubatureSystem build_training_matrix(const SubspaceModel& model, const PotentialContext& ctx,
                                     const Eigen::MatrixXd& z_samples);

// Greedy selection: add the inactive column best correlated with the residual,
// re-solve NNLS over the active set, stop at target_S elements or when the
// relative residual drops below target_error.
CubatureSet select_cubatures(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int target_S,
                             double target_error = 0.0);

// Mean relative errors of the cubature approximation against full assembly on
// held-out subspace samples.
struct CubatureErrors {
    double gradient = 0.0;
    double hessian = 0.0;
    double lipschitz = 0.0;  // per-pair order-2 loss terms, consecutive pairs
};
CubatureErrors cubature_error(const CubatureSet& cubset, const SubspaceModel& model,
                              const PotentialContext& ctx, const Eigen::MatrixXd& heldout_z);

// Convenience: sample, fit and validate a cubature for a stage-1 model.
CubatureSet fit_cubature(const SubspaceModel& model, const PotentialContext& ctx, TrainMode mode,
                         const Dataset* dataset, int target_S, int sample_count, Rng& rng);

void save_cubature(const CubatureSet& set, const std::string& path);
CubatureSet load_cubature(const std::string& path);

}  // namespace lipsub
