#pragma once

#include <optional>
#include <ostream>

#include "lipsub/cubature.hpp"
#include "lipsub/losses.hpp"

namespace lipsub {

struct MetricsRow {
    int step = 0;
    int stage = 1;
    double loss = 0.0;
    double loss_c = 0.0;
    double loss_rec = 0.0;
    double loss_pot = 0.0;
    double loss_rep = 0.0;
    double loss_ls = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainOutput {
    SubspaceModel stage1;  // checkpoint at the stage boundary
    SubspaceModel model;   // final parameters
    CubatureSet cubature;  // set used by the stage-2 order-2 loss
    std::vector<MetricsRow> metrics;
    bool diverged = false;
};

// Builds the architecture from the config and fixes the dataset normalization
// (per-DOF mean shift, global-std scale; rest configuration for unsupervised).
SubspaceModel make_model_for_training(const TrainConfig& cfg, int r, const Mesh& mesh,
                                      const Dataset* dataset);

// Stage 1 minimizes the construction loss alone; the cubature is fitted from
// the stage-1 model; stage 2 adds lambda_ls times the Lipschitz loss. Metrics
// rows stream to `metrics_out` as JSONL when given. On divergence the last
// good parameters are returned with `diverged` set.
TrainOutput train(SubspaceModel model, const TrainConfig& cfg, const Dataset* dataset,
                  const PotentialContext& ctx, const MassMatrix& mass,
                  const std::optional<CubatureSet>& cubature = std::nullopt,
                  std::ostream* metrics_out = nullptr, bool disable_ls_path = false);

struct AdamState {
    std::vector<Eigen::VectorXd> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const std::vector<ParamRef>& params);
    void step(std::vector<ParamRef>& params, const std::vector<Eigen::VectorXd>& grads, double lr);
};

}  // namespace lipsub
