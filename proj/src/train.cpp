#include "lipsub/train.hpp"

#include <chrono>
#include <cmath>

#include <json.hpp>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void AdamState::init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
        m.push_back(VectorXd::Zero(p.size()));
        v.push_back(VectorXd::Zero(p.size()));
    }
    t = 0;
}

void AdamState::step(std::vector<ParamRef>& params, const std::vector<Eigen::VectorXd>& grads,
                     double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Eigen::Map<VectorXd> theta(params[i].data, params[i].size());
        const VectorXd& g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
        theta -= (lr / bc1) * m[i].cwiseQuotient((v[i] / bc2).cwiseSqrt().array().max(0.0).matrix() +
                                                 VectorXd::Constant(g.size(), eps));
    }
}

SubspaceModel make_model_for_training(const TrainConfig& cfg, int r, const Mesh& mesh,
                                      const Dataset* dataset) {
    cfg.validate();
    Rng rng = substream(cfg.seed, 0);
    SubspaceModel model = make_mlp_model(r, mesh.num_dofs(), cfg.arch_hidden_layers,
                                         cfg.arch_hidden_width, cfg.arch_activation,
                                         cfg.mode == TrainMode::Supervised, rng);
    if (cfg.mode == TrainMode::Supervised) {
        if (!dataset || dataset->frames() == 0)
            throw std::invalid_argument("train: supervised mode needs a nonempty dataset");
        VectorXd shift, scale;
        normalization_from_dataset(*dataset, shift, scale);
        set_normalization(model, shift, scale);
    } else {
        // Decode of the zero-weight network lands on the rest configuration.
        set_normalization(model, dof_pack(mesh, mesh.vertices), VectorXd::Ones(mesh.num_dofs()));
    }
    return model;
}

namespace {

std::vector<VectorXd> draw_snapshot_batch(const Dataset& dataset, int count, Rng& rng) {
    std::vector<VectorXd> batch;
    batch.reserve(count);
    for (int k = 0; k < count; ++k) {
        const auto idx = randint(rng, static_cast<std::uint64_t>(dataset.frames()));
        batch.push_back(dataset.snapshots.row(static_cast<long>(idx)).transpose());
    }
    return batch;
}

std::vector<VectorXd> draw_gaussian_batch(const SubspaceModel& model, int count, Rng& rng) {
    // Drawn as pairs so the repulsion term never sees a coincident pair.
    auto pairs = sample_pullback_pairs(model, TrainMode::Unsupervised, nullptr, count / 2, rng);
    std::vector<VectorXd> batch;
    batch.reserve(count);
    for (auto& [a, b] : pairs) {
        batch.push_back(std::move(a));
        batch.push_back(std::move(b));
    }
    return batch;
}

struct StepLosses {
    double total = 0.0, c = 0.0, rec = 0.0, pot = 0.0, rep = 0.0, ls = 0.0;
};

void write_metrics(std::ostream* out, const MetricsRow& row) {
    if (!out) return;
    nlohmann::json j = {{"step", row.step},     {"stage", row.stage},   {"loss", row.loss},
                        {"loss_c", row.loss_c}, {"loss_rec", row.loss_rec},
                        {"loss_pot", row.loss_pot}, {"loss_rep", row.loss_rep},
                        {"loss_ls", row.loss_ls},   {"lr", row.lr},
                        {"wall_ms", row.wall_ms}};
    (*out) << j.dump() << "\n";
}

}  // namespace

TrainOutput train(SubspaceModel model, const TrainConfig& cfg, const Dataset* dataset,
                  const PotentialContext& ctx, const MassMatrix& mass,
                  const std::optional<CubatureSet>& cubature, std::ostream* metrics_out,
                  bool disable_ls_path) {
    cfg.validate();
    model.validate();
    if (cfg.mode == TrainMode::Supervised && (!dataset || dataset->frames() == 0))
        throw std::invalid_argument("train: supervised mode needs a nonempty dataset");

    Rng rng_stage1 = substream(cfg.seed, 1);
    Rng rng_stage2 = substream(cfg.seed, 2);
    Rng rng_ls = substream(cfg.seed, 3);
    Rng rng_cub = substream(cfg.seed, 4);

    auto params = parameter_refs(model);
    AdamState adam;
    adam.init(params);

    const PotentialTerms all_terms{};
    const PotentialTerms elastic_only{true, false, false};
    const ElementSubset full_set = ElementSubset::full(ctx.mesh->num_elements());

    TrainOutput out;
    SubspaceModel last_good = model;
    bool diverged = false;

    auto run_stage = [&](int stage, int steps, double lr0, Rng& rng,
                         const Tape::Potential* ls_pot) {
        for (int step = 0; step < steps && !diverged; ++step) {
            const auto t0 = std::chrono::steady_clock::now();
            const double lr =
                cfg.cosine_decay
                    ? lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / steps))
                    : lr0;

            StepLosses losses;
            try {
                Tape tape;
                TapeModel tm = register_model(tape, model);
                Var loss_c;
                if (cfg.mode == TrainMode::Supervised) {
                    const auto batch = draw_snapshot_batch(*dataset, cfg.batch_size, rng);
                    loss_c = build_reconstruction_loss(tape, tm, model, batch, mass);
                    losses.rec = tape.scalar(loss_c);
                } else {
                    const auto zbatch = draw_gaussian_batch(model, cfg.batch_size, rng);
                    Tape::Potential pot{&ctx, full_set, all_terms};
                    loss_c = build_unsupervised_loss(tape, tm, model, zbatch, pot, mass,
                                                     cfg.lambda_rep, cfg.sigma, &losses.pot,
                                                     &losses.rep);
                }
                losses.c = tape.scalar(loss_c);

                Var loss = loss_c;
                if (ls_pot && !disable_ls_path) {
                    const auto pairs = sample_pullback_pairs(model, cfg.mode, dataset,
                                                             cfg.batch_size / 2, rng_ls);
                    if (cfg.lambda_ls > 0.0) {
                        Var loss_ls = build_lipschitz_loss(tape, tm, model, pairs, cfg.order, *ls_pot);
                        losses.ls = tape.scalar(loss_ls);
                        loss = tape.add(loss_c, tape.scale(loss_ls, cfg.lambda_ls));
                    } else {
                        // Logged but kept off the training tape so the update
                        // path is identical to a build without the term.
                        losses.ls = lipschitz_loss(model, pairs, cfg.order, *ls_pot);
                    }
                }
                losses.total = tape.scalar(loss);
                tape.backward(loss);

                std::vector<VectorXd> grads;
                grads.reserve(params.size());
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const MatrixXd g =
                        tape.param_gradient(static_cast<int>(i), params[i].rows, params[i].cols);
                    grads.push_back(Eigen::Map<const VectorXd>(g.data(), g.size()));
                }
                adam.step(params, grads, lr);
            } catch (const std::exception&) {
                diverged = true;
                model = last_good;
                params = parameter_refs(model);
                break;
            }

            if (step % 50 == 0) last_good = model;

            MetricsRow row;
            row.step = step;
            row.stage = stage;
            row.loss = losses.total;
            row.loss_c = losses.c;
            row.loss_rec = losses.rec;
            row.loss_pot = losses.pot;
            row.loss_rep = losses.rep;
            row.loss_ls = losses.ls;
            row.lr = lr;
            row.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0).count();
            write_metrics(metrics_out, row);
            out.metrics.push_back(row);
        }
    };

    run_stage(1, cfg.stage1_steps, cfg.learning_rate, rng_stage1, nullptr);
    out.stage1 = model;

    // Cubature fit against the stage-1 model.
    if (cubature) {
        out.cubature = *cubature;
    } else if (cfg.order == 2 && cfg.cubature_fraction < 1.0 && !diverged) {
        const int target =
            std::max(1, static_cast<int>(cfg.cubature_fraction * ctx.mesh->num_elements()));
        out.cubature =
            fit_cubature(model, ctx, cfg.mode, dataset, target, cfg.cubature_samples, rng_cub);
    } else {
        out.cubature.element_ids = full_set.ids;
        out.cubature.weights = full_set.weights;
        out.cubature.fit_error = 0.0;
    }

    if (!diverged && cfg.stage2_steps > 0) {
        Tape::Potential ls_pot{&ctx, out.cubature.to_subset(), elastic_only};
        adam.init(params);  // fresh optimizer state for the combined objective
        const double lr2 = cfg.lr_stage2 > 0.0 ? cfg.lr_stage2 : cfg.learning_rate;
        run_stage(2, cfg.stage2_steps, lr2, rng_stage2, &ls_pot);
    }

    out.model = model;
    out.diverged = diverged;
    return out;
}

}  // namespace lipsub
