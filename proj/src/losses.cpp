#include "lipsub/losses.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lipsub/energy.hpp"

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainConfig::validate() const {
    if (lambda_ls < 0.0) throw std::invalid_argument("train config: lambda_ls must be >= 0");
    if (order < 0 || order > 2) throw std::invalid_argument("train config: order must be 0, 1 or 2");
    if (batch_size <= 0 || batch_size % 2 != 0)
        throw std::invalid_argument("train config: batch_size must be positive and even");
    if (!(sigma > 0.0)) throw std::invalid_argument("train config: sigma must be > 0");
    if (stage1_steps < 0 || stage2_steps < 0)
        throw std::invalid_argument("train config: step counts must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
}

void normalization_from_dataset(const Dataset& dataset, Eigen::VectorXd& shift,
                                Eigen::VectorXd& scale) {
    if (dataset.frames() == 0) throw std::invalid_argument("normalization: empty dataset");
    shift = dataset.snapshots.colwise().mean();
    const MatrixXd centered = dataset.snapshots.rowwise() - shift.transpose();
    double var = centered.array().square().sum() / static_cast<double>(centered.size());
    const double std = std::max(std::sqrt(var), 1e-12);
    scale = VectorXd::Constant(dataset.snapshots.cols(), std);
}

TapeModel register_model(Tape& t, const SubspaceModel& model) {
    TapeModel tm;
    int id = 0;
    for (const Layer& l : model.decoder) {
        Var W = t.param(id++, l.W);
        Var b = t.param(id++, l.b);
        tm.dec.emplace_back(W, b);
    }
    for (const Layer& l : model.encoder) {
        Var W = t.param(id++, l.W);
        Var b = t.param(id++, l.b);
        tm.enc.emplace_back(W, b);
    }
    tm.scale_c = t.constant(model.norm_scale);
    tm.shift_c = t.constant(model.norm_shift);
    return tm;
}

DecodeTrace tape_decode(Tape& t, const TapeModel& tm, const SubspaceModel& model, Var z,
                        bool want_jacobian) {
    DecodeTrace trace;
    trace.has_jacobian = want_jacobian;
    Var y = z;
    Var G;
    if (want_jacobian) {
        trace.ones_row = t.constant(MatrixXd::Ones(1, model.r));
        G = t.constant(MatrixXd::Identity(model.r, model.r));
    }
    for (std::size_t l = 0; l < model.decoder.size(); ++l) {
        const Activation act = model.decoder[l].act;
        Var a = t.add(t.matmul(tm.dec[l].first, y), tm.dec[l].second);
        trace.a.push_back(a);
        y = t.act_map(a, act, 0);
        if (want_jacobian) {
            Var ahat = t.matmul(tm.dec[l].first, G);
            trace.ahat.push_back(ahat);
            Var d1 = t.act_map(a, act, 1);
            trace.d1.push_back(d1);
            G = t.hadamard(ahat, t.matmul(d1, trace.ones_row));
        }
    }
    trace.q = t.add(t.hadamard(y, tm.scale_c), tm.shift_c);
    if (want_jacobian) {
        trace.J = t.hadamard(G, t.matmul(tm.scale_c, trace.ones_row));
        trace.cols.resize(model.decoder.size());
        trace.d2.resize(model.decoder.size(), Var{});
    }
    return trace;
}

namespace {

Var trace_col(Tape& t, DecodeTrace& trace, std::size_t layer, int c) {
    auto& cache = trace.cols[layer];
    if (cache.empty()) cache.assign(t.value(trace.ahat[layer]).cols(), Var{});
    if (!cache[c].valid()) cache[c] = t.column(trace.ahat[layer], c);
    return cache[c];
}

Var trace_d2(Tape& t, const SubspaceModel& model, DecodeTrace& trace, std::size_t layer) {
    if (!trace.d2[layer].valid())
        trace.d2[layer] = t.act_map(trace.a[layer], model.decoder[layer].act, 2);
    return trace.d2[layer];
}

}  // namespace

Var tape_second_directional(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            DecodeTrace& trace, int c, int d) {
    if (!trace.has_jacobian)
        throw std::invalid_argument("tape_second_directional: trace lacks the Jacobian pass");
    Var s = t.constant(MatrixXd::Zero(model.r, 1));
    for (std::size_t l = 0; l < model.decoder.size(); ++l) {
        Var pc = trace_col(t, trace, l, c);
        Var pd = trace_col(t, trace, l, d);
        Var curvature = t.hadamard(trace_d2(t, model, trace, l), t.hadamard(pc, pd));
        Var carried = t.hadamard(trace.d1[l], t.matmul(tm.dec[l].first, s));
        s = t.add(curvature, carried);
    }
    return t.hadamard(s, tm.scale_c);
}

Var tape_encode(Tape& t, const TapeModel& tm, const SubspaceModel& model, Var q) {
    if (!model.has_encoder()) throw std::runtime_error("tape_encode: model has no encoder");
    // (q - shift) / scale, expressed with the constant reciprocal.
    Var x = t.hadamard(t.sub(q, tm.shift_c), t.constant(model.norm_scale.cwiseInverse()));
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        Var a = t.add(t.matmul(tm.enc[l].first, x), tm.enc[l].second);
        x = t.act_map(a, model.encoder[l].act, 0);
    }
    return x;
}

Var tape_reduced_derivative(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            DecodeTrace& trace, int order, const Tape::Potential& pot) {
    switch (order) {
        case 0: return t.potential_value(trace.q, pot);
        case 1: return t.matmul_tn(trace.J, t.potential_gradient(trace.q, pot));
        case 2: {
            Var hj = t.potential_hessian_apply(trace.q, trace.J, pot);
            Var first = t.matmul_tn(trace.J, hj);
            Var g = t.potential_gradient(trace.q, pot);
            std::vector<Var> entries;
            for (int a = 0; a < model.r; ++a)
                for (int b = a; b < model.r; ++b)
                    entries.push_back(t.dot(g, tape_second_directional(t, tm, model, trace, a, b)));
            return t.add(first, t.symmetric_from_entries(entries, model.r));
        }
    }
    throw std::invalid_argument("reduced derivative: order must be 0, 1 or 2");
}

Var build_reconstruction_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                              const std::vector<Eigen::VectorXd>& batch, const MassMatrix& mass) {
    if (!model.has_encoder())
        throw std::runtime_error("reconstruction loss: model has no encoder");
    if (batch.empty()) throw std::invalid_argument("reconstruction loss: empty batch");
    std::vector<Var> terms;
    for (const VectorXd& q : batch) {
        Var qc = t.constant(q);
        Var z = tape_encode(t, tm, model, qc);
        DecodeTrace trace = tape_decode(t, tm, model, z, false);
        Var diff = t.sub(trace.q, qc);
        terms.push_back(t.weighted_sqnorm(diff, mass.diag));
    }
    return t.scale(t.sum(terms), 1.0 / static_cast<double>(batch.size()));
}

Var build_unsupervised_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                            const std::vector<Eigen::VectorXd>& z_batch,
                            const Tape::Potential& pot, const MassMatrix& mass,
                            double lambda_rep, double sigma, double* potential_out,
                            double* repulsion_out) {
    if (z_batch.size() < 2 || z_batch.size() % 2 != 0)
        throw std::invalid_argument("unsupervised loss: batch size must be even and >= 2");
    std::vector<Var> pots;
    std::vector<Var> qs;
    for (const VectorXd& z : z_batch) {
        DecodeTrace trace = tape_decode(t, tm, model, t.constant(z), false);
        qs.push_back(trace.q);
        pots.push_back(t.potential_value(trace.q, pot));
    }
    Var potential = t.scale(t.sum(pots), 1.0 / static_cast<double>(z_batch.size()));

    std::vector<Var> reps;
    for (std::size_t i = 0; i + 1 < z_batch.size(); i += 2) {
        const double dz = (z_batch[i] - z_batch[i + 1]).norm();
        if (dz <= 0.0) throw std::invalid_argument("unsupervised loss: coincident pair");
        Var diff = t.sub(qs[i], qs[i + 1]);
        Var mnorm = t.csqrt(t.weighted_sqnorm(diff, mass.diag));
        Var ratio = t.scale(mnorm, 1.0 / (sigma * dz));
        reps.push_back(t.csquare(t.clog(ratio)));
    }
    Var repulsion = t.scale(t.sum(reps), lambda_rep / static_cast<double>(reps.size()));
    if (potential_out) *potential_out = t.scalar(potential);
    if (repulsion_out) *repulsion_out = t.scalar(repulsion);
    return t.add(potential, repulsion);
}

Var build_lipschitz_loss(Tape& t, const TapeModel& tm, const SubspaceModel& model,
                         const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs,
                         int order, const Tape::Potential& pot) {
    if (pairs.empty()) throw std::invalid_argument("lipschitz loss: no pairs");
    const bool need_jacobian = order >= 1;
    std::vector<Var> terms;
    for (const auto& [z1, z2] : pairs) {
        const double dz2 = (z1 - z2).squaredNorm();
        if (dz2 <= 0.0) throw std::invalid_argument("lipschitz loss: coincident pair");
        DecodeTrace t1 = tape_decode(t, tm, model, t.constant(z1), need_jacobian);
        DecodeTrace t2 = tape_decode(t, tm, model, t.constant(z2), need_jacobian);
        Var d1 = tape_reduced_derivative(t, tm, model, t1, order, pot);
        Var d2 = tape_reduced_derivative(t, tm, model, t2, order, pot);
        Var diff = t.sub(d1, d2);
        terms.push_back(t.scale(t.dot(diff, diff), 1.0 / dz2));
    }
    return t.scale(t.sum(terms), 1.0 / static_cast<double>(terms.size()));
}

double reconstruction_loss(const SubspaceModel& model, const std::vector<Eigen::VectorXd>& batch,
                           const MassMatrix& mass) {
    if (!model.has_encoder())
        throw std::runtime_error("reconstruction loss: model has no encoder");
    if (batch.empty()) throw std::invalid_argument("reconstruction loss: empty batch");
    double total = 0.0;
    for (const VectorXd& q : batch) {
        const VectorXd diff = decode(model, encode(model, q)) - q;
        total += (mass.diag.array() * diff.array().square()).sum();
    }
    return total / static_cast<double>(batch.size());
}

double unsupervised_loss(const SubspaceModel& model, const std::vector<Eigen::VectorXd>& z_batch,
                         const Tape::Potential& pot, const MassMatrix& mass, double lambda_rep,
                         double sigma) {
    Tape t;
    TapeModel tm = register_model(t, model);
    Var loss = build_unsupervised_loss(t, tm, model, z_batch, pot, mass, lambda_rep, sigma);
    return t.scalar(loss);
}

double lipschitz_loss(const SubspaceModel& model,
                      const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs,
                      int order, const Tape::Potential& pot) {
    Tape t;
    TapeModel tm = register_model(t, model);
    Var loss = build_lipschitz_loss(t, tm, model, pairs, order, pot);
    return t.scalar(loss);
}

Eigen::MatrixXd sample_pullback(const SubspaceModel& model, TrainMode mode, const Dataset* dataset,
                                int count, Rng& rng) {
    MatrixXd Z(model.r, count);
    if (mode == TrainMode::Unsupervised) {
        for (int k = 0; k < count; ++k)
            for (int i = 0; i < model.r; ++i) Z(i, k) = randn(rng);
        return Z;
    }
    if (!dataset || dataset->frames() == 0)
        throw std::invalid_argument("sample_pullback: supervised mode needs a nonempty dataset");
    for (int k = 0; k < count; ++k) {
        const auto idx = randint(rng, static_cast<std::uint64_t>(dataset->frames()));
        Z.col(k) = encode(model, dataset->snapshots.row(static_cast<long>(idx)).transpose());
    }
    return Z;
}

std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> sample_pullback_pairs(
    const SubspaceModel& model, TrainMode mode, const Dataset* dataset, int pair_count, Rng& rng) {
    const int B = 2 * pair_count;
    MatrixXd Z = sample_pullback(model, mode, dataset, B, rng);
    // Fisher-Yates shuffle of the batch columns.
    std::vector<int> order(B);
    for (int i = 0; i < B; ++i) order[i] = i;
    for (int i = B - 1; i > 0; --i) {
        const int j = static_cast<int>(randint(rng, static_cast<std::uint64_t>(i + 1)));
        std::swap(order[i], order[j]);
    }
    std::vector<std::pair<VectorXd, VectorXd>> pairs;
    pairs.reserve(pair_count);
    for (int p = 0; p < pair_count; ++p) {
        VectorXd z1 = Z.col(order[2 * p]);
        VectorXd z2 = Z.col(order[2 * p + 1]);
        for (int tries = 0; (z1 - z2).norm() < 1e-12; ++tries) {
            if (tries > 100)
                throw std::runtime_error("sample_pullback_pairs: could not draw distinct pair");
            z2 = sample_pullback(model, mode, dataset, 1, rng).col(0);
        }
        pairs.emplace_back(std::move(z1), std::move(z2));
    }
    return pairs;
}

double reduced_potential(const SubspaceModel& model, const Tape::Potential& pot,
                         const Eigen::VectorXd& z) {
    return assemble(*pot.ctx, decode(model, z), false, &pot.subset, pot.terms).value;
}

Eigen::VectorXd reduced_potential_gradient(const SubspaceModel& model, const Tape::Potential& pot,
                                           const Eigen::VectorXd& z) {
    const VectorXd q = decode(model, z);
    const AssembledPotential ap = assemble(*pot.ctx, q, false, &pot.subset, pot.terms);
    return decode_jacobian(model, z).transpose() * ap.gradient;
}

Eigen::MatrixXd reduced_potential_hessian(const SubspaceModel& model, const Tape::Potential& pot,
                                          const Eigen::VectorXd& z) {
    const VectorXd q = decode(model, z);
    const AssembledPotential ap = assemble(*pot.ctx, q, true, &pot.subset, pot.terms);
    const MatrixXd J = decode_jacobian(model, z);
    MatrixXd H = J.transpose() * (*ap.hessian * J);
    for (int a = 0; a < model.r; ++a)
        for (int b = a; b < model.r; ++b) {
            const VectorXd s = decode_second_directional(model, z, VectorXd::Unit(model.r, a),
                                                         VectorXd::Unit(model.r, b));
            const double v = ap.gradient.dot(s);
            H(a, b) += v;
            if (a != b) H(b, a) += v;
        }
    return H;
}

}  // namespace lipsub
