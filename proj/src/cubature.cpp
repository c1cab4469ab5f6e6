#include "lipsub/cubature.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "lipsub/energy.hpp"

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void CubatureSet::validate() const {
    if (static_cast<long>(element_ids.size()) != weights.size())
        throw std::invalid_argument("cubature: ids and weights disagree in length");
    if ((weights.array() < 0.0).any())
        throw std::invalid_argument("cubature: negative weight");
    for (std::size_t i = 1; i < element_ids.size(); ++i)
        if (element_ids[i] <= element_ids[i - 1])
            throw std::invalid_argument("cubature: ids must be sorted and unique");
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter) {
    const long n = A.cols();
    if (max_iter <= 0) max_iter = static_cast<int>(3 * n) + 30;
    VectorXd x = VectorXd::Zero(n);
    std::vector<bool> passive(n, false);
    VectorXd w = A.transpose() * (b - A * x);

    auto solve_passive = [&](const std::vector<bool>& mask) {
        std::vector<long> idx;
        for (long i = 0; i < n; ++i)
            if (mask[i]) idx.push_back(i);
        MatrixXd Ap(A.rows(), static_cast<long>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<long>(k)) = A.col(idx[k]);
        VectorXd sol = Ap.colPivHouseholderQr().solve(b);
        VectorXd full = VectorXd::Zero(n);
        for (std::size_t k = 0; k < idx.size(); ++k) full[idx[k]] = sol[static_cast<long>(k)];
        return full;
    };

    for (int outer = 0; outer < max_iter; ++outer) {
        long best = -1;
        double best_w = 1e-12;
        for (long i = 0; i < n; ++i)
            if (!passive[i] && w[i] > best_w) {
                best_w = w[i];
                best = i;
            }
        if (best < 0) break;
        passive[best] = true;

        VectorXd s = solve_passive(passive);
        int guard = 0;
        while (true) {
            double min_passive = 0.0;
            for (long i = 0; i < n; ++i)
                if (passive[i]) min_passive = std::min(min_passive, s[i]);
            if (min_passive > -1e-14) break;
            double alpha = 1.0;
            for (long i = 0; i < n; ++i)
                if (passive[i] && s[i] <= 0.0 && x[i] - s[i] > 0.0)
                    alpha = std::min(alpha, x[i] / (x[i] - s[i]));
            for (long i = 0; i < n; ++i)
                if (passive[i]) x[i] += alpha * (s[i] - x[i]);
            for (long i = 0; i < n; ++i)
                if (passive[i] && x[i] <= 1e-14) {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            s = solve_passive(passive);
            if (++guard > max_iter) break;
        }
        for (long i = 0; i < n; ++i) x[i] = passive[i] ? std::max(s[i], 0.0) : 0.0;
        w = A.transpose() * (b - A * x);
    }
    return x;
}

CubatureSystem build_training_matrix(const SubspaceModel& model, const PotentialContext& ctx,
                                     const Eigen::MatrixXd& z_samples) {
    const Mesh& mesh = *ctx.mesh;
    const int E = mesh.num_elements();
    const int r = model.r;
    const long T = z_samples.cols();

    std::vector<MatrixXd> blocks;   // per kept sample, r x E
    std::vector<VectorXd> targets;  // per kept sample, r
    int skipped = 0;
    for (long s = 0; s < T; ++s) {
        const VectorXd z = z_samples.col(s);
        const VectorXd q = decode(model, z);
        const MatrixXd X = ctx.positions(q);
        const MatrixXd J = decode_jacobian(model, z);
        MatrixXd block(r, E);
        for (int e = 0; e < E; ++e) {
            const ElementDerivatives ed = element_snh(mesh, *ctx.mat, e, X, false);
            const auto dof_map = element_dof_map(mesh, e);
            VectorXd reduced = VectorXd::Zero(r);
            for (std::size_t i = 0; i < dof_map.size(); ++i)
                if (dof_map[i] >= 0)
                    reduced += ed.gradient[static_cast<long>(i)] * J.row(dof_map[i]).transpose();
            block.col(e) = reduced;
        }
        const VectorXd full = block.rowwise().sum();
        const double norm = full.norm();
        if (norm < 1e-12) {
            ++skipped;
            continue;
        }
        blocks.push_back(block / norm);
        targets.push_back(full / norm);
    }
    if (blocks.empty()) throw std::runtime_error("cubature: all samples had vanishing gradients");

    CubatureSystem sys;
    sys.skipped_samples = skipped;
    sys.A.resize(static_cast<long>(blocks.size()) * r, E);
    sys.b.resize(static_cast<long>(blocks.size()) * r);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        sys.A.middleRows(static_cast<long>(k) * r, r) = blocks[k];
        sys.b.segment(static_cast<long>(k) * r, r) = targets[k];
    }
    return sys;
}

CubatureSet select_cubatures(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int target_S,
                             double target_error) {
    if (!A.allFinite() || !b.allFinite())
        throw std::invalid_argument("cubature: non-finite training system");
    const long E = A.cols();
    target_S = std::min<long>(std::max(target_S, 1), E);
    const double bnorm = std::max(b.norm(), 1e-300);

    std::vector<int> active;
    std::vector<bool> in_active(E, false);
    VectorXd weights;
    VectorXd residual = b;
    double rel_residual = 1.0;

    const VectorXd col_norms = A.colwise().norm();
    while (static_cast<int>(active.size()) < target_S && rel_residual > target_error) {
        long best = -1;
        double best_score = 0.0;
        for (long e = 0; e < E; ++e) {
            if (in_active[e] || col_norms[e] <= 1e-300) continue;
            const double score = A.col(e).dot(residual) / col_norms[e];
            if (score > best_score) {
                best_score = score;
                best = e;
            }
        }
        if (best < 0) break;  // residual orthogonal to every remaining column
        active.push_back(static_cast<int>(best));
        in_active[best] = true;

        MatrixXd Aact(A.rows(), static_cast<long>(active.size()));
        for (std::size_t k = 0; k < active.size(); ++k) Aact.col(static_cast<long>(k)) = A.col(active[k]);
        weights = nnls(Aact, b);
        residual = b - Aact * weights;
        rel_residual = residual.norm() / bnorm;
    }
    if (active.empty()) throw std::runtime_error("cubature: selection produced an empty set");

    // Sort ids ascending, carrying weights along.
    std::vector<int> order(active.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return active[i] < active[j]; });
    CubatureSet set;
    set.element_ids.resize(active.size());
    set.weights.resize(static_cast<long>(active.size()));
    for (std::size_t k = 0; k < order.size(); ++k) {
        set.element_ids[k] = active[order[k]];
        set.weights[static_cast<long>(k)] = weights[order[k]];
    }
    set.fit_error = rel_residual;
    set.validate();
    return set;
}

CubatureErrors cubature_error(const CubatureSet& cubset, const SubspaceModel& model,
                              const PotentialContext& ctx, const Eigen::MatrixXd& heldout_z) {
    const ElementSubset sub = cubset.to_subset();
    const ElementSubset full = ElementSubset::full(ctx.mesh->num_elements());
    const PotentialTerms elastic_only{true, false, false};
    const Tape::Potential pot_sub{&ctx, sub, elastic_only};
    const Tape::Potential pot_full{&ctx, full, elastic_only};

    CubatureErrors err;
    const long T = heldout_z.cols();
    std::vector<double> lip_full, lip_sub;
    for (long s = 0; s < T; ++s) {
        const VectorXd z = heldout_z.col(s);
        const VectorXd gf = reduced_potential_gradient(model, pot_full, z);
        const VectorXd gc = reduced_potential_gradient(model, pot_sub, z);
        err.gradient += (gc - gf).norm() / std::max(gf.norm(), 1e-300);
        const MatrixXd hf = reduced_potential_hessian(model, pot_full, z);
        const MatrixXd hc = reduced_potential_hessian(model, pot_sub, z);
        err.hessian += (hc - hf).norm() / std::max(hf.norm(), 1e-300);
    }
    err.gradient /= static_cast<double>(T);
    err.hessian /= static_cast<double>(T);

    int pairs = 0;
    for (long s = 0; s + 1 < T; s += 2) {
        const VectorXd z1 = heldout_z.col(s), z2 = heldout_z.col(s + 1);
        const double dz2 = (z1 - z2).squaredNorm();
        if (dz2 <= 0.0) continue;
        const MatrixXd df = reduced_potential_hessian(model, pot_full, z1) -
                            reduced_potential_hessian(model, pot_full, z2);
        const MatrixXd dc = reduced_potential_hessian(model, pot_sub, z1) -
                            reduced_potential_hessian(model, pot_sub, z2);
        const double tf = df.squaredNorm() / dz2;
        const double tc = dc.squaredNorm() / dz2;
        err.lipschitz += std::abs(tc - tf) / std::max(std::abs(tf), 1e-300);
        ++pairs;
    }
    if (pairs > 0) err.lipschitz /= static_cast<double>(pairs);
    return err;
}

CubatureSet fit_cubature(const SubspaceModel& model, const PotentialContext& ctx, TrainMode mode,
                         const Dataset* dataset, int target_S, int sample_count, Rng& rng) {
    if (sample_count <= 0) sample_count = 10 * std::max(target_S, 1);
    const MatrixXd Z = sample_pullback(model, mode, dataset, sample_count, rng);
    const CubatureSystem sys = build_training_matrix(model, ctx, Z);
    return select_cubatures(sys.A, sys.b, target_S);
}

void save_cubature(const CubatureSet& set, const std::string& path) {
    nlohmann::json j;
    j["element_ids"] = set.element_ids;
    std::vector<double> w(set.weights.data(), set.weights.data() + set.weights.size());
    j["weights"] = w;
    j["fit_error"] = set.fit_error;
    j["provenance"] = set.provenance;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cubature: cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

CubatureSet load_cubature(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cubature: cannot open '" + path + "'");
    const nlohmann::json j = nlohmann::json::parse(in);
    CubatureSet set;
    set.element_ids = j.at("element_ids").get<std::vector<int>>();
    const auto w = j.at("weights").get<std::vector<double>>();
    set.weights = Eigen::Map<const VectorXd>(w.data(), static_cast<long>(w.size()));
    set.fit_error = j.at("fit_error").get<double>();
    set.provenance = j.value("provenance", "");
    set.validate();
    return set;
}

}  // namespace lipsub
