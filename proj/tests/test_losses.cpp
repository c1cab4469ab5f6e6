#include <doctest.h>

#include <Eigen/Sparse>

#include "helpers.hpp"
#include "lipsub/losses.hpp"

using namespace lipsub;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::rel_err;

namespace {

Mesh tiny_bar() { return make_bar_2d(2, 1, 0.6, 0.3); }  // 4 elements, 204 would be overkill

struct Fixture {
    Mesh mesh = tiny_bar();
    MaterialParams mat;
    PotentialContext ctx;
    MassMatrix mass;

    Fixture() {
        mat.mu = 1.5;
        mat.lambda = 1.0;
        mat.density = 2.0;
        ctx = PotentialContext(mesh, mat);
        mass = lump_mass(mesh, mat);
    }
    Tape::Potential elastic_pot() const {
        return {&ctx, ElementSubset::full(mesh.num_elements()), PotentialTerms{true, false, false}};
    }
};

SubspaceModel identity_autoencoder(int n) {
    SubspaceModel m;
    m.r = n;
    m.n = n;
    m.decoder = {{MatrixXd::Identity(n, n), VectorXd::Zero(n), Activation::Identity}};
    m.encoder = {{MatrixXd::Identity(n, n), VectorXd::Zero(n), Activation::Identity}};
    m.norm_shift = VectorXd::Zero(n);
    m.norm_scale = VectorXd::Ones(n);
    m.validate();
    return m;
}

// FD over every model parameter of a tape-built loss.
template <typename BuildLoss>
void check_theta_gradient(SubspaceModel& model, BuildLoss build, double h = 1e-4,
                          double tol = 1e-4) {
    Tape tape;
    TapeModel tm = register_model(tape, model);
    Var loss = build(tape, tm, model);
    tape.backward(loss);

    auto params = parameter_refs(model);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const MatrixXd grad =
            tape.param_gradient(static_cast<int>(i), params[i].rows, params[i].cols);
        Eigen::Map<VectorXd> theta(params[i].data, params[i].size());
        MatrixXd fd(params[i].rows, params[i].cols);
        for (long k = 0; k < params[i].size(); ++k) {
            const double saved = theta[k];
            theta[k] = saved + h;
            Tape tp;
            TapeModel tmp = register_model(tp, model);
            const double fp = tp.scalar(build(tp, tmp, model));
            theta[k] = saved - h;
            Tape tn;
            TapeModel tmn = register_model(tn, model);
            const double fm = tn.scalar(build(tn, tmn, model));
            theta[k] = saved;
            fd(k % params[i].rows, k / params[i].rows) = (fp - fm) / (2.0 * h);
        }
        CHECK(rel_err(grad, fd, 1e-8) < tol);
    }
}

}  // namespace

TEST_CASE("reconstruction loss") {
    Fixture fx;
    const int n = fx.mesh.num_dofs();

    SUBCASE("identity autoencoder reconstructs exactly") {
        const SubspaceModel m = identity_autoencoder(n);
        Rng rng = substream(61, 0);
        std::vector<VectorXd> batch{testutil::random_vector(n, rng), testutil::random_vector(n, rng)};
        CHECK(reconstruction_loss(m, batch, fx.mass) == 0.0);
    }
    SUBCASE("zero decoder leaves the shift") {
        SubspaceModel m = identity_autoencoder(n);
        m.decoder[0].W.setZero();
        Rng rng = substream(63, 0);
        m.norm_shift = testutil::random_vector(n, rng);
        const VectorXd q = testutil::random_vector(n, rng);
        const double loss = reconstruction_loss(m, {q}, fx.mass);
        const VectorXd d = m.norm_shift - q;
        CHECK(rel_err(loss, (fx.mass.diag.array() * d.array().square()).sum()) < 1e-12);
    }
    SUBCASE("random model matches the direct formula") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 71);
        Rng rng = substream(65, 0);
        std::vector<VectorXd> batch;
        for (int k = 0; k < 3; ++k) batch.push_back(testutil::random_vector(n, rng));
        double expected = 0.0;
        for (const VectorXd& q : batch) {
            const VectorXd d = decode(m, encode(m, q)) - q;
            expected += (fx.mass.diag.array() * d.array().square()).sum();
        }
        expected /= 3.0;
        CHECK(rel_err(reconstruction_loss(m, batch, fx.mass), expected) < 1e-14);

        // Tape value agrees with the direct evaluation.
        Tape t;
        TapeModel tm = register_model(t, m);
        Var loss = build_reconstruction_loss(t, tm, m, batch, fx.mass);
        CHECK(rel_err(t.scalar(loss), expected) < 1e-12);
    }
}

TEST_CASE("unsupervised loss") {
    Fixture fx;
    Mesh free_mesh = make_bar_2d(2, 1, 0.6, 0.3, /*pin_left=*/false);
    MaterialParams mat = fx.mat;
    PotentialContext ctx(free_mesh, mat);
    MassMatrix mass = lump_mass(free_mesh, mat);
    const int n = free_mesh.num_dofs();

    SUBCASE("translation decoder sees a constant potential") {
        // decode(z) = rest + (z_x, z_y) applied to every vertex.
        SubspaceModel m;
        m.r = 2;
        m.n = n;
        MatrixXd W = MatrixXd::Zero(n, 2);
        for (int v = 0; v < free_mesh.num_vertices(); ++v) {
            W(2 * v, 0) = 1.0;
            W(2 * v + 1, 1) = 1.0;
        }
        m.decoder = {{W, VectorXd::Zero(n), Activation::Identity}};
        m.norm_shift = dof_pack(free_mesh, free_mesh.vertices);
        m.norm_scale = VectorXd::Ones(n);
        m.validate();

        Tape::Potential pot{&ctx, ElementSubset::full(free_mesh.num_elements()), PotentialTerms{}};
        Rng rng = substream(67, 0);
        std::vector<VectorXd> zb;
        for (int k = 0; k < 4; ++k) zb.push_back(testutil::random_vector(2, rng));
        double pot_term = 0.0, rep_term = 0.0;
        Tape t;
        TapeModel tm = register_model(t, m);
        build_unsupervised_loss(t, tm, m, zb, pot, mass, 0.5, 1.0, &pot_term, &rep_term);
        const double rest_p =
            assemble(ctx, dof_pack(free_mesh, free_mesh.vertices), false).value;
        CHECK(std::abs(pot_term - rest_p) < 1e-10);
    }
    SUBCASE("matched pair distance zeroes the repulsion term") {
        const SubspaceModel m = identity_autoencoder(n);
        // With the identity map, |f(z1)-f(z2)|_M = sqrt(m) |z1-z2| elementwise;
        // use a uniform mass and sigma = sqrt(m) so the ratio is exactly 1.
        MassMatrix unit_mass;
        unit_mass.diag = VectorXd::Constant(n, 4.0);
        Rng rng = substream(69, 0);
        std::vector<VectorXd> zb{testutil::random_vector(n, rng), testutil::random_vector(n, rng)};
        Tape::Potential pot{&ctx, ElementSubset::full(free_mesh.num_elements()), PotentialTerms{}};
        double pot_term = 0.0, rep_term = 0.0;
        Tape t;
        TapeModel tm = register_model(t, m);
        build_unsupervised_loss(t, tm, m, zb, pot, unit_mass, 1.0, 2.0, &pot_term, &rep_term);
        CHECK(std::abs(rep_term) < 1e-20);
    }
    SUBCASE("random instance matches the direct formula") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 73, /*supervised=*/false);
        m.norm_shift = dof_pack(free_mesh, free_mesh.vertices);
        Rng rng = substream(71, 0);
        std::vector<VectorXd> zb;
        for (int k = 0; k < 4; ++k) zb.push_back(testutil::random_vector(2, rng));
        Tape::Potential pot{&ctx, ElementSubset::full(free_mesh.num_elements()), PotentialTerms{}};
        const double lambda_rep = 0.7, sigma = 1.3;
        const double loss = unsupervised_loss(m, zb, pot, mass, lambda_rep, sigma);

        double expected = 0.0;
        for (const VectorXd& z : zb) expected += assemble(ctx, decode(m, z), false).value;
        expected /= 4.0;
        double rep = 0.0;
        for (int p = 0; p < 2; ++p) {
            const VectorXd d = decode(m, zb[2 * p]) - decode(m, zb[2 * p + 1]);
            const double mn = std::sqrt((mass.diag.array() * d.array().square()).sum());
            const double ratio = mn / (sigma * (zb[2 * p] - zb[2 * p + 1]).norm());
            rep += std::log(ratio) * std::log(ratio);
        }
        expected += lambda_rep * rep / 2.0;
        CHECK(rel_err(loss, expected) < 1e-12);
    }
}

TEST_CASE("lipschitz loss") {
    Fixture fx;
    const int n = fx.mesh.num_dofs();
    Rng rng = substream(75, 0);

    SUBCASE("constant decoder gives exactly zero at every order") {
        SubspaceModel m = testutil::tiny_model(3, n, 1, 4, 77);
        for (Layer& l : m.decoder) l.W.setZero();
        m.norm_shift = dof_pack(fx.mesh, fx.mesh.vertices);
        for (int order = 0; order <= 2; ++order) {
            std::vector<std::pair<VectorXd, VectorXd>> pairs;
            for (int p = 0; p < 3; ++p)
                pairs.emplace_back(testutil::random_vector(3, rng), testutil::random_vector(3, rng));
            CHECK(lipschitz_loss(m, pairs, order, fx.elastic_pot()) == 0.0);
        }
    }
    SUBCASE("single pair at order 0 is the definition") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 79);
        const VectorXd z1 = testutil::random_vector(2, rng);
        const VectorXd z2 = testutil::random_vector(2, rng);
        const auto pot = fx.elastic_pot();
        const double p1 = reduced_potential(m, pot, z1);
        const double p2 = reduced_potential(m, pot, z2);
        const double expected = (p1 - p2) * (p1 - p2) / (z1 - z2).squaredNorm();
        CHECK(rel_err(lipschitz_loss(m, {{z1, z2}}, 0, pot), expected) < 1e-12);
    }
    SUBCASE("order 2 matches a brute-force FD-of-gradient oracle") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 81);
        const auto pot = fx.elastic_pot();
        std::vector<std::pair<VectorXd, VectorXd>> pairs;
        for (int p = 0; p < 2; ++p)
            pairs.emplace_back(testutil::random_vector(2, rng), testutil::random_vector(2, rng));
        const double loss = lipschitz_loss(m, pairs, 2, pot);

        auto hess_fd = [&](const VectorXd& z) {
            return testutil::fd_jacobian(
                [&](const VectorXd& zz) { return reduced_potential_gradient(m, pot, zz); }, z, 1e-5);
        };
        double expected = 0.0;
        for (const auto& [z1, z2] : pairs) {
            const MatrixXd d = hess_fd(z1) - hess_fd(z2);
            expected += d.squaredNorm() / (z1 - z2).squaredNorm();
        }
        expected /= pairs.size();
        CHECK(rel_err(loss, expected, 1e-10) < 1e-4);
    }
    SUBCASE("pair swap leaves the loss unchanged") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 83);
        const auto pot = fx.elastic_pot();
        const VectorXd z1 = testutil::random_vector(2, rng);
        const VectorXd z2 = testutil::random_vector(2, rng);
        for (int order = 0; order <= 2; ++order)
            CHECK(lipschitz_loss(m, {{z1, z2}}, order, pot) ==
                  lipschitz_loss(m, {{z2, z1}}, order, pot));
    }
    SUBCASE("non-negative on random instances") {
        for (int trial = 0; trial < 5; ++trial) {
            SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 85 + trial);
            std::vector<std::pair<VectorXd, VectorXd>> pairs{
                {testutil::random_vector(2, rng), testutil::random_vector(2, rng)}};
            for (int order = 0; order <= 2; ++order)
                CHECK(lipschitz_loss(m, pairs, order, fx.elastic_pot()) >= 0.0);
        }
    }
    SUBCASE("coincident pair is rejected") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 90);
        const VectorXd z = testutil::random_vector(2, rng);
        CHECK_THROWS_AS(lipschitz_loss(m, {{z, z}}, 0, fx.elastic_pot()),
                        std::invalid_argument);
    }
}

TEST_CASE("theta gradients of all losses pass FD") {
    Fixture fx;
    const int n = fx.mesh.num_dofs();
    Rng rng = substream(91, 0);

    SUBCASE("reconstruction") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 5, 95);
        std::vector<VectorXd> batch;
        for (int k = 0; k < 2; ++k)
            batch.push_back(dof_pack(fx.mesh, fx.mesh.vertices) + testutil::random_vector(n, rng, 0.05));
        check_theta_gradient(m, [&](Tape& t, TapeModel& tm, const SubspaceModel& mm) {
            return build_reconstruction_loss(t, tm, mm, batch, fx.mass);
        });
    }
    SUBCASE("unsupervised") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 5, 97, /*supervised=*/false);
        m.norm_shift = dof_pack(fx.mesh, fx.mesh.vertices);
        std::vector<VectorXd> zb;
        for (int k = 0; k < 4; ++k) zb.push_back(testutil::random_vector(2, rng, 0.5));
        Tape::Potential pot{&fx.ctx, ElementSubset::full(fx.mesh.num_elements()), PotentialTerms{}};
        check_theta_gradient(m, [&](Tape& t, TapeModel& tm, const SubspaceModel& mm) {
            return build_unsupervised_loss(t, tm, mm, zb, pot, fx.mass, 0.4, 1.1);
        });
    }
    SUBCASE("lipschitz order 0, 1, 2") {
        for (int order = 0; order <= 2; ++order) {
            SubspaceModel m = testutil::tiny_model(2, n, 1, 5, 99 + order);
            m.norm_shift = dof_pack(fx.mesh, fx.mesh.vertices);
            m.norm_scale = VectorXd::Constant(n, 0.5);
            std::vector<std::pair<VectorXd, VectorXd>> pairs{
                {testutil::random_vector(2, rng, 0.5), testutil::random_vector(2, rng, 0.5)}};
            const auto pot = fx.elastic_pot();
            check_theta_gradient(m, [&](Tape& t, TapeModel& tm, const SubspaceModel& mm) {
                return build_lipschitz_loss(t, tm, mm, pairs, order, pot);
            });
        }
    }
    SUBCASE("combined objective on the tiny mesh") {
        SubspaceModel m = testutil::tiny_model(2, n, 2, 5, 103);
        m.norm_shift = dof_pack(fx.mesh, fx.mesh.vertices);
        std::vector<VectorXd> batch;
        for (int k = 0; k < 2; ++k)
            batch.push_back(dof_pack(fx.mesh, fx.mesh.vertices) + testutil::random_vector(n, rng, 0.05));
        std::vector<std::pair<VectorXd, VectorXd>> pairs{
            {testutil::random_vector(2, rng, 0.5), testutil::random_vector(2, rng, 0.5)}};
        const auto pot = fx.elastic_pot();
        check_theta_gradient(m, [&](Tape& t, TapeModel& tm, const SubspaceModel& mm) {
            Var rec = build_reconstruction_loss(t, tm, mm, batch, fx.mass);
            Var ls = build_lipschitz_loss(t, tm, mm, pairs, 2, pot);
            return t.add(rec, t.scale(ls, 0.3));
        });
    }
}

TEST_CASE("sample_pullback") {
    Fixture fx;
    const int n = fx.mesh.num_dofs();

    SUBCASE("unsupervised draws are reproducible under a fixed seed") {
        const SubspaceModel m = testutil::tiny_model(3, n, 1, 4, 107, false);
        Rng a = substream(5, 1), b = substream(5, 1);
        const MatrixXd za = sample_pullback(m, TrainMode::Unsupervised, nullptr, 6, a);
        const MatrixXd zb = sample_pullback(m, TrainMode::Unsupervised, nullptr, 6, b);
        CHECK((za - zb).norm() == 0.0);
    }
    SUBCASE("supervised singleton dataset collapses to one code") {
        const SubspaceModel m = testutil::tiny_model(2, n, 1, 4, 109);
        Dataset d;
        Rng rng = substream(7, 2);
        d.snapshots = testutil::random_matrix(1, n, rng);
        Rng s = substream(9, 3);
        const MatrixXd Z = sample_pullback(m, TrainMode::Supervised, &d, 5, s);
        const VectorXd z0 = encode(m, d.snapshots.row(0).transpose());
        for (int k = 0; k < 5; ++k) CHECK((Z.col(k) - z0).norm() == 0.0);
    }
    SUBCASE("decode of supervised samples concentrates on the dataset mean") {
        // Identity autoencoder: decode(encode(q)) = q, so the sample mean of
        // decoded pull-backs estimates the dataset mean.
        const SubspaceModel m = identity_autoencoder(n);
        Rng rng = substream(11, 4);
        Dataset d;
        d.snapshots = testutil::random_matrix(50, n, rng);
        Rng s = substream(13, 5);
        const int draws = 10000;
        const MatrixXd Z = sample_pullback(m, TrainMode::Supervised, &d, draws, s);
        VectorXd mean = VectorXd::Zero(n);
        for (int k = 0; k < draws; ++k) mean += decode(m, Z.col(k));
        mean /= draws;
        const VectorXd data_mean = d.snapshots.colwise().mean();
        // Monte-Carlo tolerance: ~3 sigma / sqrt(draws) per coordinate.
        const double tol = 3.0 * d.snapshots.array().abs().maxCoeff() / std::sqrt(double(draws));
        CHECK((mean - data_mean).lpNorm<Eigen::Infinity>() < 5.0 * tol);
    }
    SUBCASE("pair sampling never returns coincident pairs") {
        const SubspaceModel m = identity_autoencoder(n);
        Dataset d;
        Rng rng = substream(15, 6);
        d.snapshots = testutil::random_matrix(1, n, rng);  // forces coincident draws
        Rng s = substream(17, 7);
        CHECK_THROWS_AS(sample_pullback_pairs(m, TrainMode::Supervised, &d, 1, s),
                        std::runtime_error);
    }
}

TEST_CASE("normalization from dataset") {
    Dataset d;
    Rng rng = substream(19, 8);
    d.snapshots = testutil::random_matrix(40, 6, rng, 2.0);
    VectorXd shift, scale;
    normalization_from_dataset(d, shift, scale);
    CHECK(rel_err(shift, VectorXd(d.snapshots.colwise().mean())) < 1e-12);
    CHECK(scale.minCoeff() == scale.maxCoeff());  // global std
    const MatrixXd centered = d.snapshots.rowwise() - shift.transpose();
    CHECK(rel_err(scale[0], std::sqrt(centered.array().square().sum() / centered.size())) < 1e-12);
}
