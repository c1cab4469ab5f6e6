#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "lipsub/energy.hpp"

using namespace lipsub;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::fd_gradient;
using testutil::fd_jacobian;
using testutil::rel_err;

namespace {

Mesh single_triangle_2d() {
    MatrixXd v(3, 2);
    v << 0, 0, 1, 0, 0, 1;
    Eigen::MatrixXi e(1, 3);
    e << 0, 1, 2;
    return build_mesh(2, v, e);
}

Mesh single_tet() {
    MatrixXd v(4, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
    Eigen::MatrixXi e(1, 4);
    e << 0, 1, 2, 3;
    return build_mesh(3, v, e);
}

Mesh single_membrane() {
    MatrixXd v(3, 3);
    v << 0, 0, 0, 1, 0, 0.1, 0, 0.2, 1;
    Eigen::MatrixXi e(1, 3);
    e << 0, 1, 2;
    return build_mesh(3, v, e);
}

// The implemented density recomputed independently (see MATERIALS.md).
double density_oracle(const MatrixXd& F, double mu, double lambda) {
    const double de = static_cast<double>(F.cols());
    const double c = de / (de + 1.0);
    const double I = F.squaredNorm();
    double J;
    if (F.rows() == F.cols())
        J = F.determinant();
    else
        J = std::sqrt((F.transpose() * F).determinant());
    return 0.5 * mu * (I - de) - 0.5 * mu * (std::log(I + 1.0) - std::log(de + 1.0)) +
           0.5 * lambda * (J - 1.0) * (J - 1.0) - c * mu * (J - 1.0);
}

MatrixXd positions_from_local(const Mesh& mesh, const VectorXd& x) {
    MatrixXd X = mesh.vertices;
    int k = 0;
    for (int v = 0; v < mesh.num_vertices(); ++v)
        for (int c = 0; c < mesh.dim; ++c) X(v, c) = x[k++];
    return X;
}

VectorXd local_from_positions(const Mesh& mesh) {
    VectorXd x(mesh.num_vertices() * mesh.dim);
    int k = 0;
    for (int v = 0; v < mesh.num_vertices(); ++v)
        for (int c = 0; c < mesh.dim; ++c) x[k++] = mesh.vertices(v, c);
    return x;
}

void check_snh_derivatives(const Mesh& mesh, std::uint64_t seed) {
    MaterialParams mat;
    mat.mu = 1.3;
    mat.lambda = 0.7;
    Rng rng = substream(seed, 5);
    const VectorXd x0 = local_from_positions(mesh) + testutil::random_vector(mesh.num_vertices() * mesh.dim, rng, 0.15);

    auto energy = [&](const VectorXd& x) {
        return element_snh(mesh, mat, 0, positions_from_local(mesh, x), false).energy;
    };
    auto gradient = [&](const VectorXd& x) {
        return element_snh(mesh, mat, 0, positions_from_local(mesh, x), false).gradient;
    };

    const ElementDerivatives ed = element_snh(mesh, mat, 0, positions_from_local(mesh, x0), true);
    CHECK(rel_err(ed.gradient, fd_gradient(energy, x0, 1e-6)) < 1e-6);
    CHECK(rel_err(ed.hessian, fd_jacobian(gradient, x0, 1e-5)) < 1e-4);
    CHECK(rel_err(ed.hessian, MatrixXd(ed.hessian.transpose()), 1e-30) < 1e-10);
}

// Oracle for the third-derivative contraction: FD gradient of x -> <H(x), M>.
void check_third_contraction(const Mesh& mesh, std::uint64_t seed) {
    MaterialParams mat;
    mat.mu = 1.1;
    mat.lambda = 0.9;
    Rng rng = substream(seed, 6);
    const int nloc = mesh.dim * (mesh.elem_dim + 1);
    const VectorXd x0 = local_from_positions(mesh) + testutil::random_vector(mesh.num_vertices() * mesh.dim, rng, 0.1);
    MatrixXd A = testutil::random_matrix(nloc, 2, rng);
    MatrixXd B = testutil::random_matrix(nloc, 2, rng);

    // Express through the public element-apply surface: n == nloc here because
    // the mesh is a single unpinned element.
    const PotentialContext ctx(mesh, mat);
    const ElementSubset full = ElementSubset::full(1);

    auto inner = [&](const VectorXd& x) {
        const MatrixXd X = positions_from_local(mesh, x);
        MatrixXd HB = MatrixXd::Zero(nloc, 2);
        elastic_hessian_apply(ctx, X, full, B, HB);
        return (A.array() * HB.array()).sum();
    };
    VectorXd qbar = VectorXd::Zero(nloc);
    elastic_third_contraction(ctx, positions_from_local(mesh, x0), full, A, B, qbar);
    // <H A, B> differentiated: contraction uses sym(A B^T), matching <H B, A>.
    const VectorXd fd = fd_gradient(inner, x0, 1e-5);
    CHECK(rel_err(qbar, fd) < 2e-5);
}

}  // namespace

TEST_CASE("stable neo-Hookean rest state is a critical point") {
    MaterialParams mat;
    mat.mu = 2.0;
    mat.lambda = 3.0;
    for (const Mesh& mesh : {single_triangle_2d(), single_tet(), single_membrane()}) {
        const ElementDerivatives ed = element_snh(mesh, mat, 0, mesh.vertices, true);
        CHECK(ed.gradient.lpNorm<Eigen::Infinity>() < 1e-12);
        CHECK(ed.energy == doctest::Approx(0.0).epsilon(1e-14));
    }
}

TEST_CASE("uniform scaling energy matches the density oracle") {
    MaterialParams mat;
    mat.mu = 1.0;
    mat.lambda = 1.0;
    const Mesh tri = single_triangle_2d();
    MatrixXd X = 2.0 * tri.vertices;
    double expected = 0.5 * density_oracle(2.0 * MatrixXd::Identity(2, 2), 1.0, 1.0);
    CHECK(rel_err(element_snh(tri, mat, 0, X, false).energy, expected) < 1e-12);

    const Mesh tet = single_tet();
    X = 2.0 * tet.vertices;
    expected = (1.0 / 6.0) * density_oracle(2.0 * MatrixXd::Identity(3, 3), 1.0, 1.0);
    CHECK(rel_err(element_snh(tet, mat, 0, X, false).energy, expected) < 1e-12);
}

TEST_CASE("inverted elements keep finite energy and gradient") {
    MaterialParams mat;
    mat.mu = 1.0;
    mat.lambda = 1.0;
    const Mesh tri = single_triangle_2d();
    MatrixXd X = tri.vertices;
    X(2, 1) = -1.0;  // reflect: det F < 0
    const ElementDerivatives ed = element_snh(tri, mat, 0, X, true);
    CHECK(std::isfinite(ed.energy));
    CHECK(ed.gradient.allFinite());
    CHECK(ed.hessian.allFinite());
    CHECK(deformation_gradient(tri, 0, X).determinant() < 0.0);
}

TEST_CASE("snh derivatives match finite differences") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        check_snh_derivatives(single_triangle_2d(), seed);
        check_snh_derivatives(single_tet(), seed + 100);
        check_snh_derivatives(single_membrane(), seed + 200);
    }
}

TEST_CASE("third-derivative contraction matches FD of the Hessian inner product") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        check_third_contraction(single_triangle_2d(), seed);
        check_third_contraction(single_tet(), seed + 50);
        check_third_contraction(single_membrane(), seed + 90);
    }
}

TEST_CASE("bending energy") {
    Mesh cloth = make_cloth_grid(1, 1, 1.0, 1.0);  // two triangles, one hinge
    REQUIRE(cloth.hinges.size() == 1);
    MaterialParams mat;
    mat.mu = 1.0;
    mat.lambda = 1.0;
    mat.bend_stiffness = 2.5;

    SUBCASE("flat rest state has zero energy and gradient") {
        const ElementDerivatives ed = element_bending(cloth, mat, 0, cloth.vertices, true);
        CHECK(ed.energy == doctest::Approx(0.0).epsilon(1e-18));
        CHECK(ed.gradient.lpNorm<Eigen::Infinity>() < 1e-9);
    }
    SUBCASE("90-degree fold matches the formula") {
        const Hinge& h = cloth.hinges[0];
        MatrixXd X = cloth.vertices;
        // Rotate the second opposite vertex about the shared edge (Rodrigues).
        const Eigen::Vector3d e0 = X.row(h.edge[0]), e1 = X.row(h.edge[1]);
        const Eigen::Vector3d axis = (e1 - e0).normalized();
        const Eigen::Vector3d rel = Eigen::Vector3d(X.row(h.opposite[1])) - e0;
        const Eigen::Vector3d para = rel.dot(axis) * axis;
        const Eigen::Vector3d perp = rel - para;
        const double theta = M_PI / 2.0;
        X.row(h.opposite[1]) =
            (e0 + para + perp * std::cos(theta) + axis.cross(perp) * std::sin(theta)).transpose();
        const ElementDerivatives ed = element_bending(cloth, mat, 0, X, false);
        const double expected = mat.bend_stiffness * h.rest_coeff * theta * theta;
        CHECK(rel_err(ed.energy, expected) < 1e-10);
    }
    SUBCASE("gradient and Hessian match finite differences") {
        Rng rng = substream(17, 0);
        for (int trial = 0; trial < 6; ++trial) {
            const VectorXd x0 = local_from_positions(cloth) +
                                testutil::random_vector(cloth.num_vertices() * 3, rng, 0.1);
            const Hinge& h = cloth.hinges[0];
            const int verts[4] = {h.edge[0], h.edge[1], h.opposite[0], h.opposite[1]};
            auto local_of = [&](const VectorXd& x) {
                VectorXd loc(12);
                for (int k = 0; k < 4; ++k)
                    for (int c = 0; c < 3; ++c) loc[3 * k + c] = x[3 * verts[k] + c];
                return loc;
            };
            auto energy = [&](const VectorXd& loc) {
                VectorXd x = x0;
                for (int k = 0; k < 4; ++k)
                    for (int c = 0; c < 3; ++c) x[3 * verts[k] + c] = loc[3 * k + c];
                return element_bending(cloth, mat, 0, positions_from_local(cloth, x), false).energy;
            };
            auto gradient = [&](const VectorXd& loc) {
                VectorXd x = x0;
                for (int k = 0; k < 4; ++k)
                    for (int c = 0; c < 3; ++c) x[3 * verts[k] + c] = loc[3 * k + c];
                return element_bending(cloth, mat, 0, positions_from_local(cloth, x), true).gradient;
            };
            const VectorXd loc0 = local_of(x0);
            const ElementDerivatives ed =
                element_bending(cloth, mat, 0, positions_from_local(cloth, x0), true);
            CHECK(rel_err(ed.gradient, fd_gradient(energy, loc0, 1e-6)) < 1e-6);
            CHECK(rel_err(ed.hessian, fd_jacobian(gradient, loc0, 1e-5)) < 1e-4);
        }
    }
    SUBCASE("degenerate triangle raises a hinge error") {
        MatrixXd X = cloth.vertices;
        const Hinge& h = cloth.hinges[0];
        X.row(h.opposite[0]) = 0.5 * (X.row(h.edge[0]) + X.row(h.edge[1]));  // collapse
        CHECK_THROWS_WITH_AS(element_bending(cloth, mat, 0, X, false),
                             doctest::Contains("hinge 0"), std::runtime_error);
    }
}

TEST_CASE("contact penalty") {
    MaterialParams mat;
    mat.contact_stiffness = 1e5;
    mat.contact_margin = 1e-3;
    VectorXd n(3);
    n << 0, 1, 0;
    const SdfShape plane = SdfShape::half_space(n, 0.0);

    SUBCASE("inactive outside the margin") {
        VectorXd x(3);
        x << 0.3, 0.5, 0.0;
        const ElementDerivatives ed = contact_penalty(mat, plane, x, true);
        CHECK(ed.energy == 0.0);
        CHECK(ed.gradient.norm() == 0.0);
    }
    SUBCASE("on the surface: k * margin^3") {
        VectorXd x(3);
        x << 0.1, 0.0, 0.2;
        const ElementDerivatives ed = contact_penalty(mat, plane, x, false);
        CHECK(rel_err(ed.energy, mat.contact_stiffness * std::pow(mat.contact_margin, 3)) < 1e-12);
    }
    SUBCASE("FD near the activation boundary") {
        Rng rng = substream(23, 0);
        const SdfShape ball = SdfShape::sphere((VectorXd(3) << 0, 0, 0).finished(), 0.5);
        for (int trial = 0; trial < 8; ++trial) {
            VectorXd x = testutil::random_vector(3, rng);
            x = x.normalized() * (0.5 + mat.contact_margin * randu(rng, -0.5, 0.9));
            auto energy = [&](const VectorXd& p) { return contact_penalty(mat, ball, p, false).energy; };
            const ElementDerivatives ed = contact_penalty(mat, ball, x, true);
            CHECK(rel_err(ed.gradient, fd_gradient(energy, x, 1e-7), 1e-9) < 1e-5);
            auto gradient = [&](const VectorXd& p) { return contact_penalty(mat, ball, p, true).gradient; };
            CHECK(rel_err(ed.hessian, fd_jacobian(gradient, x, 1e-6), 1e-9) < 1e-4);
        }
    }
}

TEST_CASE("assembly") {
    const Mesh bar = make_bar_2d(3, 2, 1.0, 0.4);
    MaterialParams mat;
    mat.mu = 2.0;
    mat.lambda = 1.5;
    const PotentialContext ctx(bar, mat);
    Rng rng = substream(31, 0);
    const VectorXd q = dof_pack(bar, bar.vertices) + testutil::random_vector(bar.num_dofs(), rng, 0.05);

    SUBCASE("full-weight subset is bit-identical to full assembly") {
        const ElementSubset full = ElementSubset::full(bar.num_elements());
        const AssembledPotential a = assemble(ctx, q, true);
        const AssembledPotential b = assemble(ctx, q, true, &full);
        CHECK(a.value == b.value);
        CHECK((a.gradient - b.gradient).norm() == 0.0);
        CHECK((MatrixXd(*a.hessian) - MatrixXd(*b.hessian)).norm() == 0.0);
    }
    SUBCASE("empty subset gives zero potential") {
        const ElementSubset empty;
        const AssembledPotential a = assemble(ctx, q, false, &empty);
        CHECK(a.value == 0.0);
        CHECK(a.gradient.norm() == 0.0);
    }
    SUBCASE("assembled value is the exact sum of singleton assemblies") {
        const AssembledPotential full = assemble(ctx, q, false);
        double total = 0.0;
        for (int e = 0; e < bar.num_elements(); ++e) {
            ElementSubset one;
            one.ids = {e};
            one.weights = VectorXd::Ones(1);
            total += assemble(ctx, q, false, &one).value;
        }
        // Same element order, so the sum matches to roundoff.
        CHECK(rel_err(total, full.value) < 1e-14);
    }
    SUBCASE("gradient matches FD of the assembled value") {
        auto value = [&](const VectorXd& qq) { return assemble(ctx, qq, false).value; };
        const AssembledPotential a = assemble(ctx, q, false);
        CHECK(rel_err(a.gradient, fd_gradient(value, q, 1e-6)) < 1e-6);
    }
    SUBCASE("sparse Hessian matches FD of the gradient") {
        auto grad = [&](const VectorXd& qq) { return assemble(ctx, qq, false).gradient; };
        const AssembledPotential a = assemble(ctx, q, true);
        CHECK(rel_err(MatrixXd(*a.hessian), fd_jacobian(grad, q, 1e-5)) < 1e-4);
    }
    SUBCASE("unloaded rest configuration is force-free") {
        const VectorXd q0 = dof_pack(bar, bar.vertices);
        CHECK(assemble(ctx, q0, false).gradient.lpNorm<Eigen::Infinity>() < 1e-8);
    }
    SUBCASE("hessian apply matches the sparse route") {
        const ElementSubset full = ElementSubset::full(bar.num_elements());
        const MatrixXd X = ctx.positions(q);
        const MatrixXd Y = testutil::random_matrix(bar.num_dofs(), 3, rng);
        MatrixXd out = MatrixXd::Zero(bar.num_dofs(), 3);
        elastic_hessian_apply(ctx, X, full, Y, out);
        const AssembledPotential a = assemble(ctx, q, true);
        CHECK(rel_err(out, MatrixXd(*a.hessian) * Y) < 1e-12);
    }
}

TEST_CASE("SPD projection") {
    SUBCASE("PSD input is returned unchanged") {
        MatrixXd A(2, 2);
        A << 2, 1, 1, 2;
        const MatrixXd P = project_spd(A);
        CHECK((P - A).norm() == 0.0);
    }
    SUBCASE("diag(1,-1) clamps to the floor") {
        MatrixXd A = MatrixXd::Zero(2, 2);
        A(0, 0) = 1.0;
        A(1, 1) = -1.0;
        const MatrixXd P = project_spd(A);
        CHECK(P(0, 0) == doctest::Approx(1.0));
        CHECK(P(1, 1) == doctest::Approx(1e-10));
    }
    SUBCASE("random symmetric blocks become PSD") {
        Rng rng = substream(41, 0);
        for (int trial = 0; trial < 12; ++trial) {
            MatrixXd A = testutil::random_matrix(5, 5, rng);
            A = 0.5 * (A + A.transpose()).eval();
            const MatrixXd P = project_spd(A);
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
            CHECK(es.eigenvalues().minCoeff() >= -1e-12);
            CHECK(rel_err(P, MatrixXd(P.transpose())) < 1e-12);
        }
    }
}
