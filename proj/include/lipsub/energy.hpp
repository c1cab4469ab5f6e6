#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <optional>
#include <vector>

#include "lipsub/mesh.hpp"
#include "lipsub/sdf.hpp"

namespace lipsub {

// Value / local gradient / local Hessian of one energy term, stacked over the
// term's local DOFs (dim * (elem_dim + 1) for simplices, 12 for hinges, dim
// for contact vertices).
struct ElementDerivatives {
    double energy = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Weighted element subset used both for cubature-restricted training sums and
// for runtime cubature. The full set with unit weights shares the same code
// path as plain assembly, so the two are bit-identical.
struct ElementSubset {
    std::vector<int> ids;
    Eigen::VectorXd weights;

    static ElementSubset full(int num_elements) {
        ElementSubset s;
        s.ids.resize(num_elements);
        for (int e = 0; e < num_elements; ++e) s.ids[e] = e;
        s.weights = Eigen::VectorXd::Ones(num_elements);
        return s;
    }
};

struct PotentialTerms {
    bool elastic = true;
    bool bending = true;
    bool contact = true;
};

// Everything needed to evaluate the potential of a configuration: mesh,
// material, prescribed pin positions and collision geometry.
struct PotentialContext {
    const Mesh* mesh = nullptr;
    const MaterialParams* mat = nullptr;
    Eigen::MatrixXd pin_positions;  // V x dim (pinned rows are read)
    std::vector<SdfShape> colliders;

    PotentialContext() = default;
    PotentialContext(const Mesh& m, const MaterialParams& p) : mesh(&m), mat(&p) {
        pin_positions = m.vertices;
    }

    Eigen::MatrixXd positions(const Eigen::VectorXd& q) const {
        return dof_unpack(*mesh, q, pin_positions);
    }
};

struct AssembledPotential {
    double value = 0.0;
    Eigen::VectorXd gradient;  // free DOFs
    std::optional<Eigen::SparseMatrix<double>> hessian;
};

// Stable neo-Hookean simplex energy; finite for any deformation gradient,
// including inverted elements. Handles planar triangles, tetrahedra and
// 3D membranes (triangles embedded in 3D). See MATERIALS.md for the density.
ElementDerivatives element_snh(const Mesh& mesh, const MaterialParams& mat, int element_id,
                               const Eigen::MatrixXd& positions, bool want_hessian = true);

// Hinge bending: bend_stiffness * rest_coeff * (theta - theta_rest)^2 over
// the 12 DOFs (edge endpoints then opposite vertices).
ElementDerivatives element_bending(const Mesh& mesh, const MaterialParams& mat, int hinge_id,
                                   const Eigen::MatrixXd& positions, bool want_hessian = true);

// Cubic penalty for one vertex against one SDF:
// contact_stiffness * max(0, margin - sdf(x))^3, C^2 at the boundary.
ElementDerivatives contact_penalty(const MaterialParams& mat, const SdfShape& sdf,
                                   const Eigen::VectorXd& x, bool want_hessian = true);

// Deformation gradient of one element (dim x elem_dim).
Eigen::MatrixXd deformation_gradient(const Mesh& mesh, int element_id,
                                     const Eigen::MatrixXd& positions);

// d vec(F) / d x_local; constant per element.
Eigen::MatrixXd element_shape_matrix(const Mesh& mesh, int element_id);

// Local DOF -> free DOF map of one element (-1 for pinned coordinates).
std::vector<int> element_dof_map(const Mesh& mesh, int element_id);

// Global potential. With `subset` the elastic sum is restricted to the
// weighted elements; bending and contact terms are always full. The value
// includes contributions of pinned vertices, the gradient/Hessian cover free
// DOFs only. `project_elements` applies the SPD projection to each local
// Hessian before scatter.
AssembledPotential assemble(const PotentialContext& ctx, const Eigen::VectorXd& q,
                            bool want_hessian = false, const ElementSubset* subset = nullptr,
                            const PotentialTerms& terms = {}, bool project_elements = false);

// Clamps negative eigenvalues of a symmetric matrix to 1e-10 times the
// largest eigenvalue; returns the input bit-exactly when already PSD.
Eigen::MatrixXd project_spd(const Eigen::MatrixXd& hessian);

// out += sum_e w_e scatter_e(H_e * gather_e(in)), elastic terms only.
// `in` and `out` are n x k over free DOFs.
void elastic_hessian_apply(const PotentialContext& ctx, const Eigen::MatrixXd& positions,
                           const ElementSubset& subset, const Eigen::MatrixXd& in,
                           Eigen::MatrixXd& out);

// qbar += sum_e w_e  d/dx < H_e(x), sym(gather_e(A) gather_e(B)^T) >,
// the exact adjoint of elastic_hessian_apply with respect to positions.
void elastic_third_contraction(const PotentialContext& ctx, const Eigen::MatrixXd& positions,
                               const ElementSubset& subset, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B, Eigen::VectorXd& qbar);

}  // namespace lipsub
