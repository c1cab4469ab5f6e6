#include "lipsub/energy.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lipsub/jet.hpp"

namespace lipsub {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d s;
    s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return s;
}

inline VectorXd vec(const MatrixXd& m) {
    return Eigen::Map<const VectorXd>(m.data(), m.size());
}

inline MatrixXd unvec(const VectorXd& v, long rows, long cols) {
    return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

// ---- determinant machinery per element kind ---------------------------------
//
// The density below is a function of the trace invariant I = |F|^2 and a
// volume/area ratio J. J's gradient gJ and Hessian KJ (in vec(F) space) are
// what differs between planar triangles (J = det of 2x2), tetrahedra (det of
// 3x3) and membranes (J = sqrt(det F^T F) for 3x2 F).

struct JOps {
    double J = 0.0;
    VectorXd gJ;   // NF
    MatrixXd KJ;   // NF x NF
};

JOps j_ops_det2(const MatrixXd& F) {
    JOps o;
    o.J = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
    o.gJ.resize(4);
    o.gJ << F(1, 1), -F(0, 1), -F(1, 0), F(0, 0);
    o.KJ = MatrixXd::Zero(4, 4);
    o.KJ(0, 3) = o.KJ(3, 0) = 1.0;
    o.KJ(1, 2) = o.KJ(2, 1) = -1.0;
    return o;
}

MatrixXd kj_det3(const MatrixXd& F) {
    MatrixXd K = MatrixXd::Zero(9, 9);
    const Eigen::Vector3d f0 = F.col(0), f1 = F.col(1), f2 = F.col(2);
    K.block<3, 3>(0, 3) = -skew(f2);
    K.block<3, 3>(0, 6) = skew(f1);
    K.block<3, 3>(3, 0) = skew(f2);
    K.block<3, 3>(3, 6) = -skew(f0);
    K.block<3, 3>(6, 0) = -skew(f1);
    K.block<3, 3>(6, 3) = skew(f0);
    return K;
}

JOps j_ops_det3(const MatrixXd& F) {
    JOps o;
    o.J = F.determinant();
    const Eigen::Vector3d f0 = F.col(0), f1 = F.col(1), f2 = F.col(2);
    MatrixXd cof(3, 3);
    cof.col(0) = f1.cross(f2);
    cof.col(1) = f2.cross(f0);
    cof.col(2) = f0.cross(f1);
    o.gJ = vec(cof);
    o.KJ = kj_det3(F);
    return o;
}

struct MembraneD {
    double d = 0.0;
    VectorXd gd;  // 6
    MatrixXd Kd;  // 6 x 6
};

MembraneD membrane_d(const MatrixXd& F) {
    const Eigen::Vector3d f1 = F.col(0), f2 = F.col(1);
    const double a = f1.squaredNorm(), b = f2.squaredNorm(), c = f1.dot(f2);
    MembraneD m;
    m.d = a * b - c * c;
    m.gd.resize(6);
    m.gd.head<3>() = 2.0 * b * f1 - 2.0 * c * f2;
    m.gd.tail<3>() = 2.0 * a * f2 - 2.0 * c * f1;
    m.Kd.resize(6, 6);
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    m.Kd.block<3, 3>(0, 0) = 2.0 * b * I - 2.0 * f2 * f2.transpose();
    m.Kd.block<3, 3>(0, 3) = 4.0 * f1 * f2.transpose() - 2.0 * c * I - 2.0 * f2 * f1.transpose();
    m.Kd.block<3, 3>(3, 0) = m.Kd.block<3, 3>(0, 3).transpose();
    m.Kd.block<3, 3>(3, 3) = 2.0 * a * I - 2.0 * f1 * f1.transpose();
    return m;
}

JOps j_ops_membrane(const MatrixXd& F) {
    const MembraneD m = membrane_d(F);
    JOps o;
    o.J = std::sqrt(std::max(m.d, 1e-300));
    o.gJ = m.gd / (2.0 * o.J);
    o.KJ = m.Kd / (2.0 * o.J) - m.gd * m.gd.transpose() / (4.0 * o.J * o.J * o.J);
    return o;
}

JOps j_ops(const MatrixXd& F) {
    if (F.rows() == 2) return j_ops_det2(F);
    if (F.cols() == 3) return j_ops_det3(F);
    return j_ops_membrane(F);
}

// grad_F <KJ(F), M> for symmetric M. Zero for planar (KJ constant); for tets
// <KJ(F), M> is linear in F so the gradient falls out of basis evaluations.
VectorXd j_third(const MatrixXd& F, const MatrixXd& M) {
    if (F.rows() == 2) return VectorXd::Zero(4);
    if (F.cols() == 3) {
        VectorXd g(9);
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) {
                MatrixXd basis = MatrixXd::Zero(3, 3);
                basis(i, j) = 1.0;
                g[i + 3 * j] = kj_det3(basis).cwiseProduct(M).sum();
            }
        return g;
    }
    // Membrane: chain rule through J = sqrt(d).
    const MembraneD m = membrane_d(F);
    const double J = std::sqrt(std::max(m.d, 1e-300));
    const double J3 = J * J * J, J5 = J3 * J * J;
    const Eigen::Matrix3d M11 = M.block<3, 3>(0, 0);
    const Eigen::Matrix3d M12 = M.block<3, 3>(0, 3);
    const Eigen::Matrix3d M22 = M.block<3, 3>(3, 3);
    const Eigen::Vector3d f1 = F.col(0), f2 = F.col(1);
    // grad_F <Kd(F), M>  (Kd is quadratic in F).
    VectorXd TdM(6);
    TdM.head<3>() = 4.0 * (M22.trace() * f1 - M22 * f1 + 2.0 * M12 * f2 - M12.trace() * f2 -
                           M12.transpose() * f2);
    TdM.tail<3>() = 4.0 * (M11.trace() * f2 - M11 * f2 + 2.0 * M12.transpose() * f1 -
                           M12.trace() * f1 - M12 * f1);
    const double kdM = m.Kd.cwiseProduct(M).sum();
    const VectorXd Mgd = M * m.gd;
    const double gMg = m.gd.dot(Mgd);
    return TdM / (2.0 * J) - kdM * m.gd / (4.0 * J3) - (m.Kd * Mgd) / (2.0 * J3) +
           (3.0 / 8.0) * gMg * m.gd / J5;
}

// ---- stable neo-Hookean density ---------------------------------------------

// Deformation gradient together with the strain increment A = F - I formed
// from displacement differences. Energy differences near the rest state would
// otherwise drown in cancellation at stiff moduli, which stalls line searches.
struct ElementFrame {
    MatrixXd F;
    MatrixXd A;
};

ElementFrame element_frame(const Mesh& mesh, int element_id, const MatrixXd& positions) {
    const auto row = mesh.elements.row(element_id);
    const int dw = mesh.dim, de = mesh.elem_dim;
    MatrixXd ds(dw, de), ds_rest(dw, de);
    for (int c = 0; c < de; ++c) {
        ds.col(c) = (positions.row(row[c + 1]) - positions.row(row[0])).transpose();
        ds_rest.col(c) = (mesh.vertices.row(row[c + 1]) - mesh.vertices.row(row[0])).transpose();
    }
    ElementFrame frame;
    frame.A = (ds - ds_rest) * mesh.rest_inverse[element_id];
    frame.F = ds * mesh.rest_inverse[element_id];
    return frame;
}

// J - 1 without cancellation, from the strain increment.
double j_minus_one(const MatrixXd& A) {
    if (A.rows() == 2) return A(0, 0) + A(1, 1) + (A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0));
    if (A.cols() == 3) {
        const double tr = A.trace();
        const double m2 = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0) + A(0, 0) * A(2, 2) -
                          A(0, 2) * A(2, 0) + A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1);
        return tr + m2 + A.determinant();
    }
    // Membrane: C = F^T F = I + B with B = Itop^T A + A^T Itop + A^T A.
    Eigen::Matrix2d B = A.topRows<2>() + A.topRows<2>().transpose() + (A.transpose() * A);
    const double dm1 = B.trace() + B.determinant();  // det C - 1
    return dm1 / (1.0 + std::sqrt(std::max(1.0 + dm1, 0.0)));
}

struct SnhCore {
    double I = 0.0;
    JOps j;
    double psi = 0.0, psiI = 0.0, psiJ = 0.0, psiII = 0.0, psiJJ = 0.0, psiIII = 0.0;
    VectorXd gI;
};

SnhCore snh_core(const ElementFrame& frame, double mu, double lambda) {
    const MatrixXd& F = frame.F;
    SnhCore c;
    const double de = static_cast<double>(F.cols());
    const double a = de / (de + 1.0);
    // |F|^2 - de = 2 <I, A> + |A|^2, accurate for small strains.
    double trA = 0.0;
    for (long i = 0; i < F.cols(); ++i) trA += frame.A(i, i);
    const double i_minus = 2.0 * trA + frame.A.squaredNorm();
    const double jm1 = j_minus_one(frame.A);
    c.I = de + i_minus;
    c.j = j_ops(F);
    c.psi = 0.5 * mu * i_minus - 0.5 * mu * std::log1p(i_minus / (de + 1.0)) +
            0.5 * lambda * jm1 * jm1 - a * mu * jm1;
    const double u = c.I + 1.0;
    c.psiI = 0.5 * mu * (1.0 - 1.0 / u);
    c.psiII = 0.5 * mu / (u * u);
    c.psiIII = -mu / (u * u * u);
    c.psiJ = lambda * jm1 - a * mu;
    c.psiJJ = lambda;
    c.gI = 2.0 * vec(F);
    return c;
}

std::vector<int> vertex_dof_map(const Mesh& mesh, const int* verts, int count) {
    std::vector<int> map(static_cast<std::size_t>(count) * mesh.dim);
    for (int k = 0; k < count; ++k) {
        const int f = mesh.free_index[verts[k]];
        for (int c = 0; c < mesh.dim; ++c)
            map[k * mesh.dim + c] = f < 0 ? -1 : f * mesh.dim + c;
    }
    return map;
}

MatrixXd gather_local(const std::vector<int>& dof_map, const MatrixXd& global) {
    MatrixXd local = MatrixXd::Zero(static_cast<long>(dof_map.size()), global.cols());
    for (std::size_t i = 0; i < dof_map.size(); ++i)
        if (dof_map[i] >= 0) local.row(static_cast<long>(i)) = global.row(dof_map[i]);
    return local;
}

void scatter_local(const std::vector<int>& dof_map, const MatrixXd& local, MatrixXd& global,
                   double w) {
    for (std::size_t i = 0; i < dof_map.size(); ++i)
        if (dof_map[i] >= 0) global.row(dof_map[i]) += w * local.row(static_cast<long>(i));
}

}  // namespace

Eigen::MatrixXd deformation_gradient(const Mesh& mesh, int element_id,
                                     const Eigen::MatrixXd& positions) {
    const auto row = mesh.elements.row(element_id);
    MatrixXd ds(mesh.dim, mesh.elem_dim);
    for (int c = 0; c < mesh.elem_dim; ++c)
        ds.col(c) = (positions.row(row[c + 1]) - positions.row(row[0])).transpose();
    return ds * mesh.rest_inverse[element_id];
}

Eigen::MatrixXd element_shape_matrix(const Mesh& mesh, int element_id) {
    const int dw = mesh.dim, de = mesh.elem_dim;
    const MatrixXd& dminv = mesh.rest_inverse[element_id];
    MatrixXd B = MatrixXd::Zero(dw * de, dw * (de + 1));
    // F_{ab} = sum_c (x[c+1]_a - x[0]_a) Dminv_{cb}
    for (int b = 0; b < de; ++b)
        for (int a = 0; a < dw; ++a) {
            const int fidx = a + dw * b;
            for (int c = 0; c < de; ++c) {
                B(fidx, (c + 1) * dw + a) += dminv(c, b);
                B(fidx, a) -= dminv(c, b);
            }
        }
    return B;
}

std::vector<int> element_dof_map(const Mesh& mesh, int element_id) {
    const auto row = mesh.elements.row(element_id);
    std::vector<int> verts(mesh.elem_dim + 1);
    for (int k = 0; k <= mesh.elem_dim; ++k) verts[k] = row[k];
    return vertex_dof_map(mesh, verts.data(), mesh.elem_dim + 1);
}

ElementDerivatives element_snh(const Mesh& mesh, const MaterialParams& mat, int element_id,
                               const Eigen::MatrixXd& positions, bool want_hessian) {
    const MatrixXd F = deformation_gradient(mesh, element_id, positions);
    const SnhCore c = snh_core(F, mat.mu, mat.lambda);
    const MatrixXd B = element_shape_matrix(mesh, element_id);
    const double vol = mesh.rest_measure[element_id];

    ElementDerivatives out;
    out.energy = vol * c.psi;
    const VectorXd gradF = c.psiI * c.gI + c.psiJ * c.j.gJ;
    out.gradient = vol * (B.transpose() * gradF);
    if (want_hessian) {
        const long nf = F.size();
        MatrixXd hf = c.psiII * c.gI * c.gI.transpose() + c.psiJJ * c.j.gJ * c.j.gJ.transpose() +
                      2.0 * c.psiI * MatrixXd::Identity(nf, nf) + c.psiJ * c.j.KJ;
        out.hessian = vol * (B.transpose() * hf * B);
    }
    return out;
}

namespace {

// grad_x <H_e(x), M> for one simplex element, M symmetric in local DOFs.
VectorXd snh_third_contraction(const Mesh& mesh, const MaterialParams& mat, int element_id,
                               const Eigen::MatrixXd& positions, const MatrixXd& M_local) {
    const MatrixXd F = deformation_gradient(mesh, element_id, positions);
    const SnhCore c = snh_core(F, mat.mu, mat.lambda);
    const MatrixXd B = element_shape_matrix(mesh, element_id);
    const double vol = mesh.rest_measure[element_id];

    const MatrixXd MF = B * M_local * B.transpose();
    const double trM = MF.trace();
    const VectorXd MgI = MF * c.gI;
    const VectorXd MgJ = MF * c.j.gJ;
    const double qII = c.gI.dot(MgI);
    const double kJM = c.j.KJ.cwiseProduct(MF).sum();

    VectorXd v = c.psiIII * qII * c.gI + 4.0 * c.psiII * MgI + 2.0 * c.psiJJ * (c.j.KJ * MgJ) +
                 2.0 * trM * c.psiII * c.gI + c.psiJJ * kJM * c.j.gJ + c.psiJ * j_third(F, MF);
    return vol * (B.transpose() * v);
}

}  // namespace

ElementDerivatives element_bending(const Mesh& mesh, const MaterialParams& mat, int hinge_id,
                                   const Eigen::MatrixXd& positions, bool want_hessian) {
    (void)want_hessian;  // the jet carries the Hessian either way
    const Hinge& h = mesh.hinges[hinge_id];
    using J = Jet2<12>;
    const Jet2Vec3<12> x0 = Jet2Vec3<12>::from(positions.row(h.edge[0]), 0);
    const Jet2Vec3<12> x1 = Jet2Vec3<12>::from(positions.row(h.edge[1]), 3);
    const Jet2Vec3<12> x2 = Jet2Vec3<12>::from(positions.row(h.opposite[0]), 6);
    const Jet2Vec3<12> x3 = Jet2Vec3<12>::from(positions.row(h.opposite[1]), 9);

    const Jet2Vec3<12> e = x1 - x0;
    const Jet2Vec3<12> n1 = e.cross(x2 - x0);
    const Jet2Vec3<12> n2 = (x3 - x0).cross(e);
    const double area_scale = mesh.rest_measure.size() > 0 ? mesh.rest_measure.mean() : 1.0;
    if (n1.norm().v < 1e-12 * area_scale || n2.norm().v < 1e-12 * area_scale)
        throw std::runtime_error("bending: degenerate triangle at hinge " + std::to_string(hinge_id));

    const J s = n1.cross(n2).dot(e) / e.norm();
    const J ctheta = n1.dot(n2);
    const J theta = atan2(s, ctheta);
    const J energy = mat.bend_stiffness * h.rest_coeff * square(theta - h.rest_angle);

    ElementDerivatives out;
    out.energy = energy.v;
    out.gradient = energy.g;
    out.hessian = energy.h;
    return out;
}

ElementDerivatives contact_penalty(const MaterialParams& mat, const SdfShape& sdf,
                                   const Eigen::VectorXd& x, bool want_hessian) {
    const long d = x.size();
    ElementDerivatives out;
    out.gradient = VectorXd::Zero(d);
    if (want_hessian) out.hessian = MatrixXd::Zero(d, d);
    const double p = mat.contact_margin - sdf.value(x);
    if (p <= 0.0) return out;
    const double k = mat.contact_stiffness;
    const VectorXd g = sdf.gradient(x);
    out.energy = k * p * p * p;
    out.gradient = -3.0 * k * p * p * g;
    if (want_hessian)
        out.hessian = 6.0 * k * p * g * g.transpose() - 3.0 * k * p * p * sdf.hessian(x);
    return out;
}

Eigen::MatrixXd project_spd(const Eigen::MatrixXd& hessian) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(hessian);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("project_spd: eigendecomposition failed");
    VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() >= 0.0) return hessian;
    const double floor = 1e-10 * std::max(ev.maxCoeff(), 0.0);
    for (long i = 0; i < ev.size(); ++i)
        if (ev[i] < 0.0) ev[i] = floor;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void scatter_gradient(const std::vector<int>& dof_map, const VectorXd& local, double w,
                      VectorXd& global) {
    for (std::size_t i = 0; i < dof_map.size(); ++i)
        if (dof_map[i] >= 0) global[dof_map[i]] += w * local[static_cast<long>(i)];
}

void scatter_hessian(const std::vector<int>& dof_map, const MatrixXd& local, double w,
                     std::vector<Eigen::Triplet<double>>& triplets) {
    for (std::size_t i = 0; i < dof_map.size(); ++i) {
        if (dof_map[i] < 0) continue;
        for (std::size_t j = 0; j < dof_map.size(); ++j) {
            if (dof_map[j] < 0) continue;
            triplets.emplace_back(dof_map[i], dof_map[j],
                                  w * local(static_cast<long>(i), static_cast<long>(j)));
        }
    }
}

}  // namespace

AssembledPotential assemble(const PotentialContext& ctx, const Eigen::VectorXd& q,
                            bool want_hessian, const ElementSubset* subset,
                            const PotentialTerms& terms, bool project_elements) {
    const Mesh& mesh = *ctx.mesh;
    const MaterialParams& mat = *ctx.mat;
    if (q.size() != mesh.num_dofs()) throw std::invalid_argument("assemble: q has wrong length");
    const MatrixXd X = ctx.positions(q);
    const int n = mesh.num_dofs();

    AssembledPotential out;
    out.gradient = VectorXd::Zero(n);
    std::vector<Eigen::Triplet<double>> triplets;

    if (terms.elastic) {
        const ElementSubset full = subset ? ElementSubset{} : ElementSubset::full(mesh.num_elements());
        const std::vector<int>& ids = subset ? subset->ids : full.ids;
        const VectorXd& weights = subset ? subset->weights : full.weights;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const int e = ids[k];
            const double w = weights[static_cast<long>(k)];
            ElementDerivatives ed;
            try {
                ed = element_snh(mesh, mat, e, X, want_hessian);
            } catch (const std::exception& err) {
                throw std::runtime_error("assemble: element " + std::to_string(e) + ": " + err.what());
            }
            const auto dof_map = element_dof_map(mesh, e);
            out.value += w * ed.energy;
            scatter_gradient(dof_map, ed.gradient, w, out.gradient);
            if (want_hessian) {
                if (project_elements) ed.hessian = project_spd(ed.hessian);
                scatter_hessian(dof_map, ed.hessian, w, triplets);
            }
        }
    }

    if (terms.bending && mat.bend_stiffness > 0.0) {
        for (std::size_t h = 0; h < mesh.hinges.size(); ++h) {
            const ElementDerivatives ed =
                element_bending(mesh, mat, static_cast<int>(h), X, want_hessian);
            const Hinge& hinge = mesh.hinges[h];
            const int verts[4] = {hinge.edge[0], hinge.edge[1], hinge.opposite[0], hinge.opposite[1]};
            const auto dof_map = vertex_dof_map(mesh, verts, 4);
            out.value += ed.energy;
            scatter_gradient(dof_map, ed.gradient, 1.0, out.gradient);
            if (want_hessian) {
                MatrixXd hess = project_elements ? project_spd(ed.hessian) : ed.hessian;
                scatter_hessian(dof_map, hess, 1.0, triplets);
            }
        }
    }

    if (terms.contact && !ctx.colliders.empty()) {
        for (int v = 0; v < mesh.num_vertices(); ++v) {
            const VectorXd x = X.row(v).transpose();
            for (const SdfShape& sdf : ctx.colliders) {
                const ElementDerivatives ed = contact_penalty(mat, sdf, x, want_hessian);
                if (ed.energy == 0.0 && ed.gradient.isZero(0.0)) continue;
                const auto dof_map = vertex_dof_map(mesh, &v, 1);
                out.value += ed.energy;
                scatter_gradient(dof_map, ed.gradient, 1.0, out.gradient);
                if (want_hessian) {
                    MatrixXd hess = project_elements ? project_spd(ed.hessian) : ed.hessian;
                    scatter_hessian(dof_map, hess, 1.0, triplets);
                }
            }
        }
    }

    if (want_hessian) {
        Eigen::SparseMatrix<double> H(n, n);
        H.setFromTriplets(triplets.begin(), triplets.end());
        out.hessian = std::move(H);
    }
    return out;
}

void elastic_hessian_apply(const PotentialContext& ctx, const Eigen::MatrixXd& positions,
                           const ElementSubset& subset, const Eigen::MatrixXd& in,
                           Eigen::MatrixXd& out) {
    const Mesh& mesh = *ctx.mesh;
    for (std::size_t k = 0; k < subset.ids.size(); ++k) {
        const int e = subset.ids[k];
        const double w = subset.weights[static_cast<long>(k)];
        const ElementDerivatives ed = element_snh(mesh, *ctx.mat, e, positions, true);
        const auto dof_map = element_dof_map(mesh, e);
        const MatrixXd local_in = gather_local(dof_map, in);
        scatter_local(dof_map, ed.hessian * local_in, out, w);
    }
}

void elastic_third_contraction(const PotentialContext& ctx, const Eigen::MatrixXd& positions,
                               const ElementSubset& subset, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B, Eigen::VectorXd& qbar) {
    const Mesh& mesh = *ctx.mesh;
    for (std::size_t k = 0; k < subset.ids.size(); ++k) {
        const int e = subset.ids[k];
        const double w = subset.weights[static_cast<long>(k)];
        const auto dof_map = element_dof_map(mesh, e);
        const MatrixXd Ae = gather_local(dof_map, A);
        const MatrixXd Be = gather_local(dof_map, B);
        const MatrixXd M = 0.5 * (Ae * Be.transpose() + Be * Ae.transpose());
        const VectorXd local = snh_third_contraction(mesh, *ctx.mat, e, positions, M);
        for (std::size_t i = 0; i < dof_map.size(); ++i)
            if (dof_map[i] >= 0) qbar[dof_map[i]] += w * local[static_cast<long>(i)];
    }
}

}  // namespace lipsub
