#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace lipsub {

// Analytic signed-distance primitives used for penalty contact. Value,
// gradient and Hessian are exact; the sphere Hessian is singular only at the
// center, which penalty contact never reaches in practice.
struct SdfShape {
    enum class Kind { HalfSpace, Sphere };
    Kind kind = Kind::HalfSpace;
    Eigen::VectorXd normal;  // half-space: unit outward normal
    double offset = 0.0;     // half-space: sdf = normal . x - offset
    Eigen::VectorXd center;  // sphere
    double radius = 0.0;

    static SdfShape half_space(const Eigen::VectorXd& n, double offset) {
        SdfShape s;
        s.kind = Kind::HalfSpace;
        s.normal = n.normalized();
        s.offset = offset;
        return s;
    }
    static SdfShape sphere(const Eigen::VectorXd& c, double r) {
        SdfShape s;
        s.kind = Kind::Sphere;
        s.center = c;
        s.radius = r;
        return s;
    }

    double value(const Eigen::VectorXd& x) const {
        switch (kind) {
            case Kind::HalfSpace: return normal.dot(x) - offset;
            case Kind::Sphere: return (x - center).norm() - radius;
        }
        throw std::logic_error("sdf: bad kind");
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
        switch (kind) {
            case Kind::HalfSpace: return normal;
            case Kind::Sphere: {
                const Eigen::VectorXd d = x - center;
                const double r = d.norm();
                if (r <= 1e-14) return Eigen::VectorXd::Zero(x.size());
                return d / r;
            }
        }
        throw std::logic_error("sdf: bad kind");
    }

    Eigen::MatrixXd hessian(const Eigen::VectorXd& x) const {
        const long d = x.size();
        switch (kind) {
            case Kind::HalfSpace: return Eigen::MatrixXd::Zero(d, d);
            case Kind::Sphere: {
                const Eigen::VectorXd u = x - center;
                const double r = u.norm();
                if (r <= 1e-14) return Eigen::MatrixXd::Zero(d, d);
                return (Eigen::MatrixXd::Identity(d, d) - (u / r) * (u / r).transpose()) / r;
            }
        }
        throw std::logic_error("sdf: bad kind");
    }
};

}  // namespace lipsub
