#pragma once

#include <Eigen/Core>
#include <cmath>

namespace lipsub {

// Second-order forward-mode scalar: value plus exact gradient and Hessian
// with respect to N seed variables. Used where hand-deriving a Hessian is
// not worth the risk (the dihedral bending term).
template <int N>
struct Jet2 {
    using Grad = Eigen::Matrix<double, N, 1>;
    using Hess = Eigen::Matrix<double, N, N>;

    double v = 0.0;
    Grad g = Grad::Zero();
    Hess h = Hess::Zero();

    Jet2() = default;
    explicit Jet2(double value) : v(value) {}
    static Jet2 variable(double value, int index) {
        Jet2 j(value);
        j.g[index] = 1.0;
        return j;
    }

    Jet2 operator-() const {
        Jet2 r;
        r.v = -v; r.g = -g; r.h = -h;
        return r;
    }
};

template <int N>
Jet2<N> operator+(const Jet2<N>& a, const Jet2<N>& b) {
    Jet2<N> r;
    r.v = a.v + b.v; r.g = a.g + b.g; r.h = a.h + b.h;
    return r;
}
template <int N>
Jet2<N> operator-(const Jet2<N>& a, const Jet2<N>& b) {
    Jet2<N> r;
    r.v = a.v - b.v; r.g = a.g - b.g; r.h = a.h - b.h;
    return r;
}
template <int N>
Jet2<N> operator*(const Jet2<N>& a, const Jet2<N>& b) {
    Jet2<N> r;
    r.v = a.v * b.v;
    r.g = a.g * b.v + b.g * a.v;
    r.h = a.h * b.v + b.h * a.v + a.g * b.g.transpose() + b.g * a.g.transpose();
    return r;
}
template <int N>
Jet2<N> operator*(double c, const Jet2<N>& a) {
    Jet2<N> r;
    r.v = c * a.v; r.g = c * a.g; r.h = c * a.h;
    return r;
}
template <int N>
Jet2<N> operator+(const Jet2<N>& a, double c) {
    Jet2<N> r = a;
    r.v += c;
    return r;
}
template <int N>
Jet2<N> operator-(const Jet2<N>& a, double c) {
    Jet2<N> r = a;
    r.v -= c;
    return r;
}

// Composition with a scalar function given f(v), f'(v), f''(v).
template <int N>
Jet2<N> compose(const Jet2<N>& a, double f, double fp, double fpp) {
    Jet2<N> r;
    r.v = f;
    r.g = fp * a.g;
    r.h = fp * a.h + fpp * (a.g * a.g.transpose());
    return r;
}

template <int N>
Jet2<N> operator/(const Jet2<N>& a, const Jet2<N>& b) {
    const double inv = 1.0 / b.v;
    return a * compose(b, inv, -inv * inv, 2.0 * inv * inv * inv);
}

template <int N>
Jet2<N> sqrt(const Jet2<N>& a) {
    const double s = std::sqrt(a.v);
    return compose(a, s, 0.5 / s, -0.25 / (s * a.v));
}

template <int N>
Jet2<N> square(const Jet2<N>& a) {
    return a * a;
}

// atan2 with both arguments active; C-infinity away from the origin.
template <int N>
Jet2<N> atan2(const Jet2<N>& y, const Jet2<N>& x) {
    const double q = x.v * x.v + y.v * y.v;
    Jet2<N> r;
    r.v = std::atan2(y.v, x.v);
    // d atan2 = (x dy - y dx) / q
    r.g = (x.v * y.g - y.v * x.g) / q;
    // Hessian via product/chain rule on the gradient expression.
    const Eigen::Matrix<double, N, 1> dq = 2.0 * (x.v * x.g + y.v * y.g);
    Eigen::Matrix<double, N, N> num = x.g * y.g.transpose() + x.v * y.h
                                    - y.g * x.g.transpose() - y.v * x.h;
    r.h = num / q - ((x.v * y.g - y.v * x.g) / (q * q)) * dq.transpose();
    // Symmetrize: the mixed-term asymmetry above cancels analytically but
    // not always bit-exactly.
    r.h = 0.5 * (r.h + r.h.transpose()).eval();
    return r;
}

template <int N>
struct Jet2Vec3 {
    Jet2<N> x, y, z;

    static Jet2Vec3 from(const Eigen::Vector3d& p, int base_index) {
        Jet2Vec3 v;
        v.x = Jet2<N>::variable(p.x(), base_index);
        v.y = Jet2<N>::variable(p.y(), base_index + 1);
        v.z = Jet2<N>::variable(p.z(), base_index + 2);
        return v;
    }

    Jet2Vec3 operator-(const Jet2Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Jet2<N> dot(const Jet2Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Jet2Vec3 cross(const Jet2Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    Jet2<N> norm() const { return sqrt(x * x + y * y + z * z); }
};

}  // namespace lipsub
