#pragma once

#include <Eigen/Dense>
#include <functional>

#include "lipsub/mesh.hpp"
#include "lipsub/net.hpp"
#include "lipsub/rng.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max(std::abs(b), floor);
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-12) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

// Central differences of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (long i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Central differences of a vector function, one column per input coordinate.
inline Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-6) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    Eigen::VectorXd xp = x;
    for (long i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const Eigen::VectorXd fp = f(xp);
        xp[i] = x[i] - h;
        const Eigen::VectorXd fm = f(xp);
        xp[i] = x[i];
        J.col(i) = (fp - fm) / (2.0 * h);
    }
    return J;
}

inline Eigen::VectorXd random_vector(long n, lipsub::Rng& rng, double scale = 1.0) {
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) v[i] = scale * lipsub::randn(rng);
    return v;
}

inline Eigen::MatrixXd random_matrix(long rows, long cols, lipsub::Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (long j = 0; j < cols; ++j)
        for (long i = 0; i < rows; ++i) m(i, j) = scale * lipsub::randn(rng);
    return m;
}

// Independent plain-loop forward pass used as the decode oracle.
inline Eigen::VectorXd plain_decode(const lipsub::SubspaceModel& m, const Eigen::VectorXd& z) {
    std::vector<double> cur(z.data(), z.data() + z.size());
    for (const lipsub::Layer& l : m.decoder) {
        std::vector<double> next(l.W.rows());
        for (long i = 0; i < l.W.rows(); ++i) {
            double acc = l.b[i];
            for (long j = 0; j < l.W.cols(); ++j) acc += l.W(i, j) * cur[j];
            next[i] = lipsub::activation_eval(l.act, acc, 0);
        }
        cur = std::move(next);
    }
    Eigen::VectorXd q(m.n);
    for (int i = 0; i < m.n; ++i) q[i] = m.norm_scale[i] * cur[i] + m.norm_shift[i];
    return q;
}

// Small random-ish supervised model for derivative tests.
inline lipsub::SubspaceModel tiny_model(int r, int n, int hidden, int width, std::uint64_t seed,
                                        bool supervised = true) {
    lipsub::Rng rng = lipsub::substream(seed, 99);
    return lipsub::make_mlp_model(r, n, hidden, width, lipsub::Activation::Silu, supervised, rng);
}

}  // namespace testutil
