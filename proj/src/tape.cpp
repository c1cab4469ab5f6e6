#include "lipsub/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Var Tape::push(MatrixXd value, std::function<void(Tape&, const MatrixXd&)> backward) {
    Node node;
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

MatrixXd& Tape::adj(Var v) {
    Node& node = nodes_[v.idx];
    if (!node.has_adj) {
        node.adj = MatrixXd::Zero(node.value.rows(), node.value.cols());
        node.has_adj = true;
    }
    return node.adj;
}

Var Tape::constant(const MatrixXd& value) { return push(value, nullptr); }

Var Tape::scalar_constant(double value) {
    MatrixXd m(1, 1);
    m(0, 0) = value;
    return push(std::move(m), nullptr);
}

Var Tape::param(int param_id, const MatrixXd& value) {
    auto it = param_nodes_.find(param_id);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(value, nullptr);
    param_nodes_[param_id] = v.idx;
    return v;
}

void Tape::backward(Var loss) {
    const Node& root = nodes_[loss.idx];
    if (root.value.size() != 1) throw std::invalid_argument("tape: loss must be a 1x1 node");
    if (!std::isfinite(root.value(0, 0)))
        throw std::runtime_error("tape: non-finite loss at node " + std::to_string(loss.idx));
    adj(loss)(0, 0) += 1.0;
    for (int i = loss.idx; i >= 0; --i) {
        Node& node = nodes_[i];
        if (!node.has_adj || !node.backward) continue;
        if (!node.adj.allFinite())
            throw std::runtime_error("tape: non-finite adjoint at node " + std::to_string(i));
        node.backward(*this, node.adj);
    }
}

MatrixXd Tape::param_gradient(int param_id, long rows, long cols) const {
    auto it = param_nodes_.find(param_id);
    if (it == param_nodes_.end()) return MatrixXd::Zero(rows, cols);
    const Node& node = nodes_[it->second];
    if (!node.has_adj) return MatrixXd::Zero(rows, cols);
    return node.adj;
}

MatrixXd Tape::adjoint_of(Var v) const {
    const Node& node = nodes_[v.idx];
    if (!node.has_adj) return MatrixXd::Zero(node.value.rows(), node.value.cols());
    return node.adj;
}

Var Tape::add(Var a, Var b) {
    return push(value(a) + value(b), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a) += out;
        t.adj(b) += out;
    });
}

Var Tape::sub(Var a, Var b) {
    return push(value(a) - value(b), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a) += out;
        t.adj(b) -= out;
    });
}

Var Tape::matmul(Var a, Var b) {
    return push(value(a) * value(b), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a).noalias() += out * t.value(b).transpose();
        t.adj(b).noalias() += t.value(a).transpose() * out;
    });
}

Var Tape::matmul_tn(Var a, Var b) {
    return push(value(a).transpose() * value(b), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a).noalias() += t.value(b) * out.transpose();
        t.adj(b).noalias() += t.value(a) * out;
    });
}

Var Tape::hadamard(Var a, Var b) {
    return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a) += out.cwiseProduct(t.value(b));
        t.adj(b) += out.cwiseProduct(t.value(a));
    });
}

Var Tape::scale(Var a, double c) {
    return push(c * value(a), [a, c](Tape& t, const MatrixXd& out) { t.adj(a) += c * out; });
}

Var Tape::cmul(Var a, Var s) {
    if (value(s).size() != 1) throw std::invalid_argument("tape: cmul needs a 1x1 scalar node");
    return push(scalar(s) * value(a), [a, s](Tape& t, const MatrixXd& out) {
        t.adj(a) += t.scalar(s) * out;
        t.adj(s)(0, 0) += out.cwiseProduct(t.value(a)).sum();
    });
}

Var Tape::act_map(Var a, Activation act, int order) {
    const MatrixXd& x = value(a);
    MatrixXd y(x.rows(), x.cols());
    for (long j = 0; j < x.cols(); ++j)
        for (long i = 0; i < x.rows(); ++i) y(i, j) = activation_eval(act, x(i, j), order);
    return push(std::move(y), [a, act, order](Tape& t, const MatrixXd& out) {
        const MatrixXd& x = t.value(a);
        MatrixXd& ga = t.adj(a);
        for (long j = 0; j < x.cols(); ++j)
            for (long i = 0; i < x.rows(); ++i)
                ga(i, j) += out(i, j) * activation_eval(act, x(i, j), order + 1);
    });
}

Var Tape::column(Var a, long j) {
    return push(value(a).col(j), [a, j](Tape& t, const MatrixXd& out) {
        t.adj(a).col(j) += out;
    });
}

Var Tape::dot(Var a, Var b) {
    MatrixXd s(1, 1);
    s(0, 0) = value(a).cwiseProduct(value(b)).sum();
    return push(std::move(s), [a, b](Tape& t, const MatrixXd& out) {
        t.adj(a) += out(0, 0) * t.value(b);
        t.adj(b) += out(0, 0) * t.value(a);
    });
}

Var Tape::sum(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("tape: sum of nothing");
    MatrixXd total = value(xs[0]);
    for (std::size_t i = 1; i < xs.size(); ++i) total += value(xs[i]);
    return push(std::move(total), [xs](Tape& t, const MatrixXd& out) {
        for (Var x : xs) t.adj(x) += out;
    });
}

Var Tape::weighted_sqnorm(Var a, const VectorXd& w) {
    const MatrixXd& x = value(a);
    if (x.cols() != 1 || x.rows() != w.size())
        throw std::invalid_argument("tape: weighted_sqnorm shape mismatch");
    MatrixXd s(1, 1);
    s(0, 0) = (w.array() * x.col(0).array().square()).sum();
    return push(std::move(s), [a, w](Tape& t, const MatrixXd& out) {
        t.adj(a).col(0) += 2.0 * out(0, 0) * w.cwiseProduct(t.value(a).col(0));
    });
}

Var Tape::clog(Var s) {
    MatrixXd v(1, 1);
    v(0, 0) = std::log(scalar(s));
    return push(std::move(v), [s](Tape& t, const MatrixXd& out) {
        t.adj(s)(0, 0) += out(0, 0) / t.scalar(s);
    });
}

Var Tape::csqrt(Var s) {
    MatrixXd v(1, 1);
    v(0, 0) = std::sqrt(scalar(s));
    const double root = v(0, 0);
    return push(std::move(v), [s, root](Tape& t, const MatrixXd& out) {
        t.adj(s)(0, 0) += out(0, 0) * 0.5 / root;
    });
}

Var Tape::csquare(Var s) {
    MatrixXd v(1, 1);
    v(0, 0) = scalar(s) * scalar(s);
    return push(std::move(v), [s](Tape& t, const MatrixXd& out) {
        t.adj(s)(0, 0) += out(0, 0) * 2.0 * t.scalar(s);
    });
}

Var Tape::symmetric_from_entries(const std::vector<Var>& entries, int r) {
    if (static_cast<int>(entries.size()) != r * (r + 1) / 2)
        throw std::invalid_argument("tape: wrong entry count for symmetric matrix");
    MatrixXd m(r, r);
    int k = 0;
    for (int a = 0; a < r; ++a)
        for (int b = a; b < r; ++b) {
            m(a, b) = m(b, a) = scalar(entries[k]);
            ++k;
        }
    return push(std::move(m), [entries, r](Tape& t, const MatrixXd& out) {
        int k = 0;
        for (int a = 0; a < r; ++a)
            for (int b = a; b < r; ++b) {
                double g = out(a, b);
                if (a != b) g += out(b, a);
                t.adj(entries[k])(0, 0) += g;
                ++k;
            }
    });
}

namespace {

void check_elastic_only(const Tape::Potential& pot, const char* where) {
    const bool has_bending = pot.terms.bending && pot.ctx->mat->bend_stiffness > 0.0 &&
                             !pot.ctx->mesh->hinges.empty();
    const bool has_contact = pot.terms.contact && !pot.ctx->colliders.empty();
    if (has_bending || has_contact)
        throw std::invalid_argument(std::string(where) +
                                    ": only the elastic element sum is differentiable at this "
                                    "order; drop bending/contact terms");
}

}  // namespace

Var Tape::potential_value(Var q, const Potential& pot) {
    const VectorXd qv = value(q).col(0);
    AssembledPotential ap = assemble(*pot.ctx, qv, false, &pot.subset, pot.terms);
    if (!std::isfinite(ap.value) || !ap.gradient.allFinite())
        throw std::runtime_error("tape: non-finite potential at node " +
                                 std::to_string(nodes_.size()));
    MatrixXd v(1, 1);
    v(0, 0) = ap.value;
    VectorXd grad = std::move(ap.gradient);
    return push(std::move(v), [q, grad](Tape& t, const MatrixXd& out) {
        t.adj(q).col(0) += out(0, 0) * grad;
    });
}

Var Tape::potential_gradient(Var q, const Potential& pot) {
    check_elastic_only(pot, "potential_gradient");
    const VectorXd qv = value(q).col(0);
    AssembledPotential ap = assemble(*pot.ctx, qv, false, &pot.subset, pot.terms);
    if (!ap.gradient.allFinite())
        throw std::runtime_error("tape: non-finite potential gradient at node " +
                                 std::to_string(nodes_.size()));
    const MatrixXd X = pot.ctx->positions(qv);
    Potential p = pot;
    return push(MatrixXd(ap.gradient), [q, p, X](Tape& t, const MatrixXd& out) {
        MatrixXd hbar = MatrixXd::Zero(out.rows(), 1);
        elastic_hessian_apply(*p.ctx, X, p.subset, out, hbar);
        t.adj(q) += hbar;
    });
}

Var Tape::potential_hessian_apply(Var q, Var Y, const Potential& pot) {
    check_elastic_only(pot, "potential_hessian_apply");
    const VectorXd qv = value(q).col(0);
    const MatrixXd X = pot.ctx->positions(qv);
    MatrixXd out = MatrixXd::Zero(value(Y).rows(), value(Y).cols());
    elastic_hessian_apply(*pot.ctx, X, pot.subset, value(Y), out);
    if (!out.allFinite())
        throw std::runtime_error("tape: non-finite Hessian apply at node " +
                                 std::to_string(nodes_.size()));
    Potential p = pot;
    return push(std::move(out), [q, Y, p, X](Tape& t, const MatrixXd& outbar) {
        MatrixXd ybar = MatrixXd::Zero(outbar.rows(), outbar.cols());
        elastic_hessian_apply(*p.ctx, X, p.subset, outbar, ybar);
        t.adj(Y) += ybar;
        VectorXd qbar = VectorXd::Zero(outbar.rows());
        elastic_third_contraction(*p.ctx, X, p.subset, t.value(Y), outbar, qbar);
        t.adj(q).col(0) += qbar;
    });
}

}  // namespace lipsub
