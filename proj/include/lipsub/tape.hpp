#pragma once

#include <Eigen/Core>
#include <functional>
#include <unordered_map>
#include <vector>

#include "lipsub/energy.hpp"
#include "lipsub/net.hpp"

namespace lipsub {

// Reverse-mode tape over small dense matrices. Scalars are 1x1, vectors are
// one-column matrices. Losses are built per step from model parameters plus
// constants; backward() then yields exact parameter gradients, including
// through decoder Jacobians and second derivatives appearing inside a loss.
class Tape {
  public:
    struct Var {
        int idx = -1;
        bool valid() const { return idx >= 0; }
    };

    Var constant(const Eigen::MatrixXd& value);
    Var scalar_constant(double value);

    // Trainable leaf; one node per parameter id, repeated calls return it.
    Var param(int param_id, const Eigen::MatrixXd& value);

    const Eigen::MatrixXd& value(Var v) const { return nodes_[v.idx].value; }
    double scalar(Var v) const { return nodes_[v.idx].value(0, 0); }

    // Reverse sweep from a 1x1 loss node. Throws on a non-finite loss.
    void backward(Var loss);

    // Parameter gradient after backward (zeros when the loss does not touch it).
    Eigen::MatrixXd param_gradient(int param_id, long rows, long cols) const;

    // Adjoint of any node after backward; zero matrix when untouched.
    Eigen::MatrixXd adjoint_of(Var v) const;

    std::size_t size() const { return nodes_.size(); }

    // --- ops -----------------------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var matmul(Var a, Var b);
    Var matmul_tn(Var a, Var b);  // a^T b
    Var hadamard(Var a, Var b);
    Var scale(Var a, double c);
    Var cmul(Var a, Var s);  // matrix times 1x1 scalar node
    Var act_map(Var a, Activation act, int order);  // elementwise phi^(order)
    Var column(Var a, long j);
    Var dot(Var a, Var b);  // full contraction -> 1x1
    Var sum(const std::vector<Var>& xs);
    Var weighted_sqnorm(Var a, const Eigen::VectorXd& w);  // sum w_i a_i^2
    Var clog(Var s);
    Var csqrt(Var s);
    Var csquare(Var s);
    // Symmetric r x r matrix from r(r+1)/2 scalar entries (upper triangle,
    // row-major order of pairs (a,b) with a <= b).
    Var symmetric_from_entries(const std::vector<Var>& entries, int r);

    // --- potential coupling ----------------------------------------------------
    // The elastic sums may be cubature-weighted; gradients flow back into the
    // configuration node q through the analytic element derivatives.
    struct Potential {
        const PotentialContext* ctx = nullptr;
        ElementSubset subset;  // over simplex elements
        PotentialTerms terms;
    };

    // P(q): any term combination (backward needs only the captured gradient).
    Var potential_value(Var q, const Potential& pot);
    // grad P(q) as an n-vector; elastic terms only (its VJP is a Hessian apply).
    Var potential_gradient(Var q, const Potential& pot);
    // H(q) * Y for an n x k node Y; elastic terms only (its VJP against q is
    // the third-derivative contraction).
    Var potential_hessian_apply(Var q, Var Y, const Potential& pot);

  private:
    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd adj;
        bool has_adj = false;
        std::function<void(Tape&, const Eigen::MatrixXd&)> backward;
    };

    Eigen::MatrixXd& adj(Var v);
    Var push(Eigen::MatrixXd value, std::function<void(Tape&, const Eigen::MatrixXd&)> backward);

    std::vector<Node> nodes_;
    std::unordered_map<int, int> param_nodes_;
};

using Var = Tape::Var;

}  // namespace lipsub
