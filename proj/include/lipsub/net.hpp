#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "lipsub/rng.hpp"

namespace lipsub {

// Activations must be C^2 (the Lipschitz machinery differentiates a Hessian);
// derivative orders up to 3 are available for the nested backward passes.
enum class Activation { Identity, Silu, Tanh };

Activation activation_from_string(const std::string& name);  // rejects "relu"
std::string activation_name(Activation a);
double activation_eval(Activation a, double x, int order);

struct Layer {
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
    Activation act = Activation::Identity;
};

// Decoder f: R^r -> R^n (with dataset normalization applied after the MLP)
// and optional encoder g: R^n -> R^r for the supervised mode.
struct SubspaceModel {
    int r = 0;
    int n = 0;
    std::vector<Layer> decoder;
    std::vector<Layer> encoder;
    Eigen::VectorXd norm_shift;  // length n
    Eigen::VectorXd norm_scale;  // length n, strictly positive

    bool has_encoder() const { return !encoder.empty(); }
    void validate() const;  // shape chaining, positive scales
};

// Glorot-uniform MLP with `hidden` layers of width max(64, 4r) (or an explicit
// width), smooth activation inside and identity at the output.
SubspaceModel make_mlp_model(int r, int n, int hidden_layers, int hidden_width, Activation act,
                             bool supervised, Rng& rng);

void set_normalization(SubspaceModel& model, const Eigen::VectorXd& shift,
                       const Eigen::VectorXd& scale);

Eigen::VectorXd decode(const SubspaceModel& model, const Eigen::VectorXd& z);
Eigen::VectorXd encode(const SubspaceModel& model, const Eigen::VectorXd& q);

// Exact layer-wise Jacobian d decode / d z (n x r). With `rows` only those
// output rows are formed; the values match the full Jacobian bit-exactly.
Eigen::MatrixXd decode_jacobian(const SubspaceModel& model, const Eigen::VectorXd& z,
                                const std::vector<int>* rows = nullptr);

// Exact bilinear second derivative of decode at z in directions (u, v);
// symmetric in the directions by construction.
Eigen::VectorXd decode_second_directional(const SubspaceModel& model, const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                          const std::vector<int>* rows = nullptr);

// Flat list of trainable parameters in fixed order (decoder W,b pairs then
// encoder W,b pairs). Normalization constants are not trainable.
struct ParamRef {
    double* data = nullptr;
    long rows = 0, cols = 0;  // biases have cols == 1
    std::string name;
    long size() const { return rows * cols; }
};
std::vector<ParamRef> parameter_refs(SubspaceModel& model);

// Checkpoint file: JSON header + little-endian f64 blob in layer order;
// round-trips bit-exactly.
void save_checkpoint(const SubspaceModel& model, const std::string& path);
SubspaceModel load_checkpoint(const std::string& path);

}  // namespace lipsub
