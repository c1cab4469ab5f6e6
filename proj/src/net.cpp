#include "lipsub/net.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "silu") return Activation::Silu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu")
        throw std::invalid_argument("activation: relu is not C^2; use silu or tanh");
    throw std::invalid_argument("activation: unknown tag '" + name + "'");
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Silu: return "silu";
        case Activation::Tanh: return "tanh";
    }
    throw std::logic_error("activation: bad enum");
}

double activation_eval(Activation a, double x, int order) {
    switch (a) {
        case Activation::Identity:
            return order == 0 ? x : (order == 1 ? 1.0 : 0.0);
        case Activation::Silu: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            const double s1 = s * (1.0 - s);
            const double s2 = s1 * (1.0 - 2.0 * s);
            const double s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
            switch (order) {
                case 0: return x * s;
                case 1: return s + x * s1;
                case 2: return 2.0 * s1 + x * s2;
                case 3: return 3.0 * s2 + x * s3;
            }
            break;
        }
        case Activation::Tanh: {
            const double t = std::tanh(x);
            const double t1 = 1.0 - t * t;
            switch (order) {
                case 0: return t;
                case 1: return t1;
                case 2: return -2.0 * t * t1;
                case 3: return -2.0 * t1 * t1 + 4.0 * t * t * t1;
            }
            break;
        }
    }
    throw std::invalid_argument("activation: derivative order must be 0..3");
}

void SubspaceModel::validate() const {
    if (r <= 0 || n <= 0) throw std::invalid_argument("model: r and n must be positive");
    long width = r;
    for (const Layer& l : decoder) {
        if (l.W.cols() != width || l.b.size() != l.W.rows())
            throw std::invalid_argument("model: decoder layer shapes do not chain");
        width = l.W.rows();
    }
    if (width != n) throw std::invalid_argument("model: decoder output width != n");
    if (!encoder.empty()) {
        width = n;
        for (const Layer& l : encoder) {
            if (l.W.cols() != width || l.b.size() != l.W.rows())
                throw std::invalid_argument("model: encoder layer shapes do not chain");
            width = l.W.rows();
        }
        if (width != r) throw std::invalid_argument("model: encoder output width != r");
    }
    if (norm_shift.size() != n || norm_scale.size() != n)
        throw std::invalid_argument("model: normalization vectors must have length n");
    if ((norm_scale.array() <= 0.0).any())
        throw std::invalid_argument("model: norm_scale entries must be positive");
}

SubspaceModel make_mlp_model(int r, int n, int hidden_layers, int hidden_width, Activation act,
                             bool supervised, Rng& rng) {
    if (act == Activation::Identity && hidden_layers > 0)
        throw std::invalid_argument("model: hidden layers need a smooth nonlinearity");
    const int width = hidden_width > 0 ? hidden_width : std::max(64, 4 * r);

    auto glorot = [&rng](long rows, long cols) {
        MatrixXd W(rows, cols);
        const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (long j = 0; j < cols; ++j)
            for (long i = 0; i < rows; ++i) W(i, j) = randu(rng, -s, s);
        return W;
    };
    auto build = [&](int in, int out) {
        std::vector<Layer> layers;
        int prev = in;
        for (int l = 0; l < hidden_layers; ++l) {
            layers.push_back({glorot(width, prev), VectorXd::Zero(width), act});
            prev = width;
        }
        layers.push_back({glorot(out, prev), VectorXd::Zero(out), Activation::Identity});
        return layers;
    };

    SubspaceModel m;
    m.r = r;
    m.n = n;
    m.decoder = build(r, n);
    if (supervised) m.encoder = build(n, r);
    m.norm_shift = VectorXd::Zero(n);
    m.norm_scale = VectorXd::Ones(n);
    m.validate();
    return m;
}

void set_normalization(SubspaceModel& model, const Eigen::VectorXd& shift,
                       const Eigen::VectorXd& scale) {
    model.norm_shift = shift;
    model.norm_scale = scale;
    model.validate();
}

namespace {

VectorXd mlp_forward(const std::vector<Layer>& layers, const Eigen::VectorXd& x) {
    VectorXd y = x;
    for (const Layer& l : layers) {
        VectorXd a = l.W * y + l.b;
        for (long i = 0; i < a.size(); ++i) a[i] = activation_eval(l.act, a[i], 0);
        y = std::move(a);
    }
    return y;
}

}  // namespace

Eigen::VectorXd decode(const SubspaceModel& model, const Eigen::VectorXd& z) {
    if (z.size() != model.r) throw std::invalid_argument("decode: z has wrong length");
    const VectorXd y = mlp_forward(model.decoder, z);
    return model.norm_scale.cwiseProduct(y) + model.norm_shift;
}

Eigen::VectorXd encode(const SubspaceModel& model, const Eigen::VectorXd& q) {
    if (!model.has_encoder()) throw std::runtime_error("encode: model has no encoder");
    if (q.size() != model.n) throw std::invalid_argument("encode: q has wrong length");
    const VectorXd x = (q - model.norm_shift).cwiseQuotient(model.norm_scale);
    return mlp_forward(model.encoder, x);
}

Eigen::MatrixXd decode_jacobian(const SubspaceModel& model, const Eigen::VectorXd& z,
                                const std::vector<int>* rows) {
    const std::size_t L = model.decoder.size();
    VectorXd y = z;
    MatrixXd G = MatrixXd::Identity(model.r, model.r);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const Layer& layer = model.decoder[l];
        VectorXd a = layer.W * y + layer.b;
        MatrixXd A = layer.W * G;
        for (long i = 0; i < a.size(); ++i) {
            A.row(i) *= activation_eval(layer.act, a[i], 1);
            a[i] = activation_eval(layer.act, a[i], 0);
        }
        y = std::move(a);
        G = std::move(A);
    }
    // The final layer is evaluated row by row through one shared expression so
    // a row-restricted call is bit-identical to the matching full rows.
    const Layer& last = model.decoder[L - 1];
    auto jac_row = [&](int i) -> Eigen::RowVectorXd {
        const double a = last.W.row(i).dot(y) + last.b[i];
        return (last.W.row(i) * G) * (activation_eval(last.act, a, 1) * model.norm_scale[i]);
    };
    if (!rows) {
        MatrixXd J(model.n, model.r);
        for (int i = 0; i < model.n; ++i) J.row(i) = jac_row(i);
        return J;
    }
    MatrixXd J(static_cast<long>(rows->size()), model.r);
    for (std::size_t k = 0; k < rows->size(); ++k) J.row(static_cast<long>(k)) = jac_row((*rows)[k]);
    return J;
}

Eigen::VectorXd decode_second_directional(const SubspaceModel& model, const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                          const std::vector<int>* rows) {
    const std::size_t L = model.decoder.size();
    VectorXd y = z;
    VectorXd p = u;  // d f / dz . u
    VectorXd t = v;  // d f / dz . v
    VectorXd s = VectorXd::Zero(model.r);  // d2 f / dz2 . (u, v)
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const Layer& layer = model.decoder[l];
        const VectorXd a = layer.W * y + layer.b;
        const VectorXd ap = layer.W * p;
        const VectorXd at = layer.W * t;
        const VectorXd as = layer.W * s;
        VectorXd ny(a.size()), np(a.size()), nt(a.size()), ns(a.size());
        for (long i = 0; i < a.size(); ++i) {
            const double d0 = activation_eval(layer.act, a[i], 0);
            const double d1 = activation_eval(layer.act, a[i], 1);
            const double d2 = activation_eval(layer.act, a[i], 2);
            ny[i] = d0;
            np[i] = d1 * ap[i];
            nt[i] = d1 * at[i];
            // ap*at groups first so swapping (u, v) is bit-exact.
            ns[i] = d2 * (ap[i] * at[i]) + d1 * as[i];
        }
        y = std::move(ny);
        p = std::move(np);
        t = std::move(nt);
        s = std::move(ns);
    }
    const Layer& last = model.decoder[L - 1];
    auto output_row = [&](int i) {
        const double a = last.W.row(i).dot(y) + last.b[i];
        const double ap = last.W.row(i).dot(p);
        const double at = last.W.row(i).dot(t);
        const double as = last.W.row(i).dot(s);
        const double d1 = activation_eval(last.act, a, 1);
        const double d2 = activation_eval(last.act, a, 2);
        return model.norm_scale[i] * (d2 * (ap * at) + d1 * as);
    };
    if (!rows) {
        VectorXd out(model.n);
        for (int i = 0; i < model.n; ++i) out[i] = output_row(i);
        return out;
    }
    VectorXd out(static_cast<long>(rows->size()));
    for (std::size_t k = 0; k < rows->size(); ++k) out[static_cast<long>(k)] = output_row((*rows)[k]);
    return out;
}

std::vector<ParamRef> parameter_refs(SubspaceModel& model) {
    std::vector<ParamRef> refs;
    auto add = [&refs](std::vector<Layer>& layers, const std::string& prefix) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            refs.push_back({layers[l].W.data(), layers[l].W.rows(), layers[l].W.cols(),
                            prefix + std::to_string(l) + ".W"});
            refs.push_back({layers[l].b.data(), layers[l].b.size(), 1,
                            prefix + std::to_string(l) + ".b"});
        }
    };
    add(model.decoder, "dec.");
    add(model.encoder, "enc.");
    return refs;
}

namespace {

constexpr char kMagic[] = "LIPSUBCKPT1\n";

nlohmann::json layers_meta(const std::vector<Layer>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Layer& l : layers)
        arr.push_back({{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"act", activation_name(l.act)}});
    return arr;
}

void write_blob(std::ofstream& out, const double* data, long count) {
    out.write(reinterpret_cast<const char*>(data), count * static_cast<long>(sizeof(double)));
}

void read_blob(std::ifstream& in, double* data, long count) {
    in.read(reinterpret_cast<char*>(data), count * static_cast<long>(sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated weight blob");
}

}  // namespace

void save_checkpoint(const SubspaceModel& model, const std::string& path) {
    model.validate();
    nlohmann::json header = {
        {"format", "lipsub-checkpoint"},
        {"r", model.r},
        {"n", model.n},
        {"decoder", layers_meta(model.decoder)},
        {"encoder", layers_meta(model.encoder)},
    };
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
    out.write(kMagic, sizeof(kMagic) - 1);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<long>(hs.size()));
    auto dump_layers = [&out](const std::vector<Layer>& layers) {
        for (const Layer& l : layers) {
            // Row-major weight order so the header fully determines the layout.
            for (long i = 0; i < l.W.rows(); ++i)
                for (long j = 0; j < l.W.cols(); ++j) {
                    const double w = l.W(i, j);
                    write_blob(out, &w, 1);
                }
            write_blob(out, l.b.data(), l.b.size());
        }
    };
    dump_layers(model.decoder);
    dump_layers(model.encoder);
    write_blob(out, model.norm_shift.data(), model.norm_shift.size());
    write_blob(out, model.norm_scale.data(), model.norm_scale.size());
}

SubspaceModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<long>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    const nlohmann::json header = nlohmann::json::parse(hs);

    SubspaceModel m;
    m.r = header.at("r").get<int>();
    m.n = header.at("n").get<int>();
    auto load_layers = [&in](const nlohmann::json& meta) {
        std::vector<Layer> layers;
        for (const auto& lm : meta) {
            Layer l;
            const long rows = lm.at("rows").get<long>();
            const long cols = lm.at("cols").get<long>();
            l.act = activation_from_string(lm.at("act").get<std::string>());
            l.W.resize(rows, cols);
            for (long i = 0; i < rows; ++i)
                for (long j = 0; j < cols; ++j) read_blob(in, &l.W(i, j), 1);
            l.b.resize(rows);
            read_blob(in, l.b.data(), rows);
            layers.push_back(std::move(l));
        }
        return layers;
    };
    m.decoder = load_layers(header.at("decoder"));
    m.encoder = load_layers(header.at("encoder"));
    m.norm_shift.resize(m.n);
    m.norm_scale.resize(m.n);
    read_blob(in, m.norm_shift.data(), m.n);
    read_blob(in, m.norm_scale.data(), m.n);
    m.validate();
    return m;
}

}  // namespace lipsub
