#include "lipsub/mesh.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lipsub {

void MaterialParams::validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("material: mu must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("material: lambda must be >= 0");
    if (!(density > 0.0)) throw std::invalid_argument("material: density must be > 0");
    if (bend_stiffness < 0.0 || contact_stiffness < 0.0)
        throw std::invalid_argument("material: stiffnesses must be >= 0");
}

namespace {

// Rest-shape matrix Dm in element-local coordinates. For membranes the edge
// vectors are expressed in an orthonormal tangent frame so Dm is 2x2 with
// positive determinant for any non-degenerate triangle.
Eigen::MatrixXd rest_shape_matrix(const Mesh& mesh, int e) {
    const int d = mesh.elem_dim;
    const auto row = mesh.elements.row(e);
    if (!mesh.is_membrane()) {
        Eigen::MatrixXd dm(d, d);
        for (int c = 0; c < d; ++c)
            dm.col(c) = (mesh.vertices.row(row[c + 1]) - mesh.vertices.row(row[0])).transpose();
        return dm;
    }
    const Eigen::Vector3d e1 = mesh.vertices.row(row[1]) - mesh.vertices.row(row[0]);
    const Eigen::Vector3d e2 = mesh.vertices.row(row[2]) - mesh.vertices.row(row[0]);
    const double l1 = e1.norm();
    if (l1 <= 0.0) return Eigen::MatrixXd::Zero(2, 2);
    const Eigen::Vector3d t1 = e1 / l1;
    const Eigen::Vector3d r2 = e2 - e2.dot(t1) * t1;
    const double l2 = r2.norm();
    Eigen::MatrixXd dm(2, 2);
    dm << l1, e2.dot(t1), 0.0, l2;
    return dm;
}

double simplex_measure_factor(int elem_dim) { return elem_dim == 2 ? 0.5 : 1.0 / 6.0; }

void extract_hinges(Mesh& mesh) {
    mesh.hinges.clear();
    if (!mesh.is_membrane()) return;
    // Map sorted interior edge -> opposite vertices of its incident faces.
    std::map<std::pair<int, int>, std::vector<int>> edge_opp;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const auto tri = mesh.elements.row(e);
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3], opp = tri[(k + 2) % 3];
            if (a > b) std::swap(a, b);
            edge_opp[{a, b}].push_back(opp);
        }
    }
    for (const auto& [edge, opp] : edge_opp) {
        if (opp.size() != 2) continue;
        Hinge h;
        h.edge[0] = edge.first;
        h.edge[1] = edge.second;
        h.opposite[0] = opp[0];
        h.opposite[1] = opp[1];
        const Eigen::Vector3d x0 = mesh.vertices.row(h.edge[0]);
        const Eigen::Vector3d x1 = mesh.vertices.row(h.edge[1]);
        const Eigen::Vector3d x2 = mesh.vertices.row(h.opposite[0]);
        const Eigen::Vector3d x3 = mesh.vertices.row(h.opposite[1]);
        const double a1 = 0.5 * (x1 - x0).cross(x2 - x0).norm();
        const double a2 = 0.5 * (x1 - x0).cross(x3 - x0).norm();
        const double elen2 = (x1 - x0).squaredNorm();
        if (a1 + a2 <= 0.0) throw std::runtime_error("mesh: degenerate hinge at edge (" +
                                                     std::to_string(edge.first) + "," +
                                                     std::to_string(edge.second) + ")");
        h.rest_coeff = 3.0 * elen2 / (2.0 * (a1 + a2));
        const Eigen::Vector3d n1 = (x1 - x0).cross(x2 - x0);
        const Eigen::Vector3d n2 = (x3 - x0).cross(x1 - x0);
        h.rest_angle = std::atan2(n1.cross(n2).dot((x1 - x0).normalized()), n1.dot(n2));
        mesh.hinges.push_back(h);
    }
    // map iteration is already lexicographic in the edge; keep that order.
}

}  // namespace

Mesh build_mesh(int dim, const Eigen::MatrixXd& vertices, const Eigen::MatrixXi& elements,
                const std::vector<int>& pinned) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("mesh: dim must be 2 or 3");
    if (vertices.cols() != dim) throw std::invalid_argument("mesh: vertex matrix must be V x dim");
    const int verts_per_elem = static_cast<int>(elements.cols());
    if (verts_per_elem != 3 && verts_per_elem != 4)
        throw std::invalid_argument("mesh: elements must be triangles or tetrahedra");

    Mesh mesh;
    mesh.dim = dim;
    mesh.elem_dim = verts_per_elem - 1;
    if (mesh.elem_dim == 3 && dim == 2)
        throw std::invalid_argument("mesh: tetrahedra require dim == 3");
    mesh.vertices = vertices;
    mesh.elements = elements;

    const int V = mesh.num_vertices();
    for (int e = 0; e < mesh.num_elements(); ++e)
        for (int k = 0; k < verts_per_elem; ++k) {
            const int v = elements(e, k);
            if (v < 0 || v >= V)
                throw std::runtime_error("mesh: element " + std::to_string(e) +
                                         " references vertex " + std::to_string(v) +
                                         " out of range [0," + std::to_string(V) + ")");
        }

    mesh.rest_inverse.resize(mesh.num_elements());
    mesh.rest_measure.resize(mesh.num_elements());
    const double factor = simplex_measure_factor(mesh.elem_dim);
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const Eigen::MatrixXd dm = rest_shape_matrix(mesh, e);
        const double det = dm.determinant();
        if (!(det > 1e-14))
            throw std::runtime_error("mesh: element " + std::to_string(e) +
                                     " has non-positive rest measure (det Dm = " +
                                     std::to_string(det) + ")");
        mesh.rest_inverse[e] = dm.inverse();
        mesh.rest_measure[e] = factor * det;
    }

    extract_hinges(mesh);

    std::set<int> pin_set(pinned.begin(), pinned.end());
    for (int v : pin_set)
        if (v < 0 || v >= V)
            throw std::runtime_error("mesh: pinned vertex " + std::to_string(v) + " out of range");
    mesh.pinned.assign(pin_set.begin(), pin_set.end());
    mesh.vertex_pinned.assign(V, 0);
    for (int v : mesh.pinned) mesh.vertex_pinned[v] = 1;
    mesh.free_index = Eigen::VectorXi::Constant(V, -1);
    int slot = 0;
    for (int v = 0; v < V; ++v)
        if (!mesh.vertex_pinned[v]) mesh.free_index[v] = slot++;
    mesh.n_free_ = slot;
    return mesh;
}

Mesh with_pins(const Mesh& mesh, const std::vector<int>& pinned) {
    return build_mesh(mesh.dim, mesh.vertices, mesh.elements, pinned);
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("mesh: cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

bool is_blank_or_comment(const std::string& s, char comment) {
    for (char c : s) {
        if (c == comment) return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no, const std::string& what) {
    throw std::runtime_error("mesh: parse error in '" + path + "' line " +
                             std::to_string(line_no + 1) + ": " + what);
}

Mesh load_node_ele(const std::string& node_path, const std::vector<int>& pinned) {
    auto ele_path = node_path;
    const auto dot = ele_path.rfind(".node");
    if (dot == std::string::npos)
        throw std::runtime_error("mesh: node/ele format expects a .node path, got '" + node_path + "'");
    ele_path.replace(dot, 5, ".ele");

    const auto node_lines = read_lines(node_path);
    std::size_t i = 0;
    auto next_line = [&](const std::vector<std::string>& lines, std::size_t& k) -> const std::string* {
        while (k < lines.size() && is_blank_or_comment(lines[k], '#')) ++k;
        return k < lines.size() ? &lines[k] : nullptr;
    };

    const std::string* header = next_line(node_lines, i);
    if (!header) parse_fail(node_path, 0, "missing header");
    std::istringstream hs(*header);
    long nv = 0, dim = 0, nattr = 0, nbd = 0;
    if (!(hs >> nv >> dim)) parse_fail(node_path, i, "expected '<V> <dim>' header");
    hs >> nattr >> nbd;
    if (dim != 2 && dim != 3) parse_fail(node_path, i, "dim must be 2 or 3");
    ++i;

    Eigen::MatrixXd verts(nv, dim);
    std::vector<char> seen(nv, 0);
    long index_base = -1;
    for (long k = 0; k < nv; ++k) {
        const std::string* line = next_line(node_lines, i);
        if (!line) parse_fail(node_path, node_lines.size() - 1, "unexpected end of vertex list");
        std::istringstream ls(*line);
        long id = 0;
        if (!(ls >> id)) parse_fail(node_path, i, "expected vertex id");
        if (index_base < 0) index_base = id;
        id -= index_base;
        if (id < 0 || id >= nv) parse_fail(node_path, i, "vertex id out of range");
        for (long c = 0; c < dim; ++c)
            if (!(ls >> verts(id, c))) parse_fail(node_path, i, "expected coordinate");
        seen[id] = 1;
        ++i;
    }
    for (long k = 0; k < nv; ++k)
        if (!seen[k]) throw std::runtime_error("mesh: vertex " + std::to_string(k) + " missing in '" + node_path + "'");

    const auto ele_lines = read_lines(ele_path);
    std::size_t j = 0;
    header = next_line(ele_lines, j);
    if (!header) parse_fail(ele_path, 0, "missing header");
    std::istringstream es(*header);
    long ne = 0, nper = 0;
    if (!(es >> ne >> nper)) parse_fail(ele_path, j, "expected '<E> <nodes-per-element>' header");
    if (nper != dim + 1)
        parse_fail(ele_path, j, "expected " + std::to_string(dim + 1) + " nodes per element");
    ++j;

    Eigen::MatrixXi elems(ne, nper);
    for (long k = 0; k < ne; ++k) {
        const std::string* line = next_line(ele_lines, j);
        if (!line) parse_fail(ele_path, ele_lines.size() - 1, "unexpected end of element list");
        std::istringstream ls(*line);
        long id = 0;
        if (!(ls >> id)) parse_fail(ele_path, j, "expected element id");
        for (long c = 0; c < nper; ++c) {
            long v = 0;
            if (!(ls >> v)) parse_fail(ele_path, j, "expected vertex index");
            elems(k, c) = static_cast<int>(v - index_base);
        }
        ++j;
    }
    return build_mesh(static_cast<int>(dim), verts, elems, pinned);
}

Mesh load_obj(const std::string& path, const std::vector<int>& pinned) {
    const auto lines = read_lines(path);
    std::vector<Eigen::Vector3d> verts;
    std::vector<Eigen::Vector3i> faces;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::istringstream ls(lines[i]);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Eigen::Vector3d p;
            if (!(ls >> p.x() >> p.y() >> p.z())) parse_fail(path, i, "expected 3 vertex coordinates");
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<long> ids;
            std::string tok;
            while (ls >> tok) {
                const auto slash = tok.find('/');
                ids.push_back(std::stol(tok.substr(0, slash)));
            }
            if (ids.size() != 3) parse_fail(path, i, "only triangle faces are supported");
            faces.emplace_back(static_cast<int>(ids[0] - 1), static_cast<int>(ids[1] - 1),
                               static_cast<int>(ids[2] - 1));
        }
    }
    if (verts.empty() || faces.empty())
        throw std::runtime_error("mesh: '" + path + "' contains no triangles");

    bool planar = true;
    for (const auto& p : verts)
        if (std::abs(p.z()) > 1e-12) { planar = false; break; }

    Eigen::MatrixXi elems(static_cast<long>(faces.size()), 3);
    for (std::size_t f = 0; f < faces.size(); ++f) elems.row(static_cast<long>(f)) = faces[f];

    if (planar) {
        Eigen::MatrixXd v2(static_cast<long>(verts.size()), 2);
        for (std::size_t k = 0; k < verts.size(); ++k) v2.row(static_cast<long>(k)) = verts[k].head<2>();
        return build_mesh(2, v2, elems, pinned);
    }
    Eigen::MatrixXd v3(static_cast<long>(verts.size()), 3);
    for (std::size_t k = 0; k < verts.size(); ++k) v3.row(static_cast<long>(k)) = verts[k];
    return build_mesh(3, v3, elems, pinned);
}

}  // namespace

Mesh load_mesh(const std::string& path, MeshFormat format, const std::vector<int>& pinned) {
    switch (format) {
        case MeshFormat::TetNodeEle: return load_node_ele(path, pinned);
        case MeshFormat::ObjTriangle: return load_obj(path, pinned);
    }
    throw std::invalid_argument("mesh: unknown format");
}

void write_node_ele(const Mesh& mesh, const std::string& node_path) {
    auto ele_path = node_path;
    const auto dot = ele_path.rfind(".node");
    if (dot == std::string::npos) throw std::runtime_error("mesh: node path must end in .node");
    ele_path.replace(dot, 5, ".ele");

    std::ofstream node(node_path);
    node.precision(17);
    node << mesh.num_vertices() << " " << mesh.dim << " 0 0\n";
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        node << v;
        for (int c = 0; c < mesh.dim; ++c) node << " " << mesh.vertices(v, c);
        node << "\n";
    }
    std::ofstream ele(ele_path);
    ele << mesh.num_elements() << " " << mesh.elem_dim + 1 << " 0\n";
    for (int e = 0; e < mesh.num_elements(); ++e) {
        ele << e;
        for (int k = 0; k <= mesh.elem_dim; ++k) ele << " " << mesh.elements(e, k);
        ele << "\n";
    }
}

void write_obj(const Mesh& mesh, const std::string& path) {
    if (mesh.elem_dim != 2) throw std::runtime_error("mesh: OBJ export needs a triangle mesh");
    std::ofstream out(path);
    out.precision(17);
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        out << "v " << mesh.vertices(v, 0) << " " << mesh.vertices(v, 1) << " "
            << (mesh.dim == 3 ? mesh.vertices(v, 2) : 0.0) << "\n";
    }
    for (int e = 0; e < mesh.num_elements(); ++e)
        out << "f " << mesh.elements(e, 0) + 1 << " " << mesh.elements(e, 1) + 1 << " "
            << mesh.elements(e, 2) + 1 << "\n";
}

Mesh make_bar_2d(int nx, int ny, double width, double height, bool pin_left) {
    const int vx = nx + 1, vy = ny + 1;
    Eigen::MatrixXd verts(vx * vy, 2);
    for (int i = 0; i < vx; ++i)
        for (int j = 0; j < vy; ++j)
            verts.row(i * vy + j) << width * i / nx, height * j / ny;
    Eigen::MatrixXi elems(2 * nx * ny, 3);
    int e = 0;
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) {
            const int v00 = i * vy + j, v10 = (i + 1) * vy + j;
            const int v01 = v00 + 1, v11 = v10 + 1;
            elems.row(e++) << v00, v10, v11;
            elems.row(e++) << v00, v11, v01;
        }
    std::vector<int> pins;
    if (pin_left)
        for (int j = 0; j < vy; ++j) pins.push_back(j);
    return build_mesh(2, verts, elems, pins);
}

Mesh make_bar_3d(int nx, int ny, int nz, double width, double height, double depth, bool pin_left) {
    const int vx = nx + 1, vy = ny + 1, vz = nz + 1;
    auto vid = [&](int i, int j, int k) { return (i * vy + j) * vz + k; };
    Eigen::MatrixXd verts(vx * vy * vz, 3);
    for (int i = 0; i < vx; ++i)
        for (int j = 0; j < vy; ++j)
            for (int k = 0; k < vz; ++k)
                verts.row(vid(i, j, k)) << width * i / nx, height * j / ny, depth * k / nz;
    // Five-tet decomposition with alternating parity keeps faces conforming.
    Eigen::MatrixXi elems(5 * nx * ny * nz, 4);
    int e = 0;
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j)
            for (int k = 0; k < nz; ++k) {
                int c[8] = {vid(i, j, k),     vid(i + 1, j, k),     vid(i, j + 1, k),
                            vid(i + 1, j + 1, k), vid(i, j, k + 1), vid(i + 1, j, k + 1),
                            vid(i, j + 1, k + 1), vid(i + 1, j + 1, k + 1)};
                if ((i + j + k) % 2 == 1) {
                    std::swap(c[0], c[1]); std::swap(c[2], c[3]);
                    std::swap(c[4], c[5]); std::swap(c[6], c[7]);
                }
                elems.row(e++) << c[0], c[1], c[2], c[4];
                elems.row(e++) << c[1], c[3], c[2], c[7];
                elems.row(e++) << c[1], c[5], c[4], c[7];
                elems.row(e++) << c[2], c[4], c[6], c[7];
                elems.row(e++) << c[1], c[2], c[4], c[7];
            }
    // The parity swap mirrors some tets; fix orientation by swapping two
    // vertices wherever the signed volume came out negative.
    for (int t = 0; t < elems.rows(); ++t) {
        Eigen::Matrix3d dm;
        for (int c = 0; c < 3; ++c)
            dm.col(c) = (verts.row(elems(t, c + 1)) - verts.row(elems(t, 0))).transpose();
        if (dm.determinant() < 0) std::swap(elems(t, 2), elems(t, 3));
    }
    std::vector<int> pins;
    if (pin_left)
        for (int j = 0; j < vy; ++j)
            for (int k = 0; k < vz; ++k) pins.push_back(vid(0, j, k));
    return build_mesh(3, verts, elems, pins);
}

Mesh make_cloth_grid(int nx, int nz, double width, double depth, const std::vector<int>& pinned) {
    const int vx = nx + 1, vz = nz + 1;
    Eigen::MatrixXd verts(vx * vz, 3);
    for (int i = 0; i < vx; ++i)
        for (int k = 0; k < vz; ++k)
            verts.row(i * vz + k) << width * i / nx, 0.0, depth * k / nz;
    Eigen::MatrixXi elems(2 * nx * nz, 3);
    int e = 0;
    for (int i = 0; i < nx; ++i)
        for (int k = 0; k < nz; ++k) {
            const int v00 = i * vz + k, v10 = (i + 1) * vz + k;
            const int v01 = v00 + 1, v11 = v10 + 1;
            elems.row(e++) << v00, v10, v11;
            elems.row(e++) << v00, v11, v01;
        }
    return build_mesh(3, verts, elems, pinned);
}

MassMatrix lump_mass(const Mesh& mesh, const MaterialParams& mat) {
    mat.validate();
    Eigen::VectorXd vertex_mass = Eigen::VectorXd::Zero(mesh.num_vertices());
    const double share = 1.0 / (mesh.elem_dim + 1);
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const double m = mat.density * mesh.rest_measure[e] * share;
        for (int k = 0; k <= mesh.elem_dim; ++k) vertex_mass[mesh.elements(e, k)] += m;
    }
    MassMatrix mm;
    mm.total_mass = vertex_mass.sum();
    mm.diag.resize(mesh.num_dofs());
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const int f = mesh.free_index[v];
        if (f < 0) continue;
        for (int c = 0; c < mesh.dim; ++c) mm.diag[f * mesh.dim + c] = vertex_mass[v];
    }
    return mm;
}

Eigen::VectorXd dof_pack(const Mesh& mesh, const Eigen::MatrixXd& full_positions) {
    if (full_positions.rows() != mesh.num_vertices() || full_positions.cols() != mesh.dim)
        throw std::invalid_argument("dof_pack: positions must be V x dim");
    Eigen::VectorXd q(mesh.num_dofs());
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const int f = mesh.free_index[v];
        if (f < 0) continue;
        for (int c = 0; c < mesh.dim; ++c) q[f * mesh.dim + c] = full_positions(v, c);
    }
    return q;
}

Eigen::MatrixXd dof_unpack(const Mesh& mesh, const Eigen::VectorXd& q,
                           const Eigen::MatrixXd& pin_values) {
    if (q.size() != mesh.num_dofs())
        throw std::invalid_argument("dof_unpack: q has wrong length");
    if (pin_values.rows() != mesh.num_vertices() || pin_values.cols() != mesh.dim)
        throw std::invalid_argument("dof_unpack: pin_values must be V x dim");
    Eigen::MatrixXd full = pin_values;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const int f = mesh.free_index[v];
        if (f < 0) continue;
        for (int c = 0; c < mesh.dim; ++c) full(v, c) = q[f * mesh.dim + c];
    }
    return full;
}

}  // namespace lipsub
