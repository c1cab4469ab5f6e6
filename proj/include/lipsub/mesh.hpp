#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace lipsub {

struct MaterialParams {
    double mu = 1e4;        // first Lame coefficient (Pa)
    double lambda = 1e4;    // second Lame coefficient (Pa)
    double density = 1e3;   // kg / m^dim
    double bend_stiffness = 0.0;
    double contact_stiffness = 1e5;
    double contact_margin = 1e-3;  // SDF activation distance (m)

    void validate() const;
};

// One bending hinge: interior edge (i, j) with the opposite vertices of the
// two incident triangles. Rest quantities are precomputed at mesh build.
struct Hinge {
    int edge[2];
    int opposite[2];
    double rest_angle = 0.0;
    double rest_coeff = 0.0;  // |e|^2 * 3 / (2 (A1 + A2))
};

// Simplicial mesh with rest-state precomputation. Immutable after build.
//   dim      — world dimension (2 or 3)
//   elem_dim — simplex dimension (2 triangles, 3 tets); elem_dim == 2 with
//              dim == 3 is a membrane (cloth) mesh and carries hinges.
struct Mesh {
    int dim = 3;
    int elem_dim = 3;
    Eigen::MatrixXd vertices;  // V x dim rest positions
    Eigen::MatrixXi elements;  // E x (elem_dim + 1)
    std::vector<Hinge> hinges;

    std::vector<Eigen::MatrixXd> rest_inverse;  // per element, elem_dim x elem_dim
    Eigen::VectorXd rest_measure;               // per element rest area / volume

    std::vector<int> pinned;          // sorted unique vertex ids
    std::vector<char> vertex_pinned;  // V flags
    Eigen::VectorXi free_index;       // V; slot among free vertices or -1

    int num_vertices() const { return static_cast<int>(vertices.rows()); }
    int num_elements() const { return static_cast<int>(elements.rows()); }
    int num_free_vertices() const { return n_free_; }
    int num_dofs() const { return dim * n_free_; }
    bool is_membrane() const { return elem_dim == 2 && dim == 3; }

    int n_free_ = 0;
};

// Validates geometry, precomputes rest_inverse / rest_measure / hinges and
// the free-DOF numbering. Throws on degenerate or inverted rest elements and
// out-of-range indices.
Mesh build_mesh(int dim, const Eigen::MatrixXd& vertices, const Eigen::MatrixXi& elements,
                const std::vector<int>& pinned = {});

// Same mesh with a different pin set.
Mesh with_pins(const Mesh& mesh, const std::vector<int>& pinned);

enum class MeshFormat { TetNodeEle, ObjTriangle };

// node/ele pair: `path` names the .node file, the matching .ele file must sit
// next to it. OBJ triangle meshes load as planar 2D when every z is zero and
// as a 3D membrane with hinges otherwise.
Mesh load_mesh(const std::string& path, MeshFormat format, const std::vector<int>& pinned = {});

void write_node_ele(const Mesh& mesh, const std::string& node_path);
void write_obj(const Mesh& mesh, const std::string& path);

// Procedural desk-scale meshes. Bars span [0,width] x [0,height] on a regular
// grid; `pin_left` pins the x = 0 vertex column (face in 3D).
Mesh make_bar_2d(int nx, int ny, double width, double height, bool pin_left = true);
Mesh make_bar_3d(int nx, int ny, int nz, double width, double height, double depth,
                 bool pin_left = true);
// Flat cloth sheet in the xz-plane at y = 0, membrane triangles plus hinges.
Mesh make_cloth_grid(int nx, int nz, double width, double depth, const std::vector<int>& pinned = {});

struct MassMatrix {
    Eigen::VectorXd diag;  // per free DOF, strictly positive
    double total_mass = 0.0;  // over all vertices, including pinned
};

// Each element spreads density * rest_measure equally over its dim_el + 1
// vertices; pinned DOFs are excluded from the vector.
MassMatrix lump_mass(const Mesh& mesh, const MaterialParams& mat);

// Free-DOF vector q <-> full V x dim position matrix. Pinned rows of
// `pin_values` supply the prescribed positions on unpack.
Eigen::VectorXd dof_pack(const Mesh& mesh, const Eigen::MatrixXd& full_positions);
Eigen::MatrixXd dof_unpack(const Mesh& mesh, const Eigen::VectorXd& q,
                           const Eigen::MatrixXd& pin_values);

}  // namespace lipsub
