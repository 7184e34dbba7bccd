#include "shapeforge/mesh.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "shapeforge/error.hpp"

namespace shapeforge {
namespace {

// Cube corners in (x, y, z) bit order: corner k sits at ((k>>0)&1, (k>>1)&1, (k>>2)&1).
// Six tetrahedra sharing the 0-7 diagonal.
constexpr std::array<std::array<int, 4>, 6> kTetrahedra = {{
    {0, 1, 3, 7},
    {0, 3, 2, 7},
    {0, 2, 6, 7},
    {0, 6, 4, 7},
    {0, 4, 5, 7},
    {0, 5, 1, 7},
}};

constexpr double kMinTriangleArea = 1e-12;

}  // namespace

double Mesh::area() const {
  double total = 0.0;
  for (const auto& t : triangles) {
    total += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }
  return total;
}

Mesh extract_mesh(const SdfField& field, int resolution, double iso) {
  require(resolution >= 8, "invalid_config", "grid resolution must be at least 8");
  const int n = resolution + 1;
  const double step = 2.0 / resolution;
  auto index = [n](int x, int y, int z) { return (static_cast<int64_t>(z) * n + y) * n + x; };
  auto position = [step](int x, int y, int z) { return Vec3(-1.0 + x * step, -1.0 + y * step, -1.0 + z * step); };

  std::vector<Vec3> lattice;
  lattice.reserve(static_cast<size_t>(n) * n * n);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) lattice.push_back(position(x, y, z));
  std::vector<double> values = field.distance(lattice);
  for (double& v : values) v -= iso;

  Mesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;
  const uint64_t total = static_cast<uint64_t>(n) * n * n;
  auto vertex_on_edge = [&](int64_t a, int64_t b) {
    if (a > b) std::swap(a, b);
    const uint64_t key = static_cast<uint64_t>(a) * total + static_cast<uint64_t>(b);
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const double t = values[a] / (values[a] - values[b]);
      mesh.vertices.push_back(lattice[a] + t * (lattice[b] - lattice[a]));
    }
    return it->second;
  };
  auto emit = [&](int i, int j, int k, const Vec3& inside, const Vec3& outside) {
    if (i == j || j == k || i == k) return;
    const Vec3& a = mesh.vertices[i];
    Vec3 normal = (mesh.vertices[j] - a).cross(mesh.vertices[k] - a);
    if (0.5 * normal.norm() < kMinTriangleArea) return;
    // Orient the normal from the negative (inside) region towards the positive one.
    if (normal.dot(outside - inside) < 0.0) std::swap(j, k);
    mesh.triangles.push_back({i, j, k});
  };

  for (int z = 0; z < resolution; ++z) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        std::array<int64_t, 8> corner;
        for (int k = 0; k < 8; ++k) corner[k] = index(x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1));
        for (const auto& tet : kTetrahedra) {
          std::array<int64_t, 4> v;
          std::array<int64_t, 4> in;
          std::array<int64_t, 4> out;
          int n_in = 0, n_out = 0;
          for (int k = 0; k < 4; ++k) {
            v[k] = corner[tet[k]];
            if (values[v[k]] < 0.0) in[n_in++] = v[k];
            else out[n_out++] = v[k];
          }
          if (n_in == 0 || n_out == 0) continue;
          Vec3 c_in = Vec3::Zero(), c_out = Vec3::Zero();
          for (int k = 0; k < n_in; ++k) c_in += lattice[in[k]];
          for (int k = 0; k < n_out; ++k) c_out += lattice[out[k]];
          c_in /= n_in;
          c_out /= n_out;
          if (n_in == 1 || n_out == 1) {
            const bool single_in = n_in == 1;
            const int64_t apex = single_in ? in[0] : out[0];
            const auto& others = single_in ? out : in;
            emit(vertex_on_edge(apex, others[0]), vertex_on_edge(apex, others[1]), vertex_on_edge(apex, others[2]),
                 c_in, c_out);
          } else {
            const int q0 = vertex_on_edge(in[0], out[0]);
            const int q1 = vertex_on_edge(in[0], out[1]);
            const int q2 = vertex_on_edge(in[1], out[1]);
            const int q3 = vertex_on_edge(in[1], out[0]);
            emit(q0, q1, q2, c_in, c_out);
            emit(q0, q2, q3, c_in, c_out);
          }
        }
      }
    }
  }
  return mesh;
}

std::string to_obj(const Mesh& mesh) {
  std::string out;
  out.reserve(mesh.vertices.size() * 40 + mesh.triangles.size() * 24);
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
    out += line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out += line;
  }
  return out;
}

Mesh parse_obj(const std::string& text) {
  Mesh mesh;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string tag;
    if (!(fields >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(fields >> v.x() >> v.y() >> v.z())) fail("bad_obj", "malformed vertex on line " + std::to_string(line_no));
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int& i : t) {
        std::string token;
        if (!(fields >> token)) fail("bad_obj", "malformed face on line " + std::to_string(line_no));
        i = std::stoi(token.substr(0, token.find('/'))) - 1;
      }
      mesh.triangles.push_back(t);
    }
  }
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int i : t) require(i >= 0 && i < nv, "bad_obj", "face index out of range");
  }
  return mesh;
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) fail("io_error", "cannot write " + path.string());
  out << to_obj(mesh);
}

}  // namespace shapeforge
