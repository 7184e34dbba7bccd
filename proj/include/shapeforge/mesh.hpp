#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "shapeforge/geometry.hpp"
#include "shapeforge/implicit3d.hpp"

namespace shapeforge {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double area() const;
};

// Iso-surface of `field` over a uniform grid of `resolution`^3 cells spanning
// [-1, 1]^3. Each cell is split into six tetrahedra around its main diagonal, so
// neighbouring cells share faces and the surface is closed wherever it does not
// leave the grid. Vertices are linearly interpolated along lattice edges and
// shared between triangles. A field without a sign change yields an empty mesh.
Mesh extract_mesh(const SdfField& field, int resolution, double iso = 0.0);

// ASCII OBJ: "v x y z" and 1-indexed "f i j k" lines.
std::string to_obj(const Mesh& mesh);
Mesh parse_obj(const std::string& text);
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

}  // namespace shapeforge
