#include "surgformer/vtk.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace surgformer {

namespace {

void put_triple(std::ostream& out, double x, double y, double z) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", x, y, z);
  out << buf;
}

}  // namespace

void write_vtk(const std::string& path, const TetMesh& mesh,
               const MatX3d& displacement, const std::vector<uint8_t>& cut_flags,
               bool deform) {
  const int n = mesh.vertex_count();
  const int t = mesh.tet_count();
  if (displacement.rows() != n)
    throw std::invalid_argument("vtk: displacement rows do not match the mesh");
  if (static_cast<int>(cut_flags.size()) != n)
    throw std::invalid_argument("vtk: cut flag count does not match the mesh");

  std::ofstream out(path, std::ios::binary);  // binary keeps \n on every platform
  if (!out) throw std::runtime_error("vtk: cannot write " + path);

  out << "# vtk DataFile Version 3.0\n";
  out << "surgformer\n";
  out << "ASCII\n";
  out << "DATASET UNSTRUCTURED_GRID\n";

  out << "POINTS " << n << " double\n";
  for (int i = 0; i < n; ++i) {
    const double dx = deform ? displacement(i, 0) : 0.0;
    const double dy = deform ? displacement(i, 1) : 0.0;
    const double dz = deform ? displacement(i, 2) : 0.0;
    put_triple(out, mesh.vertices(i, 0) + dx, mesh.vertices(i, 1) + dy,
               mesh.vertices(i, 2) + dz);
  }

  out << "CELLS " << t << " " << 5 * t << "\n";
  for (int e = 0; e < t; ++e)
    out << "4 " << mesh.tets(e, 0) << " " << mesh.tets(e, 1) << " "
        << mesh.tets(e, 2) << " " << mesh.tets(e, 3) << "\n";
  out << "CELL_TYPES " << t << "\n";
  for (int e = 0; e < t; ++e) out << "10\n";

  out << "POINT_DATA " << n << "\n";
  out << "VECTORS displacement double\n";
  for (int i = 0; i < n; ++i)
    put_triple(out, displacement(i, 0), displacement(i, 1), displacement(i, 2));
  out << "SCALARS cut_flag int 1\n";
  out << "LOOKUP_TABLE default\n";
  for (int i = 0; i < n; ++i) out << static_cast<int>(cut_flags[i]) << "\n";

  if (!out) throw std::runtime_error("vtk: write failed for " + path);
}

}  // namespace surgformer
