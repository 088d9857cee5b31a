#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "surgformer/mesh.hpp"
#include "surgformer/types.hpp"

namespace surgformer {

/// Legacy ASCII VTK unstructured grid: POINTS, CELLS of type 10, then a
/// displacement vector field and a cut-flag scalar per point. With `deform`
/// the displacement is baked into the point positions. Output is
/// byte-deterministic (fixed header, %.9g floats).
void write_vtk(const std::string& path, const TetMesh& mesh,
               const MatX3d& displacement, const std::vector<uint8_t>& cut_flags,
               bool deform);

}  // namespace surgformer
