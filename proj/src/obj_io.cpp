#include "unirig/asset_io.hpp"

#include "unirig/error.hpp"

#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace unirig {

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(static_cast<bool>(in), ErrorCode::MalformedAsset, "cannot open " + path.string());
  std::vector<Vec3> positions;
  std::vector<std::array<std::int32_t, 3>> triangles;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream tokens(line);
    std::string tag;
    tokens >> tag;
    if (tag == "v") {
      Vec3 p;
      check(static_cast<bool>(tokens >> p.x() >> p.y() >> p.z()), ErrorCode::MalformedAsset,
            "bad vertex on line " + std::to_string(line_number));
      positions.push_back(p);
    } else if (tag == "f") {
      std::vector<std::int32_t> polygon;
      std::string corner;
      while (tokens >> corner) {
        const auto slash = corner.find('/');
        long index = 0;
        try {
          index = std::stol(corner.substr(0, slash));
        } catch (const std::exception&) {
          fail(ErrorCode::MalformedAsset, "bad face index on line " + std::to_string(line_number));
        }
        // OBJ is 1-based; negative indices count back from the last vertex.
        const long resolved = index > 0 ? index - 1 : static_cast<long>(positions.size()) + index;
        check(resolved >= 0 && resolved < static_cast<long>(positions.size()), ErrorCode::MalformedAsset,
              "face index out of range on line " + std::to_string(line_number));
        polygon.push_back(static_cast<std::int32_t>(resolved));
      }
      check(polygon.size() >= 3, ErrorCode::MalformedAsset,
            "face with fewer than 3 corners on line " + std::to_string(line_number));
      for (size_t c = 1; c + 1 < polygon.size(); ++c) {
        triangles.push_back({polygon[0], polygon[c], polygon[c + 1]});
      }
    }
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(positions.size()), 3);
  for (size_t i = 0; i < positions.size(); ++i) {
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
  }
  mesh.faces.resize(static_cast<Eigen::Index>(triangles.size()), 3);
  for (size_t f = 0; f < triangles.size(); ++f) {
    for (int c = 0; c < 3; ++c) {
      mesh.faces(static_cast<Eigen::Index>(f), c) = triangles[f][c];
    }
  }
  return mesh;
}

void save_obj(const Points& vertices, const Faces& faces, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    out << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  }
  check(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

} // namespace unirig
