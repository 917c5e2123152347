#pragma once

#include <string>
#include <vector>

#include "g2s/pointcloud.hpp"

namespace g2s {

enum class PlyFormat { kAscii, kBinaryLittleEndian };

/// Scalar vertex properties of a PLY file, one column per property.
struct PlyVertices {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  std::size_t count = 0;

  /// Throws FormatError naming the file when the property is absent.
  const std::vector<double>& column(const std::string& name,
                                    const std::string& file = "<ply>") const;
};

PlyVertices read_ply_vertices(const std::string& path);

/// Writes a vertex element whose properties are all 32-bit floats.
void write_ply_vertices(const std::string& path,
                        const std::vector<std::string>& names,
                        const std::vector<std::vector<double>>& columns,
                        PlyFormat format = PlyFormat::kBinaryLittleEndian);

PointCloud read_ply_cloud(const std::string& path);
void write_ply_cloud(const std::string& path, const PointCloud& pc,
                     PlyFormat format = PlyFormat::kBinaryLittleEndian);

}  // namespace g2s
