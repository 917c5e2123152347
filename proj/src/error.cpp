#include "g2s/error.hpp"

#include <sstream>

namespace g2s {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::string shape_message(const std::string& op,
                          const std::vector<std::vector<std::size_t>>& shapes,
                          const std::string& detail) {
  std::ostringstream os;
  os << op << ": incompatible shapes";
  for (const auto& s : shapes) os << ' ' << shape_str(s);
  if (!detail.empty()) os << " (" << detail << ')';
  return os.str();
}

}  // namespace

ShapeError::ShapeError(std::string op,
                       std::vector<std::vector<std::size_t>> shapes,
                       const std::string& detail)
    : std::invalid_argument(shape_message(op, shapes, detail)),
      op_(std::move(op)),
      shapes_(std::move(shapes)) {}

FormatError::FormatError(std::string file, std::string field,
                         const std::string& detail)
    : std::runtime_error(file + ": field '" + field + "': " + detail),
      file_(std::move(file)),
      field_(std::move(field)) {}

}  // namespace g2s
