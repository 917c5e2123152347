#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace g2s {

/// Raised when operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, std::vector<std::vector<std::size_t>> shapes,
             const std::string& detail = {});

  const std::string& op() const noexcept { return op_; }
  const std::vector<std::vector<std::size_t>>& shapes() const noexcept {
    return shapes_;
  }

 private:
  std::string op_;
  std::vector<std::vector<std::size_t>> shapes_;
};

/// Raised when a file cannot be parsed; names the file and the field.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string file, std::string field, const std::string& detail);

  const std::string& file() const noexcept { return file_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string file_;
  std::string field_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace g2s
