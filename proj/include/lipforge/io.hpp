#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lipforge/matrix.hpp"

namespace lipforge {

// Plain-text matrix format (conventional extension ".mtx.txt"):
//   line 1:        "<rows> <cols>"
//   lines 2..1+r:  <cols> space-separated doubles
// Doubles are written with shortest round-trip formatting, so
// write_matrix followed by read_matrix reproduces every bit.
DenseMatrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const DenseMatrix& m);

// Serialize one double with shortest round-trip formatting.
std::string format_double(double v);

// Parse one double; throws ParseError if the token is not a full double.
double parse_double(const std::string& token);

// Label file: one integer per line.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

}  // namespace lipforge
