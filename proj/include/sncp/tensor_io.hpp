#pragma once

#include <filesystem>
#include <iosfwd>

#include "sncp/tensor.hpp"

namespace sncp {

// DNT1 binary layout, all integers and floats little-endian:
//   "DNT1" | u32 order N | N x u64 extents | prod(extents) x f64, mode-1 fastest.
// Matrices are stored as order-2 tensors.

void write_dnt(std::ostream& out, const DenseTensor& t);
void write_dnt(const std::filesystem::path& path, const DenseTensor& t);
void write_dnt(const std::filesystem::path& path, const Matrix& m);

/// Throws DataError on malformed content and when the file cannot be opened.
[[nodiscard]] DenseTensor read_dnt(std::istream& in);
[[nodiscard]] DenseTensor read_dnt(const std::filesystem::path& path);

/// Reads an order-2 DNT1 file; any other order is a DataError.
[[nodiscard]] Matrix read_dnt_matrix(const std::filesystem::path& path);

[[nodiscard]] DenseTensor to_tensor(const Matrix& m);
[[nodiscard]] Matrix to_matrix(const DenseTensor& t);

}  // namespace sncp
