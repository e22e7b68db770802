#pragma once

#include <filesystem>
#include <iosfwd>

#include "anncache/matrix.hpp"

namespace anncache {

// Tensor file format "QKV1":
//   bytes 0-3   ASCII "QKV1"
//   bytes 4-7   u32 LE rank, always 2
//   bytes 8-15  u32 LE rows, u32 LE cols
//   remainder   rows*cols IEEE-754 binary32 LE values, row-major
// The reader rejects wrong magic, a rank other than 2, payload whose size
// does not match the header, and non-finite values.

Matrix read_qkv1(std::istream& in, const std::string& name = "stream");
Matrix read_qkv1_file(const std::filesystem::path& path);

void write_qkv1(std::ostream& out, const Matrix& m);
void write_qkv1_file(const std::filesystem::path& path, const Matrix& m);

}  // namespace anncache
