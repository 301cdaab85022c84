#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace idrt {

// Tensor blob format shared by datasets and checkpoints:
//   magic "IDRT", version u16, rank u16, extents u64[rank], data f64[numel],
//   everything little-endian. Round-trips must be bit-exact.
struct Blob {
  std::vector<long> shape;
  std::vector<double> data;
};

void write_blob(std::ostream& os, const Blob& b);
Blob read_blob(std::istream& is);

void save_blob(const std::string& path, const Blob& b);
Blob load_blob(const std::string& path);

}  // namespace idrt
