#include "idrt/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace idrt {

static_assert(std::endian::native == std::endian::little,
              "blob I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'I', 'D', 'R', 'T'};
constexpr uint16_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("blob: truncated stream");
  return v;
}
}  // namespace

void write_blob(std::ostream& os, const Blob& b) {
  os.write(kMagic, 4);
  put<uint16_t>(os, kVersion);
  put<uint16_t>(os, static_cast<uint16_t>(b.shape.size()));
  size_t n = 1;
  for (long e : b.shape) {
    if (e < 0) throw std::invalid_argument("blob: negative extent");
    put<uint64_t>(os, static_cast<uint64_t>(e));
    n *= static_cast<size_t>(e);
  }
  if (n != b.data.size()) throw std::invalid_argument("blob: shape/data mismatch");
  os.write(reinterpret_cast<const char*>(b.data.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
}

Blob read_blob(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("blob: bad magic");
  uint16_t version = get<uint16_t>(is);
  if (version != kVersion)
    throw std::runtime_error("blob: unsupported version " + std::to_string(version));
  uint16_t rank = get<uint16_t>(is);
  Blob b;
  size_t n = 1;
  for (uint16_t i = 0; i < rank; ++i) {
    uint64_t e = get<uint64_t>(is);
    b.shape.push_back(static_cast<long>(e));
    n *= static_cast<size_t>(e);
  }
  b.data.resize(n);
  is.read(reinterpret_cast<char*>(b.data.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("blob: truncated data");
  return b;
}

void save_blob(const std::string& path, const Blob& b) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("blob: cannot open for writing: " + path);
  write_blob(f, b);
  if (!f) throw std::runtime_error("blob: write failed: " + path);
}

Blob load_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("blob: cannot open: " + path);
  return read_blob(f);
}

}  // namespace idrt
