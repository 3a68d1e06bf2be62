#include "sdcnet/idx.hpp"

#include <fstream>

namespace sdcnet {

IdxArray parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4)
    throw DataError("idx: only " + std::to_string(bytes.size()) + " bytes, header needs 4");
  if (bytes[0] != 0 || bytes[1] != 0)
    throw DataError("idx: bad magic at offset " + std::string(bytes[0] != 0 ? "0" : "1") +
                    " (expected 0x00)");
  if (bytes[2] != 0x08)
    throw DataError("idx: unsupported dtype code " + std::to_string(int(bytes[2])) +
                    " at offset 2 (only 0x08 unsigned byte is supported)");
  const std::size_t rank = bytes[3];
  if (rank == 0) throw DataError("idx: rank 0 at offset 3");
  if (bytes.size() < 4 + 4 * rank)
    throw DataError("idx: header truncated, rank " + std::to_string(rank) + " needs " +
                    std::to_string(4 + 4 * rank) + " bytes, got " + std::to_string(bytes.size()));

  IdxArray arr;
  arr.dtype = bytes[2];
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t off = 4 + 4 * d;
    const std::size_t extent = (std::size_t(bytes[off]) << 24) | (std::size_t(bytes[off + 1]) << 16) |
                               (std::size_t(bytes[off + 2]) << 8) | std::size_t(bytes[off + 3]);
    arr.dims.push_back(extent);
    count *= extent;
  }
  const std::size_t have = bytes.size() - (4 + 4 * rank);
  if (have != count)
    throw DataError("idx: payload length mismatch, expected " + std::to_string(count) +
                    " bytes, got " + std::to_string(have));
  arr.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * rank), bytes.end());
  return arr;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& arr) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * arr.dims.size() + arr.payload.size());
  out.push_back(0);
  out.push_back(0);
  out.push_back(arr.dtype);
  out.push_back(static_cast<std::uint8_t>(arr.dims.size()));
  for (std::size_t extent : arr.dims) {
    out.push_back(static_cast<std::uint8_t>((extent >> 24) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((extent >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((extent >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(extent & 0xFF));
  }
  out.insert(out.end(), arr.payload.begin(), arr.payload.end());
  return out;
}

IdxArray read_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_idx_file(const std::string& path, const IdxArray& arr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  auto bytes = serialize_idx(arr);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sdcnet
