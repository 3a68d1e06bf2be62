#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdcnet/common.hpp"

namespace sdcnet {

// One array from an IDX container. Only dtype 0x08 (unsigned byte) is
// supported; that covers the MNIST image and label files.
struct IdxArray {
  std::uint8_t dtype = 0x08;
  std::vector<std::size_t> dims;  // parsed big-endian
  std::vector<std::uint8_t> payload;
};

// Throws DataError with the failing byte offset for bad magic bytes, and an
// expected-vs-actual message for truncated payloads.
IdxArray parse_idx(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> serialize_idx(const IdxArray& arr);

IdxArray read_idx_file(const std::string& path);
void write_idx_file(const std::string& path, const IdxArray& arr);

}  // namespace sdcnet
