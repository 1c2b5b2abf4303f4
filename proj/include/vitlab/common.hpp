#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitlab {

// Error taxonomy shared by every module. Shape/contract errors indicate a
// caller bug; parse/io errors indicate bad external input.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit; used for artifact checksums in run manifests and tests.
uint64_t fnv1a64(std::span<const unsigned char> bytes);
uint64_t fnv1a64(const std::string& text);

std::vector<unsigned char> read_file(const std::string& path);
std::string read_text_file(const std::string& path);

// Writes to a sibling temp file then renames into place.
void write_file_atomic(const std::string& path, std::span<const unsigned char> bytes);
void write_file_atomic(const std::string& path, const std::string& text);

std::string format_dims(const std::vector<int64_t>& dims);

}  // namespace vitlab
