#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vitlab/analysis.hpp"
#include "vitlab/data.hpp"
#include "vitlab/probe.hpp"
#include "vitlab/tensor.hpp"
#include "vitlab/train.hpp"
#include "vitlab/vit.hpp"

namespace vitlab {

// VTRL flat tensor archive, all integers little-endian:
//   "VTRL" | u32 version=1 | u32 entry_count |
//   entry_count x { u32 name_len | name | u8 dtype | u32 ndims |
//                   ndims x u64 dims | u64 payload_offset | u64 payload_len }
//   | payloads
// dtype 0 = f64 (payload_len = 8 * prod(dims)); dtype 1 = raw bytes
// (payload_len = prod(dims)), used for embedded text such as model configs.
inline constexpr uint32_t kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  uint8_t dtype = 0;
  std::vector<int64_t> dims;
  std::vector<double> f64;           // dtype 0
  std::vector<unsigned char> bytes;  // dtype 1

  static ArchiveEntry tensor(std::string name, const Tensor& t);
  static ArchiveEntry text(std::string name, const std::string& body);
  Tensor to_tensor() const;
  std::string to_text() const;
};

std::vector<unsigned char> encode_archive(const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> decode_archive(std::span<const unsigned char> bytes);

void save_archive(const std::vector<ArchiveEntry>& entries, const std::string& path);
std::vector<ArchiveEntry> load_archive(const std::string& path);

const ArchiveEntry& find_entry(const std::vector<ArchiveEntry>& entries, const std::string& name);

// Model persistence: a "__config__" text entry plus one f64 entry per
// parameter under its canonical name ("blocks.0.attn.qkv.weight" style).
void save_model(const ViTModel& model, const std::string& path);
ViTModel load_model(const std::string& path);

// Probe dataset / head persistence over the same archive container.
void save_probe_dataset(const ProbeDataset& data, const std::string& path);
ProbeDataset load_probe_dataset(const std::string& path);
void save_probe_head(const ProbeHead& head, const std::string& path);
ProbeHead load_probe_head(const std::string& path);

// Human-readable run configuration: one "section.key = value" per line, '#'
// comments, unknown keys rejected with their line number.
struct RunConfig {
  ViTConfig model;
  DataConfig data;
  AnalysisConfig analysis;
  TrainConfig probe;
  ToyTrainConfig train;
  ReprConfig repr;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

std::string serialize_vit_config(const ViTConfig& config);
ViTConfig parse_vit_config(const std::string& text);

}  // namespace vitlab
