#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hsteer/probe.hpp"

namespace hsteer {

// ACTREC1 layout, all integers little-endian:
//   header  "ACTREC1" | u32 version (1) | u32 endian marker 0x01020304 |
//           u16 tag length | tag bytes | u32 dim | u64 record count
//   record  u16 layer | u8 site (0 ATTN, 1 MLP, 2 INT_LAYER) |
//           i8 label (-1 unlabeled, 0, 1) | u32 position | u32 dim |
//           dim x f32 payload
// Every record's dim must equal the header dim.
inline constexpr std::string_view kActrecMagic = "ACTREC1";
inline constexpr std::uint32_t kActrecVersion = 1;
inline constexpr std::uint32_t kActrecEndianMarker = 0x01020304;

struct ActivationRecord {
  std::uint16_t layer = 0;
  Site site = Site::kIntLayer;
  std::int8_t label = -1;
  std::uint32_t position = 0;
  std::vector<float> values;

  friend bool operator==(const ActivationRecord&, const ActivationRecord&) = default;
};

struct ActivationFile {
  std::string model_tag;
  std::uint32_t dim = 0;
  std::vector<ActivationRecord> records;

  friend bool operator==(const ActivationFile&, const ActivationFile&) = default;
};

// Throws DimensionError when a record's width differs from `file.dim`, and
// ValueError for labels outside {-1, 0, 1}; nothing is written in that case.
std::vector<std::uint8_t> encode_records(const ActivationFile& file);

// FormatError kinds: "bad magic", "version mismatch", "bad header",
// "truncated" (message names the record), "invalid enum", "dim mismatch".
ActivationFile decode_records(std::span<const std::uint8_t> bytes);

std::size_t write_records(const std::filesystem::path& path, const ActivationFile& file);
ActivationFile read_records(const std::filesystem::path& path);

struct ValidationReport {
  std::string model_tag;
  std::size_t record_count = 0;
  std::uint32_t dim = 0;
  std::map<int, std::size_t> label_histogram;
  std::map<Site, std::size_t> site_counts;
};

ValidationReport validate_records(const std::filesystem::path& path);

// Labeled records (0 / 1) at one site; unlabeled records are skipped.
ContrastiveDataset to_dataset(const ActivationFile& file, const SiteKey& key);

// Every record of every dataset, positions numbered per dataset.
ActivationFile from_datasets(const std::map<SiteKey, ContrastiveDataset>& datasets, std::string model_tag);

}  // namespace hsteer
