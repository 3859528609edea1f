#include "hsteer/activation_io.hpp"

#include "hsteer/binary_io.hpp"

namespace hsteer {

namespace {

constexpr std::size_t kRecordHeaderBytes = 2 + 1 + 1 + 4 + 4;

}  // namespace

std::vector<std::uint8_t> encode_records(const ActivationFile& file) {
  if (file.model_tag.size() > 0xffff) throw ValueError("encode_records: model tag too long");
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    const auto& r = file.records[i];
    if (r.values.size() != file.dim) {
      throw DimensionError("encode_records: record " + std::to_string(i) + " has dim " + std::to_string(r.values.size()) +
                           ", header dim " + std::to_string(file.dim));
    }
    if (r.label < -1 || r.label > 1) throw ValueError("encode_records: record " + std::to_string(i) + " label");
    if (static_cast<unsigned>(r.site) > 2) throw ValueError("encode_records: record " + std::to_string(i) + " site");
  }
  ByteWriter w;
  w.raw(kActrecMagic);
  w.u32(kActrecVersion);
  w.u32(kActrecEndianMarker);
  w.u16(static_cast<std::uint16_t>(file.model_tag.size()));
  w.raw(file.model_tag);
  w.u32(file.dim);
  w.u64(file.records.size());
  for (const auto& r : file.records) {
    w.u16(r.layer);
    w.u8(static_cast<std::uint8_t>(r.site));
    w.i8(r.label);
    w.u32(r.position);
    w.u32(static_cast<std::uint32_t>(r.values.size()));
    for (float v : r.values) w.f32(v);
  }
  return w.take();
}

ActivationFile decode_records(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kActrecMagic.size() || r.raw(kActrecMagic.size()) != kActrecMagic) {
    throw FormatError("bad magic", "not an ACTREC1 file");
  }
  try {
    const std::uint32_t version = r.u32();
    if (version != kActrecVersion) throw FormatError("version mismatch", "ACTREC1 version " + std::to_string(version));
    if (r.u32() != kActrecEndianMarker) throw FormatError("bad header", "endianness marker");
  } catch (const FormatError& e) {
    if (e.kind() == "truncated") throw FormatError("truncated", "truncated header");
    throw;
  }
  ActivationFile f;
  std::uint64_t count = 0;
  try {
    const std::uint16_t tag_len = r.u16();
    f.model_tag = std::string(r.raw(tag_len));
    f.dim = r.u32();
    count = r.u64();
  } catch (const FormatError& e) {
    if (e.kind() == "truncated") throw FormatError("truncated", "truncated header");
    throw;
  }
  // Size check up front so a corrupt count cannot drive allocation.
  const std::uint64_t record_bytes = kRecordHeaderBytes + 4ULL * f.dim;
  if (count > 0 && r.remaining() / record_bytes < count) {
    const std::uint64_t complete = r.remaining() / record_bytes;
    throw FormatError("truncated", "truncated record " + std::to_string(complete));
  }
  if (r.remaining() != count * record_bytes) throw FormatError("bad header", "trailing bytes after last record");
  f.records.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    ActivationRecord rec;
    rec.layer = r.u16();
    const std::uint8_t site = r.u8();
    if (site > 2) throw FormatError("invalid enum", "record " + std::to_string(i) + " site " + std::to_string(site));
    rec.site = static_cast<Site>(site);
    rec.label = r.i8();
    if (rec.label < -1 || rec.label > 1) {
      throw FormatError("invalid enum", "record " + std::to_string(i) + " label " + std::to_string(rec.label));
    }
    rec.position = r.u32();
    const std::uint32_t dim = r.u32();
    if (dim != f.dim) {
      throw FormatError("dim mismatch", "record " + std::to_string(i) + " dim " + std::to_string(dim) +
                                            " != header dim " + std::to_string(f.dim));
    }
    rec.values.resize(dim);
    for (float& v : rec.values) v = r.f32();
    f.records.push_back(std::move(rec));
  }
  return f;
}

std::size_t write_records(const std::filesystem::path& path, const ActivationFile& file) {
  write_file_bytes(path, encode_records(file));
  return file.records.size();
}

ActivationFile read_records(const std::filesystem::path& path) { return decode_records(read_file_bytes(path)); }

ValidationReport validate_records(const std::filesystem::path& path) {
  const ActivationFile f = read_records(path);
  ValidationReport rep;
  rep.model_tag = f.model_tag;
  rep.record_count = f.records.size();
  rep.dim = f.dim;
  for (const auto& r : f.records) {
    ++rep.label_histogram[r.label];
    ++rep.site_counts[r.site];
  }
  return rep;
}

ContrastiveDataset to_dataset(const ActivationFile& file, const SiteKey& key) {
  ContrastiveDataset d;
  d.layer = key.layer;
  d.site = key.site;
  for (const auto& r : file.records) {
    if (r.layer != key.layer || r.site != key.site || r.label < 0) continue;
    d.records.push_back(LabeledState{Vector(std::vector<double>(r.values.begin(), r.values.end())), r.label});
  }
  return d;
}

ActivationFile from_datasets(const std::map<SiteKey, ContrastiveDataset>& datasets, std::string model_tag) {
  ActivationFile f;
  f.model_tag = std::move(model_tag);
  bool first = true;
  for (const auto& [key, data] : datasets) {
    if (key.layer < 0 || key.layer > 0xffff) throw ValueError("from_datasets: layer out of range");
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      const auto& rec = data.records[i];
      if (first) {
        f.dim = static_cast<std::uint32_t>(rec.h.dim());
        first = false;
      }
      ActivationRecord a;
      a.layer = static_cast<std::uint16_t>(key.layer);
      a.site = key.site;
      a.label = static_cast<std::int8_t>(rec.label);
      a.position = static_cast<std::uint32_t>(i);
      a.values.assign(rec.h.begin(), rec.h.end());
      f.records.push_back(std::move(a));
    }
  }
  return f;
}

}  // namespace hsteer
