#pragma once

// ADT1 tensor files, little-endian throughout:
//   "ADT1" | u32 count | u32 height | u32 width | u32 channels | u8 has_labels
//   | count x u32 labels (if has_labels) | count*H*W*C float32 pixels
// Pixels are instance-major and row-major within an instance. Ids are not
// stored in the tensor file; they are positional unless a companion
// `<path>.ids.csv` (header `id,true_label`) is present.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "advdist/common/csv.hpp"
#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

inline constexpr std::array<char, 4> kAdt1Magic{'A', 'D', 'T', '1'};
inline constexpr std::size_t kAdt1HeaderBytes = 4 + 4 * 4 + 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serializes the tensor part of a dataset into ADT1 bytes.
inline std::string encode_adt1(const Dataset& d) {
  d.validate();
  if (d.empty()) throw ValidationError("cannot encode an empty dataset (shape unknown)");
  const ImageShape shape = d.shape();
  std::string buf;
  buf.reserve(kAdt1HeaderBytes + d.size() * 4 + d.size() * shape.size() * 4);
  buf.append(kAdt1Magic.data(), kAdt1Magic.size());
  detail::put_u32(buf, static_cast<std::uint32_t>(d.size()));
  detail::put_u32(buf, static_cast<std::uint32_t>(shape.height));
  detail::put_u32(buf, static_cast<std::uint32_t>(shape.width));
  detail::put_u32(buf, static_cast<std::uint32_t>(shape.channels));
  buf.push_back(d.has_labels() ? 1 : 0);
  if (d.has_labels())
    for (Label l : *d.true_labels) {
      if (l < 0) throw ValidationError("negative label cannot be stored in ADT1");
      detail::put_u32(buf, static_cast<std::uint32_t>(l));
    }
  for (const auto& img : d.images)
    for (float v : img.pixels()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  return buf;
}

/// Parses ADT1 bytes; ids are positional.
inline Dataset decode_adt1(const std::string& bytes, const std::string& source = "ADT1") {
  auto fail = [&](std::size_t offset, const std::string& msg) -> FormatError {
    return FormatError(source + ": offset " + std::to_string(offset) + ": " + msg);
  };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kAdt1Magic.data(), 4) != 0) throw fail(0, "bad magic (expected \"ADT1\")");
  if (bytes.size() < kAdt1HeaderBytes) throw fail(bytes.size(), "truncated header");
  const std::uint32_t n = detail::get_u32(p + 4);
  const ImageShape shape{detail::get_u32(p + 8), detail::get_u32(p + 12), detail::get_u32(p + 16)};
  const std::uint8_t has_labels = p[20];
  if (has_labels > 1) throw fail(20, "has_labels must be 0 or 1");
  if (n > 0 && shape.size() == 0) throw fail(8, "zero image dimension " + shape.str());

  std::size_t off = kAdt1HeaderBytes;
  const std::size_t need = off + (has_labels ? std::size_t{n} * 4 : 0) + std::size_t{n} * shape.size() * 4;
  if (bytes.size() < need)
    throw fail(bytes.size(), "truncated payload (need " + std::to_string(need) + " bytes)");
  if (bytes.size() > need) throw fail(need, "trailing bytes after payload");

  Dataset d;
  if (has_labels) {
    std::vector<Label> labels(n);
    for (std::uint32_t i = 0; i < n; ++i, off += 4) labels[i] = static_cast<Label>(detail::get_u32(p + off));
    d.true_labels = std::move(labels);
  }
  d.images.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<float> px(shape.size());
    for (auto& v : px) {
      v = std::bit_cast<float>(detail::get_u32(p + off));
      if (!(v >= 0.0f && v <= 1.0f)) throw fail(off, "pixel value " + std::to_string(v) + " outside [0,1]");
      off += 4;
    }
    d.images.emplace_back(shape, std::move(px));
  }
  d.ids = Dataset::positional_ids(n);
  return d;
}

inline std::string companion_path(const std::string& path) { return path + ".ids.csv"; }

/// Writes `path` in ADT1. Non-positional ids are preserved through a companion
/// CSV so that read_dataset(write_dataset(d)) reproduces d exactly.
inline void write_dataset(const Dataset& d, const std::string& path) {
  const std::string bytes = encode_adt1(d);
  {
    auto out = open_for_write(path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
  }
  const std::string meta = companion_path(path);
  std::error_code ec;
  if (d.has_positional_ids()) {
    std::filesystem::remove(meta, ec);
    return;
  }
  auto out = open_for_write(meta);
  out << "id,true_label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.ids[i] << ',';
    if (d.has_labels()) out << (*d.true_labels)[i];
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + meta + "'");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Dataset d = decode_adt1(bytes, path);
  const std::string meta = companion_path(path);
  if (std::filesystem::exists(meta)) {
    CsvTable t = read_csv_file(meta);
    int id_col = t.require_column("id", meta);
    if (t.rows.size() != d.size())
      throw FormatError(meta + ": " + std::to_string(t.rows.size()) + " rows for " + std::to_string(d.size()) +
                        " images");
    for (std::size_t i = 0; i < d.size(); ++i) d.ids[i] = parse_int<InstanceId>(t.rows[i][id_col], "id");
  }
  d.validate();
  return d;
}

/// Ground-truth label file: CSV `id,true_label`.
inline std::map<InstanceId, Label> read_label_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  int id_col = t.require_column("id", path);
  int label_col = t.require_column("true_label", path);
  std::map<InstanceId, Label> out;
  for (const auto& row : t.rows) {
    if (row[label_col].empty()) continue;
    out[parse_int<InstanceId>(row[id_col], "id")] = parse_int<Label>(row[label_col], "true_label");
  }
  return out;
}

inline void write_label_csv(const Dataset& d, const std::string& path) {
  if (!d.has_labels()) throw ValidationError("dataset carries no labels");
  auto out = open_for_write(path);
  out << "id,true_label\n";
  for (std::size_t i = 0; i < d.size(); ++i) out << d.ids[i] << ',' << (*d.true_labels)[i] << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace advdist
