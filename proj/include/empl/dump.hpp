#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "empl/encoders.hpp"
#include "empl/gap.hpp"

namespace empl::io {

// Embedding dump, format version 1. Little-endian, no padding.
//
//   offset  size  field
//   0       4     magic "EMPD"
//   4       4     format_version (u32) = 1
//   8       4     dim (u32)               record vector length
//   12      8     n_records (u64)
//   20      4     n_classes (u32)
//   24      4     flags (u32)             see DumpFlags; other bits must be 0
//   28      4     word_dim (u32)          0 unless has_word_vecs
//   32      ...   class table, n_classes entries:
//                   class_id u32, name_len u32, name (utf-8, name_len bytes),
//                   word_vec f32 x word_dim   (if has_word_vecs)
//   ...     ...   records, n_records entries:
//                   modality u8 (0 image, 1 text/prompt), class_id u32,
//                   vector f32 x dim, ref_pred u32 (if has_ref_pred)
//
// The file must end exactly after the last record.
inline constexpr std::uint32_t kDumpFormatVersion = 1;
inline constexpr char kDumpMagic[4] = {'E', 'M', 'P', 'D'};

enum DumpFlags : std::uint32_t {
  kHasWordVecs = 1u << 0,
  kHasRefPred = 1u << 1,
  kUnitNormalized = 1u << 2,
};
inline constexpr std::uint32_t kKnownDumpFlags = kHasWordVecs | kHasRefPred | kUnitNormalized;

struct DumpClass {
  ClassId class_id = 0;
  std::string name;
  Vec word_vec;  // empty unless kHasWordVecs

  friend bool operator==(const DumpClass&, const DumpClass&) = default;
};

struct DumpRecord {
  Modality modality = Modality::image;
  ClassId class_id = 0;
  Vec vector;
  std::uint32_t ref_pred = 0;  // meaningful only with kHasRefPred

  friend bool operator==(const DumpRecord&, const DumpRecord&) = default;
};

// Values are held as double and narrowed to f32 on write; a dump that was
// read from disk therefore writes back byte-identically.
struct EmbeddingDump {
  std::uint32_t dim = 0;
  std::uint32_t flags = 0;
  std::uint32_t word_dim = 0;
  std::vector<DumpClass> classes;
  std::vector<DumpRecord> records;

  bool has(DumpFlags f) const noexcept { return (flags & f) != 0; }
  // Throws InvalidInputError describing the first violated invariant.
  void validate() const;
  // Class table as a vocabulary; needs dense ids 0..n-1 and word vectors.
  Vocabulary vocabulary() const;

  friend bool operator==(const EmbeddingDump&, const EmbeddingDump&) = default;
};

std::string encode_dump(const EmbeddingDump& dump);
// Throws FormatError with the byte offset of the first bad field.
EmbeddingDump decode_dump(std::string_view bytes);

void write_dump(const EmbeddingDump& dump, const std::filesystem::path& path);
EmbeddingDump read_dump(const std::filesystem::path& path);

}  // namespace empl::io
