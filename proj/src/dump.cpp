#include "empl/dump.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "binary.hpp"
#include "empl/errors.hpp"

namespace empl::io {

namespace {

bool narrows_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(static_cast<float>(x)); });
}

}  // namespace

void EmbeddingDump::validate() const {
  if ((flags & ~kKnownDumpFlags) != 0) throw InvalidInputError("dump has unknown flag bits");
  if (dim == 0) throw InvalidInputError("dump dimension must be positive");
  if (has(kHasWordVecs) != (word_dim > 0)) {
    throw InvalidInputError("word_dim must be nonzero exactly when word vectors are present");
  }
  std::set<ClassId> ids;
  for (const auto& c : classes) {
    if (!ids.insert(c.class_id).second) {
      throw InvalidInputError("duplicate class id " + std::to_string(c.class_id) + " in class table");
    }
    const std::size_t expected = has(kHasWordVecs) ? word_dim : 0;
    if (c.word_vec.size() != expected) {
      throw InvalidInputError("class " + std::to_string(c.class_id) + " word vector has wrong length");
    }
    if (!narrows_finite(c.word_vec)) {
      throw InvalidInputError("class " + std::to_string(c.class_id) + " word vector is not finite");
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.modality != Modality::image && r.modality != Modality::text) {
      throw InvalidInputError("record " + std::to_string(i) + " has an invalid modality");
    }
    if (!ids.count(r.class_id)) {
      throw InvalidInputError("record " + std::to_string(i) + " refers to unknown class " +
                              std::to_string(r.class_id));
    }
    if (r.vector.size() != dim) throw InvalidInputError("record " + std::to_string(i) + " has wrong dimension");
    if (!narrows_finite(r.vector)) throw InvalidInputError("record " + std::to_string(i) + " is not finite");
    if (!has(kHasRefPred) && r.ref_pred != 0) {
      throw InvalidInputError("record " + std::to_string(i) + " carries ref_pred without the flag");
    }
  }
}

Vocabulary EmbeddingDump::vocabulary() const {
  if (!has(kHasWordVecs)) throw InvalidInputError("dump carries no word vectors");
  std::vector<VocabEntry> entries;
  for (const auto& c : classes) entries.push_back({c.class_id, c.name, c.word_vec});
  std::sort(entries.begin(), entries.end(),
            [](const VocabEntry& a, const VocabEntry& b) { return a.class_id < b.class_id; });
  return Vocabulary(std::move(entries));
}

std::string encode_dump(const EmbeddingDump& dump) {
  dump.validate();
  detail::ByteWriter w;
  w.bytes(std::string_view(kDumpMagic, 4));
  w.u32(kDumpFormatVersion);
  w.u32(dump.dim);
  w.u64(dump.records.size());
  w.u32(static_cast<std::uint32_t>(dump.classes.size()));
  w.u32(dump.flags);
  w.u32(dump.word_dim);
  for (const auto& c : dump.classes) {
    w.u32(c.class_id);
    w.u32(static_cast<std::uint32_t>(c.name.size()));
    w.bytes(c.name);
    for (double v : c.word_vec) w.f32(static_cast<float>(v));
  }
  for (const auto& r : dump.records) {
    w.u8(static_cast<std::uint8_t>(r.modality));
    w.u32(r.class_id);
    for (double v : r.vector) w.f32(static_cast<float>(v));
    if (dump.has(kHasRefPred)) w.u32(r.ref_pred);
  }
  return w.str();
}

EmbeddingDump decode_dump(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (magic != std::string_view(kDumpMagic, 4)) throw FormatError("bad magic, expected EMPD", 0);
  const std::uint64_t version_at = r.offset();
  if (r.u32("format_version") != kDumpFormatVersion) {
    throw FormatError("unsupported dump format version", version_at);
  }
  EmbeddingDump dump;
  const std::uint64_t dim_at = r.offset();
  dump.dim = r.u32("dim");
  if (dump.dim == 0) throw FormatError("dump dimension is zero", dim_at);
  const std::uint64_t n_records = r.u64("n_records");
  const std::uint32_t n_classes = r.u32("n_classes");
  const std::uint64_t flags_at = r.offset();
  dump.flags = r.u32("flags");
  if ((dump.flags & ~kKnownDumpFlags) != 0) throw FormatError("unknown flag bits", flags_at);
  const std::uint64_t word_dim_at = r.offset();
  dump.word_dim = r.u32("word_dim");
  if (dump.has(kHasWordVecs) != (dump.word_dim > 0)) {
    throw FormatError("word_dim inconsistent with flags", word_dim_at);
  }

  std::set<ClassId> ids;
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    DumpClass entry;
    const std::uint64_t id_at = r.offset();
    entry.class_id = r.u32("class_id");
    if (!ids.insert(entry.class_id).second) throw FormatError("duplicate class id", id_at);
    const std::uint32_t name_len = r.u32("class name length");
    entry.name = std::string(r.bytes(name_len, "class name"));
    for (std::uint32_t i = 0; i < dump.word_dim; ++i) {
      const std::uint64_t at = r.offset();
      const float v = r.f32("word vector");
      if (!std::isfinite(v)) throw FormatError("non-finite word vector entry", at);
      entry.word_vec.push_back(v);
    }
    dump.classes.push_back(std::move(entry));
  }

  for (std::uint64_t k = 0; k < n_records; ++k) {
    DumpRecord rec;
    const std::uint64_t modality_at = r.offset();
    const std::uint8_t modality = r.u8("modality");
    if (modality > 1) throw FormatError("invalid modality", modality_at);
    rec.modality = static_cast<Modality>(modality);
    const std::uint64_t id_at = r.offset();
    rec.class_id = r.u32("record class_id");
    if (!ids.count(rec.class_id)) throw FormatError("record refers to unknown class", id_at);
    rec.vector.reserve(dump.dim);
    for (std::uint32_t i = 0; i < dump.dim; ++i) {
      const std::uint64_t at = r.offset();
      const float v = r.f32("record vector");
      if (!std::isfinite(v)) throw FormatError("non-finite vector entry", at);
      rec.vector.push_back(v);
    }
    if (dump.has(kHasRefPred)) rec.ref_pred = r.u32("ref_pred");
    dump.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last record", r.offset());
  return dump;
}

void write_dump(const EmbeddingDump& dump, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_dump(dump));
}

EmbeddingDump read_dump(const std::filesystem::path& path) {
  return decode_dump(detail::read_file(path));
}

}  // namespace empl::io
