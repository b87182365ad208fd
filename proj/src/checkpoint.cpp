#include "empl/checkpoint.hpp"

#include <cmath>

#include "binary.hpp"
#include "empl/errors.hpp"

namespace empl::io {

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.params.validate();
  const ModelDims dims = ckpt.params.dims();
  detail::ByteWriter w;
  w.bytes("EMPC");
  w.u32(kCheckpointFormatVersion);
  w.u32(static_cast<std::uint32_t>(dims.d_in));
  w.u32(static_cast<std::uint32_t>(dims.d));
  w.u32(static_cast<std::uint32_t>(dims.d_tok));
  w.u32(static_cast<std::uint32_t>(dims.m));
  w.u32(static_cast<std::uint32_t>(ckpt.params.n_classes()));
  w.u32(static_cast<std::uint32_t>(dims.pool));
  w.u32(dims.prompt_gain ? 1u : 0u);
  w.u64(ckpt.seed);
  for (double v : ckpt.params.flatten()) w.f64(v);
  return w.str();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != "EMPC") throw FormatError("bad magic, expected EMPC", 0);
  const std::uint64_t version_at = r.offset();
  if (r.u32("format_version") != kCheckpointFormatVersion) {
    throw FormatError("unsupported checkpoint version", version_at);
  }
  ModelDims dims;
  const std::uint64_t dims_at = r.offset();
  dims.d_in = r.u32("d_in");
  dims.d = r.u32("d");
  dims.d_tok = r.u32("d_tok");
  dims.m = r.u32("m");
  const std::uint32_t n_classes = r.u32("n_classes");
  if (dims.d_in == 0 || dims.d == 0 || dims.d_tok == 0 || dims.m == 0 || n_classes == 0) {
    throw FormatError("zero dimension in checkpoint header", dims_at);
  }
  const std::uint64_t pool_at = r.offset();
  const std::uint32_t pool = r.u32("pool_mode");
  if (pool > 1) throw FormatError("unknown pool mode", pool_at);
  dims.pool = static_cast<PoolMode>(pool);
  const std::uint64_t flags_at = r.offset();
  const std::uint32_t flags = r.u32("flags");
  if (flags > 1) throw FormatError("unknown checkpoint flags", flags_at);
  dims.prompt_gain = flags == 1;

  Checkpoint ckpt;
  ckpt.seed = r.u64("seed");
  ModelParams& p = ckpt.params;
  p.pool = dims.pool;
  p.image_map = Matrix(dims.d, dims.d_in);
  p.image_bias = Vec(dims.d);
  p.pool_map = Matrix(dims.d, dims.pool_in());
  p.pool_bias = Vec(dims.d);
  p.contexts = Matrix(dims.m, dims.d_tok);
  p.word_vecs = Matrix(n_classes, dims.d_tok);
  if (dims.prompt_gain) p.extra = Vec(dims.d);
  Vec flat(p.flat_size());
  for (double& v : flat) {
    const std::uint64_t at = r.offset();
    v = r.f64("parameter");
    if (!std::isfinite(v)) throw FormatError("non-finite parameter", at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after parameters", r.offset());
  p.assign_flat(flat);
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace empl::io
