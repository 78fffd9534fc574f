#include "vtn/model_io.hpp"

#include <zlib.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

#include "vtn/cost.hpp"

namespace vtn {

namespace {

constexpr std::array<std::uint8_t, 4> kModelMagic{'V', 'T', 'N', 'M'};
constexpr std::array<std::uint8_t, 4> kEmbeddingMagic{'V', 'T', 'N', 'E'};
constexpr std::array<std::uint8_t, 4> kFrameMagic{'V', 'T', 'N', 'F'};
constexpr std::uint32_t kKnownFlags =
    kFlagAttentionResidual | kFlagInputProjection | kFlagPostConcatProjection;
constexpr std::size_t kVideoRecordBytes = 8 + 8 + 4;

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { little_endian(v, 2); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::span<const std::uint8_t> view() const { return out_; }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

/// Bounds-checked little-endian reader; every read past the end is a
/// truncation error.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string_view what)
      : bytes_(bytes), what_(what) {}

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t n, std::string_view field) const {
    if (n > remaining()) {
      throw LoadError(LoadErrorKind::kTruncated,
                      std::string(what_) + ": " + std::string(field) + " needs " +
                          std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
    }
  }
  std::span<const std::uint8_t> bytes(std::size_t n, std::string_view field) {
    require(n, field);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(std::string_view f) { return bytes(1, f)[0]; }
  std::uint16_t u16(std::string_view f) { return static_cast<std::uint16_t>(little_endian(2, f)); }
  std::uint32_t u32(std::string_view f) { return static_cast<std::uint32_t>(little_endian(4, f)); }
  std::uint64_t u64(std::string_view f) { return little_endian(8, f); }
  std::int32_t i32(std::string_view f) { return static_cast<std::int32_t>(u32(f)); }
  float f32(std::string_view f) { return std::bit_cast<float>(u32(f)); }

 private:
  std::uint64_t little_endian(int n, std::string_view field) {
    auto b = bytes(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

void check_magic(ByteReader& r, const std::array<std::uint8_t, 4>& magic, std::string_view what) {
  auto got = r.bytes(4, "magic");
  if (!std::equal(got.begin(), got.end(), magic.begin())) {
    throw LoadError(LoadErrorKind::kBadMagic, std::string(what) + ": not a " +
                                                  std::string(magic.begin(), magic.end()) +
                                                  " file");
  }
}

void check_version(ByteReader& r, std::uint16_t expected, std::string_view what) {
  const auto version = r.u16("version");
  if (version != expected) {
    throw LoadError(LoadErrorKind::kBadVersion,
                    std::string(what) + ": version " + std::to_string(version) + ", expected " +
                        std::to_string(expected));
  }
}

void check_crc(ByteReader& r, std::span<const std::uint8_t> covered, std::string_view what) {
  const auto stored = r.u32("crc32");
  const auto computed = crc32_of(covered);
  if (stored != computed) {
    throw LoadError(LoadErrorKind::kCrcMismatch, std::string(what) + ": stored crc " +
                                                     std::to_string(stored) + ", computed " +
                                                     std::to_string(computed));
  }
}

void check_fully_consumed(const ByteReader& r, std::string_view what) {
  if (r.remaining() != 0) {
    throw LoadError(LoadErrorKind::kIntegrity,
                    std::string(what) + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
}

std::uint64_t checked_product(std::uint64_t a, std::uint64_t b, std::string_view what) {
  if (a != 0 && b > UINT64_MAX / a) {
    throw LoadError(LoadErrorKind::kIntegrity, std::string(what) + ": declared size overflows");
  }
  return a * b;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError(LoadErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw LoadError(LoadErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw LoadError(LoadErrorKind::kIo, "cannot publish " + path.string() + ": " + ec.message());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw LoadError(LoadErrorKind::kIo, "cannot read " + path.string());
  return bytes;
}

std::vector<std::uint8_t> encode_model(const DecoderWeights<float>& weights) {
  const DecoderConfig& c = weights.config;
  c.validate();
  ByteWriter w;
  w.bytes(kModelMagic);
  w.u16(kModelFormatVersion);
  std::uint32_t flags = 0;
  if (c.attention_residual) flags |= kFlagAttentionResidual;
  if (c.input_projection) flags |= kFlagInputProjection;
  if (c.post_concat_projection) flags |= kFlagPostConcatProjection;
  w.u32(flags);
  w.u32(kActivationRelu);
  for (std::uint32_t v : {c.d, c.heads, c.d_k, c.d_v, c.d_ff, c.blocks, c.t, c.num_classes,
                          c.input_dim})
    w.u32(v);
  w.u64(weights.parameter_count());

  ByteWriter payload;
  for (const auto& [name, tensor] : weights.named_tensors())
    for (float v : tensor->data()) payload.f32(v);
  w.bytes(payload.view());
  w.u32(crc32_of(payload.view()));
  return w.take();
}

DecoderWeights<float> decode_model(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view kWhat = "model";
  ByteReader r(bytes, kWhat);
  check_magic(r, kModelMagic, kWhat);
  check_version(r, kModelFormatVersion, kWhat);
  const auto flags = r.u32("flags");
  const auto activation = r.u32("activation");
  DecoderConfig c;
  c.d = r.u32("d");
  c.heads = r.u32("heads");
  c.d_k = r.u32("d_k");
  c.d_v = r.u32("d_v");
  c.d_ff = r.u32("d_ff");
  c.blocks = r.u32("blocks");
  c.t = r.u32("t");
  c.num_classes = r.u32("num_classes");
  c.input_dim = r.u32("input_dim");
  const auto count = r.u64("parameter count");

  if ((flags & ~kKnownFlags) != 0) {
    throw LoadError(LoadErrorKind::kIntegrity, "model: unknown flag bits " + std::to_string(flags));
  }
  if (activation != kActivationRelu) {
    throw LoadError(LoadErrorKind::kIntegrity,
                    "model: unknown activation " + std::to_string(activation));
  }
  c.attention_residual = (flags & kFlagAttentionResidual) != 0;
  c.input_projection = (flags & kFlagInputProjection) != 0;
  c.post_concat_projection = (flags & kFlagPostConcatProjection) != 0;
  std::uint64_t expected = 0;
  try {
    expected = count_params(c).total();
  } catch (const ConfigError& e) {
    throw LoadError(LoadErrorKind::kIntegrity, std::string("model: ") + e.what());
  }
  if (count != expected) {
    throw LoadError(LoadErrorKind::kIntegrity, "model: payload declares " + std::to_string(count) +
                                                   " parameters, header config needs " +
                                                   std::to_string(expected));
  }
  const auto payload_bytes = checked_product(count, 4, kWhat);
  r.require(payload_bytes + 4, "payload and crc");
  const auto payload = r.bytes(payload_bytes, "payload");
  check_crc(r, payload, kWhat);
  check_fully_consumed(r, kWhat);

  DecoderWeights<float> weights = zero_weights<float>(c);
  ByteReader p(payload, kWhat);
  for (auto& [name, tensor] : weights.named_tensors())
    for (auto& v : tensor->data()) v = p.f32(name);
  return weights;
}

void save_model(const DecoderWeights<float>& weights, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(weights));
}

void save_model(const DecoderWeights<double>& weights, const std::filesystem::path& path) {
  save_model(weights.cast<float>(), path);
}

DecoderWeights<float> load_model(const std::filesystem::path& path) {
  return decode_model(read_file(path));
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table) {
  table.validate();
  ByteWriter w;
  w.bytes(kEmbeddingMagic);
  w.u16(kEmbeddingFormatVersion);
  w.u32(table.d);
  w.u64(table.rows);
  ByteWriter body;
  for (float v : table.values) body.f32(v);
  body.u8(table.videos.empty() ? 0 : 1);
  if (!table.videos.empty()) {
    body.u64(table.videos.size());
    for (const auto& v : table.videos) {
      body.u64(v.first_row);
      body.u64(v.row_count);
      body.i32(v.label);
    }
  }
  w.bytes(body.view());
  w.u32(crc32_of(body.view()));
  return w.take();
}

EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes,
                                 std::optional<std::uint32_t> expected_d) {
  constexpr std::string_view kWhat = "embeddings";
  ByteReader r(bytes, kWhat);
  check_magic(r, kEmbeddingMagic, kWhat);
  check_version(r, kEmbeddingFormatVersion, kWhat);
  EmbeddingTable table;
  table.d = r.u32("d");
  table.rows = r.u64("rows");
  if (table.d == 0) throw LoadError(LoadErrorKind::kIntegrity, "embeddings: d is zero");
  if (expected_d && *expected_d != table.d) {
    throw ConfigError("embeddings have d = " + std::to_string(table.d) + ", consumer expects " +
                      std::to_string(*expected_d));
  }

  const std::size_t body_start = r.position();
  const auto value_bytes = checked_product(checked_product(table.rows, table.d, kWhat), 4, kWhat);
  r.require(value_bytes, "payload");
  auto payload = r.bytes(value_bytes, "payload");
  const auto has_labels = r.u8("label flag");
  if (has_labels > 1) {
    throw LoadError(LoadErrorKind::kIntegrity, "embeddings: bad label flag " + std::to_string(has_labels));
  }
  std::uint64_t record_count = 0;
  std::span<const std::uint8_t> records;
  if (has_labels == 1) {
    record_count = r.u64("record count");
    records = r.bytes(checked_product(record_count, kVideoRecordBytes, kWhat), "label records");
  }
  const auto body = bytes.subspan(body_start, r.position() - body_start);
  check_crc(r, body, kWhat);
  check_fully_consumed(r, kWhat);

  table.values.resize(table.rows * table.d);
  ByteReader p(payload, kWhat);
  for (auto& v : table.values) v = p.f32("value");
  ByteReader lr(records, kWhat);
  for (std::uint64_t i = 0; i < record_count; ++i) {
    VideoRecord v;
    v.first_row = lr.u64("first_row");
    v.row_count = lr.u64("row_count");
    v.label = lr.i32("label");
    table.videos.push_back(v);
  }
  try {
    table.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadErrorKind::kIntegrity, e.what());
  }
  if (has_labels == 1 && table.videos.empty()) {
    throw LoadError(LoadErrorKind::kIntegrity, "embeddings: label block with no records");
  }
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  write_file_atomic(path, encode_embeddings(table));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               std::optional<std::uint32_t> expected_d) {
  return decode_embeddings(read_file(path), expected_d);
}

std::vector<std::uint8_t> encode_frames(const FrameSequence& frames) {
  frames.validate();
  ByteWriter w;
  w.bytes(kFrameMagic);
  w.u16(kFrameFormatVersion);
  w.u32(frames.height);
  w.u32(frames.width);
  w.u32(frames.channels);
  w.u64(frames.num_frames);
  w.bytes(frames.pixels);
  return w.take();
}

FrameSequence decode_frames(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view kWhat = "frames";
  ByteReader r(bytes, kWhat);
  check_magic(r, kFrameMagic, kWhat);
  check_version(r, kFrameFormatVersion, kWhat);
  FrameSequence f;
  f.height = r.u32("height");
  f.width = r.u32("width");
  f.channels = r.u32("channels");
  const auto count = r.u64("frame count");
  if (count == 0 || count > UINT32_MAX || f.height == 0 || f.width == 0 || f.channels == 0) {
    throw LoadError(LoadErrorKind::kIntegrity, "frames: degenerate dimensions");
  }
  f.num_frames = static_cast<std::uint32_t>(count);
  f.mean.assign(f.channels, 0.5f);
  f.stddev.assign(f.channels, 0.5f);
  const auto n = checked_product(count, f.frame_size(), kWhat);
  auto px = r.bytes(n, "pixels");
  f.pixels.assign(px.begin(), px.end());
  check_fully_consumed(r, kWhat);
  return f;
}

void save_frames(const FrameSequence& frames, const std::filesystem::path& path) {
  write_file_atomic(path, encode_frames(frames));
}

FrameSequence load_frames(const std::filesystem::path& path) {
  return decode_frames(read_file(path));
}

}  // namespace vtn
