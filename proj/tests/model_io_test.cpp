#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "vtn/cost.hpp"
#include "vtn/model_io.hpp"

using namespace vtn;
namespace fs = std::filesystem;

namespace {

DecoderConfig tiny_config() {
  DecoderConfig c;
  c.d = 8;
  c.heads = 2;
  c.d_k = 4;
  c.d_v = 4;
  c.d_ff = 16;
  c.blocks = 2;
  c.t = 3;
  c.num_classes = 5;
  c.input_dim = 8;
  return c;
}

DecoderWeights<float> random_weights(const DecoderConfig& c, std::uint64_t seed) {
  auto w = zero_weights<float>(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto& [name, tensor] : w.named_tensors())
    for (auto& v : tensor->data()) v = dist(rng);
  return w;
}

bool bit_equal(const DecoderWeights<float>& a, const DecoderWeights<float>& b) {
  if (!(a.config == b.config)) return false;
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const auto x = ta[i].second->data();
    const auto y = tb[i].second->data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
  }
  return true;
}

LoadErrorKind decode_model_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_model(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return LoadErrorKind::kIo;
}

LoadErrorKind decode_embeddings_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_embeddings(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return LoadErrorKind::kIo;
}

EmbeddingTable sample_table(std::uint64_t rows, std::uint32_t d, bool labels) {
  EmbeddingTable t;
  t.d = d;
  t.rows = rows;
  t.values.resize(rows * d);
  for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<float>(i) * 0.5f - 3.0f;
  if (labels && rows >= 2) t.videos = {{0, rows / 2, 1}, {rows / 2, rows - rows / 2, -1}};
  return t;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("vtn_io_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

}  // namespace

TEST(ModelIoTest, RoundTripIsBitExactAndCanonical) {
  for (bool flags : {false, true}) {
    auto c = tiny_config();
    c.attention_residual = !flags;
    c.post_concat_projection = flags;
    c.input_projection = flags;
    c.input_dim = flags ? 16 : 8;
    const auto w = random_weights(c, 7);
    const auto bytes = encode_model(w);
    EXPECT_TRUE(bit_equal(decode_model(bytes), w));
    EXPECT_EQ(encode_model(w), bytes);
    // Header (58 bytes) + payload + crc.
    EXPECT_EQ(bytes.size(), 58 + 4 * count_params(c).total() + 4);
  }
}

TEST(ModelIoTest, FileRoundTripAndDoubleDownConversion) {
  TempDir dir;
  const auto w = random_weights(tiny_config(), 3);
  save_model(w, dir / "m.vtnm");
  EXPECT_TRUE(bit_equal(load_model(dir / "m.vtnm"), w));
  save_model(w.cast<double>(), dir / "d.vtnm");
  EXPECT_TRUE(bit_equal(load_model(dir / "d.vtnm"), w));
  EXPECT_FALSE(fs::exists(dir / ("m.vtnm.tmp." + std::to_string(::getpid()))));
  try {
    load_model(dir / "missing.vtnm");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::kIo);
  }
}

TEST(ModelIoTest, CorruptionClassesAreDistinct) {
  const auto good = encode_model(random_weights(tiny_config(), 1));
  auto bad = good;
  bad[0] ^= 0x01;
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kBadMagic);
  bad = good;
  bad[4] ^= 0x02;
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kBadVersion);
  bad = good;
  bad[100] ^= 0x10;
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kCrcMismatch);
  bad = good;
  bad[good.size() - 2] ^= 0x80;
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kCrcMismatch);
  bad = good;
  bad.pop_back();
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kTruncated);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(decode_model_error(bad), LoadErrorKind::kIntegrity);
  EXPECT_EQ(decode_model_error(std::span<const std::uint8_t>(good).first(10)), LoadErrorKind::kTruncated);
}

TEST(ModelIoTest, ParameterCountMismatchIsIntegrityError) {
  auto bytes = encode_model(random_weights(tiny_config(), 2));
  bytes[50] += 1;  // declared element count
  EXPECT_EQ(decode_model_error(bytes), LoadErrorKind::kIntegrity);
  bytes = encode_model(random_weights(tiny_config(), 2));
  bytes[42] = 6;  // num_classes 5 -> 6 changes count_params
  EXPECT_EQ(decode_model_error(bytes), LoadErrorKind::kIntegrity);
  bytes = encode_model(random_weights(tiny_config(), 2));
  bytes[6] |= 0x40;  // unknown flag
  EXPECT_EQ(decode_model_error(bytes), LoadErrorKind::kIntegrity);
  bytes = encode_model(random_weights(tiny_config(), 2));
  bytes[14] = 0;  // d = 0 makes the config invalid
  EXPECT_EQ(decode_model_error(bytes), LoadErrorKind::kIntegrity);
}

TEST(EmbeddingIoTest, RoundTripWithAndWithoutLabels) {
  for (bool labels : {false, true}) {
    const auto t = sample_table(10, 3, labels);
    const auto bytes = encode_embeddings(t);
    EXPECT_EQ(decode_embeddings(bytes), t);
    EXPECT_EQ(encode_embeddings(decode_embeddings(bytes)), bytes);
  }
}

TEST(EmbeddingIoTest, EmptyTableIsValid) {
  const auto t = sample_table(0, 16, false);
  const auto back = decode_embeddings(encode_embeddings(t));
  EXPECT_EQ(back.rows, 0u);
  EXPECT_TRUE(back.values.empty());
  EXPECT_EQ(back.d, 16u);
}

TEST(EmbeddingIoTest, WidthMismatchFailsLoad) {
  TempDir dir;
  save_embeddings(sample_table(4, 3, false), dir / "e.vtne");
  EXPECT_NO_THROW(load_embeddings(dir / "e.vtne", 3u));
  EXPECT_THROW(load_embeddings(dir / "e.vtne", 4u), ConfigError);
}

TEST(EmbeddingIoTest, CorruptionClassesAreDistinct) {
  const auto good = encode_embeddings(sample_table(6, 2, true));
  auto bad = good;
  bad[3] = 'X';
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kBadMagic);
  bad = good;
  bad[5] = 9;
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kBadVersion);
  bad = good;
  bad[20] ^= 0x04;
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kCrcMismatch);
  bad = good;
  bad.back() ^= 0x01;
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kCrcMismatch);
  bad = good;
  bad.resize(bad.size() - 1);
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kTruncated);
  bad = good;
  bad[6] = 0xff;  // d becomes huge: payload cannot fit
  EXPECT_EQ(decode_embeddings_error(bad), LoadErrorKind::kTruncated);
}

TEST(EmbeddingIoTest, OutOfRangeVideoRecordIsIntegrityError) {
  auto t = sample_table(6, 2, true);
  auto bytes = encode_embeddings(t);
  t.videos[1].row_count = 99;
  EXPECT_THROW(encode_embeddings(t), ConfigError);
  // Patch the record on disk and fix the crc so only the bounds check fires.
  const std::size_t body_start = 18;
  const std::size_t record1 = body_start + 6 * 2 * 4 + 1 + 8 + 20;
  bytes[record1 + 8] = 99;
  const auto body = std::span<const std::uint8_t>(bytes).subspan(body_start, bytes.size() - body_start - 4);
  const auto crc = crc32_of(body);
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
  EXPECT_EQ(decode_embeddings_error(bytes), LoadErrorKind::kIntegrity);
}

TEST(FrameIoTest, RoundTrip) {
  FrameSequence f;
  f.num_frames = 3;
  f.height = 4;
  f.width = 5;
  f.pixels.resize(f.frame_size() * 3);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const auto back = decode_frames(encode_frames(f));
  EXPECT_EQ(back.pixels, f.pixels);
  EXPECT_EQ(back.num_frames, 3u);
  EXPECT_EQ(back.height, 4u);
  EXPECT_EQ(back.width, 5u);
  auto bytes = encode_frames(f);
  bytes.pop_back();
  EXPECT_THROW(decode_frames(bytes), LoadError);
}

TEST(Crc32Test, KnownVector) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())),
            0xCBF43926u);
}
