#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "vtn/decoder.hpp"
#include "vtn/error.hpp"
#include "vtn/frontend.hpp"

namespace vtn {

// Model file ("VTNM"), all integers little-endian:
//   magic[4] version:u16 flags:u32 activation:u32
//   d heads d_k d_v d_ff blocks t num_classes input_dim : u32 each
//   count:u64  payload: count x f32  crc32(payload):u32
// Payload order: input projection (w, b) when flagged; per block every head's
// W_q b_q W_k b_k W_v b_v, then W_o b_o when flagged, then W_ff1 b_ff1 W_ff2
// b_ff2; finally W_cls b_cls.
inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kFlagAttentionResidual = 1u << 0;
inline constexpr std::uint32_t kFlagInputProjection = 1u << 1;
inline constexpr std::uint32_t kFlagPostConcatProjection = 1u << 2;
inline constexpr std::uint32_t kActivationRelu = 0;

// Embedding file ("VTNE"):
//   magic[4] version:u16 d:u32 rows:u64  payload: rows x d f32
//   has_labels:u8 [count:u64 {first_row:u64 row_count:u64 label:i32} x count]
//   crc32(payload and label block):u32
inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;

// Frame container ("VTNF"):
//   magic[4] version:u16 height:u32 width:u32 channels:u32 frames:u64
//   pixels: frames x channels x height x width u8
inline constexpr std::uint16_t kFrameFormatVersion = 1;

/// Weights are stored as 32-bit floats; 64-bit weights are rounded on save.
std::vector<std::uint8_t> encode_model(const DecoderWeights<float>& weights);
DecoderWeights<float> decode_model(std::span<const std::uint8_t> bytes);

void save_model(const DecoderWeights<float>& weights, const std::filesystem::path& path);
void save_model(const DecoderWeights<double>& weights, const std::filesystem::path& path);
DecoderWeights<float> load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table);
/// Throws ConfigError when expected_d is set and differs from the header.
EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes,
                                 std::optional<std::uint32_t> expected_d = std::nullopt);

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               std::optional<std::uint32_t> expected_d = std::nullopt);

std::vector<std::uint8_t> encode_frames(const FrameSequence& frames);
FrameSequence decode_frames(std::span<const std::uint8_t> bytes);
void save_frames(const FrameSequence& frames, const std::filesystem::path& path);
FrameSequence load_frames(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace vtn
