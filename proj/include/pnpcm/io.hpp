#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pnpcm/tensor.hpp"

namespace pnpcm {

// Tensor file: "PNPT" | u32 version=1 | tensor header | payload, with the
// same header and payload encoding as the denoiser wire protocol.
inline constexpr char kTensorFileMagic[4] = {'P', 'N', 'P', 'T'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

std::vector<std::uint8_t> encode_tensor_file(const Tensor& x);
// Throws IoError on bad magic, version, truncation or trailing bytes.
Tensor decode_tensor_file(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& x);
Tensor load_tensor(const std::filesystem::path& path);

// Netpbm rasters (P2, P3, P5, P6; maxval up to 65535). Grayscale loads as
// [h, w], RGB as [h, w, 3], scaled by 1/maxval into [0, 1].
Tensor load_pnm(const std::filesystem::path& path);

// Writes binary P5 (1 channel) or P6 (3 channels) after clamping to [0, 1].
// Complex input is written as its magnitude.
void save_pnm(const std::filesystem::path& path, const Tensor& x, int bit_depth = 8);

// Dispatches on the file contents: tensor files load verbatim, Netpbm
// rasters are normalized. When `expected` is given, a different shape is a
// ShapeError.
Tensor load_image(const std::filesystem::path& path,
                  const std::optional<Shape>& expected = std::nullopt);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pnpcm
