#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace relate {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

std::string encode_png(const Image8& image);
/// Throws std::runtime_error on malformed data.
Image8 decode_png(std::string_view bytes);
void write_png(const std::filesystem::path& path, const Image8& image);
Image8 read_png(const std::filesystem::path& path);

/// [3, H, W] in [-1, 1] -> 8-bit, v = round((x + 1) / 2 * 255).
Image8 to_image8(const torch::Tensor& chw);
/// 8-bit -> [3, H, W] float32 in [-1, 1].
torch::Tensor to_tensor(const Image8& image);

}  // namespace relate
