#include "relate/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace relate {
namespace {

struct PngReadBuffer {
  std::string_view data;
  std::size_t pos = 0;
};

[[noreturn]] void png_fail(png_structp, png_const_charp message) { throw std::runtime_error(std::string("png: ") + message); }
void png_warn(png_structp, png_const_charp) {}

void write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

void read_from_buffer(png_structp png, png_bytep data, png_size_t length) {
  auto* in = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (in->pos + length > in->data.size()) png_error(png, "unexpected end of data");
  std::memcpy(data, in->data.data() + in->pos, length);
  in->pos += length;
}

}  // namespace

std::string encode_png(const Image8& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != 3 * static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height))
    throw std::invalid_argument("encode_png: image size does not match its pixel buffer");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::string out;
  try {
    if (!info) throw std::runtime_error("png: cannot create info struct");
    png_set_write_fn(png, &out, write_to_string, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) png_write_row(png, const_cast<png_bytep>(image.pixel(0, y)));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image8 decode_png(std::string_view bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw std::runtime_error("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  PngReadBuffer buffer{bytes, 0};
  Image8 image;
  try {
    if (!info) throw std::runtime_error("png: cannot create info struct");
    png_set_read_fn(png, &buffer, read_from_buffer);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != 3 * static_cast<std::size_t>(image.width))
      throw std::runtime_error("png: unsupported pixel layout");
    image.rgb.resize(3 * static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) png_read_row(png, image.pixel(0, y), nullptr);
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image8 read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_png(buf.str());
}

Image8 to_image8(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw std::invalid_argument("to_image8: expected [3, H, W]");
  const auto bytes = ((chw.detach().to(torch::kFloat64).clamp(-1.0, 1.0) + 1.0) * 127.5)
                         .round()
                         .to(torch::kUInt8)
                         .permute({1, 2, 0})
                         .contiguous();
  Image8 out;
  out.height = static_cast<int>(chw.size(1));
  out.width = static_cast<int>(chw.size(2));
  out.rgb.assign(bytes.data_ptr<std::uint8_t>(), bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return out;
}

torch::Tensor to_tensor(const Image8& image) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(image.rgb.data()), {image.height, image.width, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32);
  return t / 127.5 - 1.0;
}

}  // namespace relate
