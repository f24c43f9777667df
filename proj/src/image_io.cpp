#include "ballotgate/image_io.hpp"

#include "ballotgate/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace ballotgate {

namespace {

class PgmReader {
public:
  explicit PgmReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw Error(Errc::malformed_input, "PGM header: expected integer");
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000) throw Error(Errc::malformed_input, "PGM header: value too large");
    }
    return static_cast<int>(v);
  }

  void skip_single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw Error(Errc::malformed_input, "PGM header: missing separator");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 2;
};

GrayImage decode_pgm(std::span<const unsigned char> bytes) {
  const bool binary = bytes[1] == '5';
  PgmReader rd(bytes);
  int w = rd.next_int();
  int h = rd.next_int();
  int maxval = rd.next_int();
  if (w < 1 || h < 1) throw Error(Errc::malformed_input, "PGM: empty image");
  if (maxval < 1 || maxval > 255) {
    throw Error(Errc::malformed_input, "PGM: only 8-bit images are supported");
  }
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<double> px(n);
  if (binary) {
    rd.skip_single_whitespace();
    if (bytes.size() - rd.pos() < n) throw Error(Errc::malformed_input, "PGM: truncated raster");
    for (std::size_t i = 0; i < n; ++i) px[i] = bytes[rd.pos() + i];
  } else {
    for (std::size_t i = 0; i < n; ++i) px[i] = std::min(rd.next_int(), maxval);
  }
  if (maxval != 255) {
    for (auto& v : px) v = std::floor(v * 255.0 / maxval + 0.5);
  }
  return GrayImage(w, h, std::move(px), PixelDomain::raw8);
}

struct PngSource {
  std::span<const unsigned char> bytes;
  std::size_t pos = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->bytes.size() - src->pos < len) png_error(png, "truncated PNG");
  std::memcpy(out, src->bytes.data() + src->pos, len);
  src->pos += len;
}

[[noreturn]] void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_quiet_warning(png_structp, png_const_charp) {}

GrayImage decode_png(std::span<const unsigned char> bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error,
                                           png_quiet_warning);
  if (png == nullptr) throw Error(Errc::io, "libpng: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(Errc::io, "libpng: cannot allocate info");
  }
  PngSource src{bytes, 0};
  std::vector<png_byte> raster;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0;
  png_uint_32 h = 0;
  int channels = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(Errc::malformed_input, "PNG decode failed");
  }
  png_set_read_fn(png, &src, png_read_from_span);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const auto row_bytes = png_get_rowbytes(png, info);
  raster.resize(row_bytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const auto n = static_cast<std::size_t>(w) * h;
  if (channels == 1) {
    std::vector<double> px(raster.begin(), raster.begin() + static_cast<std::ptrdiff_t>(n));
    return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(px));
  }
  if (channels != 3) throw Error(Errc::malformed_input, "PNG: unsupported channel layout");
  RgbImage rgb{static_cast<int>(w), static_cast<int>(h), {}, {}, {}};
  rgb.r.resize(n);
  rgb.g.resize(n);
  rgb.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rgb.r[i] = raster[3 * i];
    rgb.g[i] = raster[3 * i + 1];
    rgb.b[i] = raster[3 * i + 2];
  }
  return to_grayscale(rgb);
}

} // namespace

GrayImage decode_image(std::span<const unsigned char> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) {
    return decode_pgm(bytes);
  }
  static constexpr unsigned char png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(png_magic, png_magic + 8, bytes.begin())) {
    return decode_png(bytes);
  }
  throw Error(Errc::malformed_input, "unrecognised image format (expected PGM or PNG)");
}

GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open image " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  auto px = img.pixels();
  double lo = 0.0;
  double scale = 1.0;
  if (img.domain() == PixelDomain::normalized) {
    auto [mn, mx] = std::minmax_element(px.begin(), px.end());
    lo = *mn;
    scale = *mx > *mn ? 255.0 / (*mx - *mn) : 0.0;
  }
  out.reserve(out.size() + px.size());
  for (double v : px) {
    double s = std::clamp(std::floor((v - lo) * scale + 0.5), 0.0, 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(s)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  auto data = encode_pgm(img);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(Errc::io, "short write to " + path.string());
}

} // namespace ballotgate
