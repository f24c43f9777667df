#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ballotgate {

/// raw8 pixels are integers in [0,255]; normalized pixels are arbitrary reals.
enum class PixelDomain { raw8, normalized };

struct Rect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  int right() const { return x + w; }
  int bottom() const { return y + h; }
  long area() const { return static_cast<long>(w) * h; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

double iou(const Rect& a, const Rect& b);

/// Row-major single-channel raster.
class GrayImage {
public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0,
            PixelDomain domain = PixelDomain::raw8);
  GrayImage(int width, int height, std::vector<double> data,
            PixelDomain domain = PixelDomain::raw8);

  int width() const { return width_; }
  int height() const { return height_; }
  PixelDomain domain() const { return domain_; }
  bool empty() const { return data_.empty(); }
  bool contains(const Rect& r) const;

  double at(int x, int y) const { return data_[index(x, y)]; }
  double& at(int x, int y) { return data_[index(x, y)]; }

  std::span<const double> pixels() const& { return data_; }
  std::span<double> pixels() & { return data_; }
  std::span<const double> pixels() && = delete;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  PixelDomain domain_ = PixelDomain::raw8;
  std::vector<double> data_;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> r, g, b;
};

/// Summed-area table. `at(x, y)` is the sum over every pixel (x', y') with
/// x' <= x and y' <= y. raw8 sources are summed in exact 64-bit integers.
class IntegralImage {
public:
  explicit IntegralImage(const GrayImage& img);

  int width() const { return width_; }
  int height() const { return height_; }
  bool exact() const { return exact_; }

  double at(int x, int y) const { return padded(x + 1, y + 1); }

  /// Sum of the pixels inside `r` from four table lookups. Throws on a rect
  /// that leaves the image.
  double rect_sum(const Rect& r) const;

  /// Same as rect_sum without the bounds check; the caller guarantees `r` fits.
  double rect_sum_unchecked(const Rect& r) const {
    return padded(r.x + r.w, r.y + r.h) - padded(r.x, r.y + r.h) -
           padded(r.x + r.w, r.y) + padded(r.x, r.y);
  }

private:
  double padded(int px, int py) const {
    auto i = static_cast<std::size_t>(py) * static_cast<std::size_t>(width_ + 1) +
             static_cast<std::size_t>(px);
    return exact_ ? static_cast<double>(int_table_[i]) : real_table_[i];
  }

  int width_ = 0;
  int height_ = 0;
  bool exact_ = true;
  // (width+1) x (height+1) with a zero first row and column.
  std::vector<std::int64_t> int_table_;
  std::vector<double> real_table_;
};

GrayImage to_grayscale(const RgbImage& rgb);

/// Zero mean, unit population variance. Constant images map to all zeros.
GrayImage normalize(const GrayImage& img);

IntegralImage integral_image(const GrayImage& img);

double rect_sum(const IntegralImage& ii, const Rect& r);

/// Bilinear resize with pixel-centre alignment. raw8 output is rounded back
/// to integers; normalized output keeps full precision.
GrayImage resize(const GrayImage& img, int w, int h);

GrayImage crop(const GrayImage& img, const Rect& r);

/// Crop, resize to side x side and normalize.
GrayImage extract_window(const GrayImage& img, const Rect& r, int side = 24);

} // namespace ballotgate
