#include "ballotgate/imaging.hpp"

#include "ballotgate/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ballotgate {

namespace {

std::string dims(int w, int h) {
  return std::to_string(w) + "x" + std::to_string(h);
}

std::string rect_text(const Rect& r) {
  return "rect(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
         std::to_string(r.w) + "," + std::to_string(r.h) + ")";
}

} // namespace

double iou(const Rect& a, const Rect& b) {
  int ix = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  int iy = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  double inter = static_cast<double>(ix) * iy;
  double uni = static_cast<double>(a.area() + b.area()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

GrayImage::GrayImage(int width, int height, double fill, PixelDomain domain)
    : width_(width), height_(height), domain_(domain) {
  if (width < 1 || height < 1) {
    throw Error(Errc::dimension, "image dimensions must be positive, got " +
                                     dims(width, height));
  }
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

GrayImage::GrayImage(int width, int height, std::vector<double> data,
                     PixelDomain domain)
    : width_(width), height_(height), domain_(domain), data_(std::move(data)) {
  if (width < 1 || height < 1) {
    throw Error(Errc::dimension, "image dimensions must be positive, got " +
                                     dims(width, height));
  }
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(Errc::dimension, "pixel count " + std::to_string(data_.size()) +
                                     " does not match " + dims(width, height));
  }
}

bool GrayImage::contains(const Rect& r) const {
  return r.x >= 0 && r.y >= 0 && r.w >= 1 && r.h >= 1 && r.right() <= width_ &&
         r.bottom() <= height_;
}

IntegralImage::IntegralImage(const GrayImage& img)
    : width_(img.width()), height_(img.height()),
      exact_(img.domain() == PixelDomain::raw8) {
  const auto stride = static_cast<std::size_t>(width_ + 1);
  const auto cells = stride * static_cast<std::size_t>(height_ + 1);
  if (exact_) {
    int_table_.assign(cells, 0);
    for (int y = 0; y < height_; ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < width_; ++x) {
        row += static_cast<std::int64_t>(std::llround(img.at(x, y)));
        int_table_[(y + 1) * stride + x + 1] = int_table_[y * stride + x + 1] + row;
      }
    }
  } else {
    real_table_.assign(cells, 0.0);
    for (int y = 0; y < height_; ++y) {
      double row = 0.0;
      for (int x = 0; x < width_; ++x) {
        row += img.at(x, y);
        real_table_[(y + 1) * stride + x + 1] = real_table_[y * stride + x + 1] + row;
      }
    }
  }
}

double IntegralImage::rect_sum(const Rect& r) const {
  if (r.x < 0 || r.y < 0 || r.w < 1 || r.h < 1 || r.right() > width_ ||
      r.bottom() > height_) {
    throw Error(Errc::bounds, rect_text(r) + " outside " + dims(width_, height_));
  }
  return rect_sum_unchecked(r);
}

GrayImage to_grayscale(const RgbImage& rgb) {
  const auto n = static_cast<std::size_t>(std::max(rgb.width, 0)) *
                 static_cast<std::size_t>(std::max(rgb.height, 0));
  if (rgb.r.size() != n || rgb.g.size() != n || rgb.b.size() != n) {
    throw Error(Errc::dimension, "RGB channels do not all match " +
                                     dims(rgb.width, rgb.height));
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double luma = 0.299 * rgb.r[i] + 0.587 * rgb.g[i] + 0.114 * rgb.b[i];
    out[i] = std::min(255.0, std::floor(luma + 0.5));
  }
  return GrayImage(rgb.width, rgb.height, std::move(out), PixelDomain::raw8);
}

GrayImage normalize(const GrayImage& img) {
  auto px = img.pixels();
  const double n = static_cast<double>(px.size());
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : px) var += (v - mean) * (v - mean);
  var /= n;

  std::vector<double> out(px.size(), 0.0);
  const double sd = std::sqrt(var);
  // Relative floor: rounding noise on a constant image is not signal.
  if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
    for (std::size_t i = 0; i < px.size(); ++i) out[i] = (px[i] - mean) / sd;
  }
  return GrayImage(img.width(), img.height(), std::move(out),
                   PixelDomain::normalized);
}

IntegralImage integral_image(const GrayImage& img) { return IntegralImage(img); }

double rect_sum(const IntegralImage& ii, const Rect& r) { return ii.rect_sum(r); }

GrayImage resize(const GrayImage& img, int w, int h) {
  if (w < 1 || h < 1) {
    throw Error(Errc::dimension, "resize target must be positive, got " + dims(w, h));
  }
  if (w == img.width() && h == img.height()) return img;

  const double sx = static_cast<double>(img.width()) / w;
  const double sy = static_cast<double>(img.height()) / h;
  const bool raw = img.domain() == PixelDomain::raw8;
  std::vector<double> out(static_cast<std::size_t>(w) * h);

  for (int y = 0; y < h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, img.height() - 1);
    double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, img.width() - 1);
      double wx = fx - x0;
      double top = img.at(x0, y0) * (1.0 - wx) + img.at(x1, y0) * wx;
      double bot = img.at(x0, y1) * (1.0 - wx) + img.at(x1, y1) * wx;
      double v = top * (1.0 - wy) + bot * wy;
      if (raw) v = std::clamp(std::floor(v + 0.5), 0.0, 255.0);
      out[static_cast<std::size_t>(y) * w + x] = v;
    }
  }
  return GrayImage(w, h, std::move(out), img.domain());
}

GrayImage crop(const GrayImage& img, const Rect& r) {
  if (!img.contains(r)) {
    throw Error(Errc::bounds, rect_text(r) + " outside " +
                                  dims(img.width(), img.height()));
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(r.area()));
  for (int y = r.y; y < r.bottom(); ++y) {
    for (int x = r.x; x < r.right(); ++x) out.push_back(img.at(x, y));
  }
  return GrayImage(r.w, r.h, std::move(out), img.domain());
}

GrayImage extract_window(const GrayImage& img, const Rect& r, int side) {
  return normalize(resize(crop(img, r), side, side));
}

} // namespace ballotgate
