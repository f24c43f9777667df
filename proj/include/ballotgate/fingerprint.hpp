#pragma once

#include "ballotgate/imaging.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ballotgate {

/// 1 = ridge, 0 = background. Pixels outside the raster read as background.
struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryImage() = default;
  BinaryImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  bool ridge(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height &&
           data[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, bool v) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t ridge_count() const;

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;
};

/// Dark ridges: a pixel is ridge iff it is darker than its block mean. Blocks
/// whose variance is below 5 are left as background.
BinaryImage binarize(const GrayImage& img, int block = 16);

/// Zhang-Suen thinning to a fixpoint, followed by removal of redundant pixels
/// that still form 2x2 ridge blocks.
BinaryImage thin(const BinaryImage& img);

/// Half the number of 0/1 transitions around the 8-neighbour ring of (x, y).
int crossing_number(const BinaryImage& skel, int x, int y);

enum class MinutiaKind { ending, bifurcation, short_ridge };

const char* minutia_kind_name(MinutiaKind k);
MinutiaKind minutia_kind_from_name(std::string_view name);

struct Minutia {
  double x = 0.0;
  double y = 0.0;
  double angle = 0.0;  // degrees in [0, 360); short ridges use [0, 180)
  MinutiaKind kind = MinutiaKind::ending;

  friend bool operator==(const Minutia&, const Minutia&) = default;
};

struct MinutiaeOptions {
  int min_ridge_len = 8;  // endings joined by fewer pixels form a short ridge
  int trace_len = 10;     // pixels followed to estimate the ridge direction
  int border = 5;         // minutiae closer than this to the edge are dropped
};

/// Crossing-number minutiae, sorted by (y, x). Throws not_thinned if any 2x2
/// block is entirely ridge.
std::vector<Minutia> extract_minutiae(const BinaryImage& skel, const MinutiaeOptions& opt = {});

struct FingerprintTemplate {
  int width = 0;
  int height = 0;
  std::vector<Minutia> minutiae;

  friend bool operator==(const FingerprintTemplate&, const FingerprintTemplate&) = default;
};

/// binarize -> thin -> extract_minutiae
FingerprintTemplate make_fingerprint_template(const GrayImage& img, int block = 16,
                                              const MinutiaeOptions& opt = {});

struct MatchOptions {
  double r_tol = 10.0;      // pixels
  double theta_tol = 15.0;  // degrees
};

struct MatchResult {
  double similarity = 0.0;
  int matched_pairs = 0;
  double dx = 0.0, dy = 0.0, dtheta = 0.0;  // maps a onto b
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index in a, index in b)
};

/// Rigid alignment search over every same-kind reference pair, greedy
/// one-to-one pairing under the tolerances, similarity 2M / (|a| + |b|).
MatchResult match_templates(const FingerprintTemplate& a, const FingerprintTemplate& b,
                            const MatchOptions& opt = {});

struct FingerprintVerification {
  MatchResult match;
  bool accepted = false;
};

FingerprintVerification verify_fingerprint(const GrayImage& probe,
                                           const FingerprintTemplate& enrolled,
                                           double threshold = 0.90,
                                           const MatchOptions& opt = {});

std::string fingerprint_to_json(const FingerprintTemplate& t);
FingerprintTemplate fingerprint_from_json(std::string_view text);

} // namespace ballotgate
