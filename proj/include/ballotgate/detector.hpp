#pragma once

#include "ballotgate/imaging.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ballotgate {

enum class HaarKind { two_rect_h, two_rect_v, three_rect_h, three_rect_v, four_rect };

std::string_view haar_kind_name(HaarKind kind);
HaarKind haar_kind_from_name(std::string_view name);

/// A rectangular Haar feature inside a square detection window. `base` holds
/// the top-left corner and the size of one unit cell; the composite extent is
/// two or three cells along the feature's axis (two in both axes for
/// four_rect).
///
/// Polarity conventions (white minus black):
///   two_rect_h    left | right          -> left - right
///   two_rect_v    top / bottom          -> top - bottom
///   three_rect_h  left | mid | right    -> left + right - 2 * mid
///   three_rect_v  top / mid / bottom    -> top + bottom - 2 * mid
///   four_rect     2x2 checkerboard      -> (tl + br) - (tr + bl)
/// The middle band of the three-cell kinds is doubled so that white and black
/// cover the same area and a constant window evaluates to exactly zero.
struct HaarFeature {
  HaarKind kind = HaarKind::two_rect_h;
  Rect base;

  Rect extent() const;
  friend bool operator==(const HaarFeature&, const HaarFeature&) = default;
};

/// Every placement and scale of the five kinds inside a side x side window,
/// ordered by kind, then unit width, unit height, y, x.
std::vector<HaarFeature> enumerate_features(int window_side = 24);

/// Counts placements of one kind without materialising them.
std::size_t count_features(HaarKind kind, int window_side);

double eval_feature(const IntegralImage& ii, const HaarFeature& f);

enum class SampleLabel { nonface, face };

struct WeakClassifier {
  HaarFeature feature;
  double threshold = 0.0;
  int polarity = 1;
  double alpha = 0.0;

  /// True (face) iff polarity * value < polarity * threshold.
  bool predict(double value) const { return polarity * value < polarity * threshold; }
  bool predict(const IntegralImage& ii) const;
};

struct BoostRound {
  std::size_t feature_index = 0;  // index into the training pool
  double weighted_error = 0.0;    // before clamping
  double training_error = 0.0;    // ensemble error after this round
  double weight_sum = 0.0;        // after renormalisation
};

struct BoostResult {
  std::vector<WeakClassifier> learners;
  std::vector<BoostRound> rounds;
  /// Sample weights after the last round.
  std::vector<double> final_weights;
  /// Some round found a stump with zero weighted error; training stops there.
  bool perfect_separation = false;
};

/// Discrete AdaBoost over decision stumps on Haar feature values.
///
/// Sample weights start class-balanced (half the mass on each class). Each
/// round scans every pool feature for the stump minimising the weighted error
/// (ties to the lowest feature index, then the lowest threshold, then
/// polarity +1). alpha = 0.5 * ln((1 - e) / e) with e clamped to >= 1e-10.
/// Training stops early on perfect separation or when no stump beats 0.5.
///
/// An empty `pool` means enumerate_features(window side).
BoostResult train_adaboost(std::span<const GrayImage> windows,
                           std::span<const SampleLabel> labels, int rounds,
                           std::span<const HaarFeature> pool = {});

/// Ensemble score sum(alpha_t * h_t) with h_t in {0, 1}.
double ensemble_score(std::span<const WeakClassifier> learners, const IntegralImage& ii);

struct CascadeStage {
  std::vector<WeakClassifier> learners;
  double threshold = 0.0;

  double score(const IntegralImage& ii) const { return ensemble_score(learners, ii); }
  bool accepts(const IntegralImage& ii) const { return score(ii) >= threshold; }
  double alpha_sum() const;
};

struct Cascade {
  int window_side = 24;
  std::vector<CascadeStage> stages;

  /// Short-circuit evaluation: index of the first stage that rejects, if any.
  std::optional<std::size_t> rejecting_stage(const IntegralImage& window) const;
  bool accepts(const IntegralImage& window) const { return !rejecting_stage(window); }
  /// Sum of per-stage normalised margins, evaluated over every stage.
  double score(const IntegralImage& window) const;
};

struct CascadeOptions {
  std::vector<int> stage_sizes{10, 25};
  /// Stage threshold = threshold_ratio * sum(alpha).
  double threshold_ratio = 0.5;
};

/// Trains stages in order. Every stage sees all faces plus the non-faces the
/// earlier stages still accept; training stops once no non-face survives.
Cascade train_cascade(std::span<const GrayImage> windows,
                      std::span<const SampleLabel> labels,
                      const CascadeOptions& options = {},
                      std::span<const HaarFeature> pool = {});

struct Detection {
  Rect box;
  double score = 0.0;
};

std::vector<Detection> detect_faces(const GrayImage& img, const Cascade& cascade,
                                    double scale_step = 1.25, int shift = 2);

std::string cascade_to_json(const Cascade& cascade);
Cascade cascade_from_json(std::string_view text);
void save_cascade(const std::filesystem::path& path, const Cascade& cascade);
Cascade load_cascade(const std::filesystem::path& path);

} // namespace ballotgate
