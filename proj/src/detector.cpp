#include "ballotgate/detector.hpp"

#include "ballotgate/error.hpp"
#include "json_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ballotgate {

namespace {

constexpr std::array<HaarKind, 5> all_kinds{HaarKind::two_rect_h, HaarKind::two_rect_v,
                                            HaarKind::three_rect_h, HaarKind::three_rect_v,
                                            HaarKind::four_rect};

// Unit cells along x and y.
std::pair<int, int> cells(HaarKind kind) {
  switch (kind) {
  case HaarKind::two_rect_h: return {2, 1};
  case HaarKind::two_rect_v: return {1, 2};
  case HaarKind::three_rect_h: return {3, 1};
  case HaarKind::three_rect_v: return {1, 3};
  case HaarKind::four_rect: return {2, 2};
  }
  return {1, 1};
}

double eval_unchecked(const IntegralImage& ii, const HaarFeature& f) {
  const Rect& b = f.base;
  auto cell = [&](int cx, int cy) {
    return ii.rect_sum_unchecked(Rect{b.x + cx * b.w, b.y + cy * b.h, b.w, b.h});
  };
  switch (f.kind) {
  case HaarKind::two_rect_h: return cell(0, 0) - cell(1, 0);
  case HaarKind::two_rect_v: return cell(0, 0) - cell(0, 1);
  case HaarKind::three_rect_h: return cell(0, 0) + cell(2, 0) - 2.0 * cell(1, 0);
  case HaarKind::three_rect_v: return cell(0, 0) + cell(0, 2) - 2.0 * cell(0, 1);
  case HaarKind::four_rect: return cell(0, 0) + cell(1, 1) - cell(1, 0) - cell(0, 1);
  }
  return 0.0;
}

struct Stump {
  double error = 1.0;
  double threshold = 0.0;
  int polarity = 1;
};

// Optimal decision stump over one feature. `order` sorts the samples by
// (value, index).
Stump best_stump(std::span<const double> values, std::span<const std::uint32_t> order,
                 std::span<const SampleLabel> labels, std::span<const double> weights,
                 double total_face, double total_nonface) {
  const std::size_t n = values.size();
  Stump best;
  double face_below = 0.0;
  double nonface_below = 0.0;
  auto consider = [&](double threshold) {
    double err_pos = nonface_below + (total_face - face_below);
    double err_neg = face_below + (total_nonface - nonface_below);
    if (err_pos < best.error) best = {err_pos, threshold, 1};
    if (err_neg < best.error) best = {err_neg, threshold, -1};
  };

  consider(values[order.front()] - 1.0);
  for (std::size_t p = 1; p <= n; ++p) {
    std::size_t i = order[p - 1];
    (labels[i] == SampleLabel::face ? face_below : nonface_below) += weights[i];
    if (p == n) {
      consider(values[i] + 1.0);
    } else if (values[order[p]] > values[i]) {
      consider(0.5 * (values[i] + values[order[p]]));
    }
  }
  return best;
}

// Feature responses per (feature, sample) with each feature's sort order.
// Responses do not depend on the weights, so large enough pools are computed
// once; beyond the cache budget they are recomputed every round.
class ResponseTable {
public:
  static constexpr std::size_t cache_budget = std::size_t{1} << 24;

  ResponseTable(std::span<const IntegralImage> tables, std::span<const HaarFeature> pool)
      : tables_(tables), pool_(pool), n_(tables.size()),
        cached_(pool.size() * tables.size() <= cache_budget) {
    if (cached_) {
      values_.resize(pool.size() * n_);
      order_.resize(pool.size() * n_);
      for (std::size_t f = 0; f < pool.size(); ++f) fill(f, &values_[f * n_], &order_[f * n_]);
    } else {
      values_.resize(n_);
      order_.resize(n_);
    }
  }

  std::pair<std::span<const double>, std::span<const std::uint32_t>> feature(std::size_t f) {
    if (cached_) {
      return {std::span<const double>(&values_[f * n_], n_),
              std::span<const std::uint32_t>(&order_[f * n_], n_)};
    }
    fill(f, values_.data(), order_.data());
    return {values_, order_};
  }

private:
  void fill(std::size_t f, double* values, std::uint32_t* order) const {
    for (std::size_t i = 0; i < n_; ++i) values[i] = eval_unchecked(tables_[i], pool_[f]);
    std::iota(order, order + n_, std::uint32_t{0});
    std::sort(order, order + n_, [&](std::uint32_t a, std::uint32_t b) {
      return values[a] < values[b] || (values[a] == values[b] && a < b);
    });
  }

  std::span<const IntegralImage> tables_;
  std::span<const HaarFeature> pool_;
  std::size_t n_;
  bool cached_;
  std::vector<double> values_;
  std::vector<std::uint32_t> order_;
};

void require_windows(std::span<const GrayImage> windows, std::span<const SampleLabel> labels) {
  if (windows.empty()) throw Error(Errc::training, "no training samples");
  if (windows.size() != labels.size()) {
    throw Error(Errc::training, "sample and label counts differ");
  }
  const int side = windows.front().width();
  for (const auto& w : windows) {
    if (w.width() != side || w.height() != side) {
      throw Error(Errc::dimension, "training windows must all be square and equally sized");
    }
  }
}

} // namespace

std::string_view haar_kind_name(HaarKind kind) {
  switch (kind) {
  case HaarKind::two_rect_h: return "two_rect_h";
  case HaarKind::two_rect_v: return "two_rect_v";
  case HaarKind::three_rect_h: return "three_rect_h";
  case HaarKind::three_rect_v: return "three_rect_v";
  case HaarKind::four_rect: return "four_rect";
  }
  return "";
}

HaarKind haar_kind_from_name(std::string_view name) {
  for (auto k : all_kinds) {
    if (haar_kind_name(k) == name) return k;
  }
  throw Error(Errc::malformed_input, "unknown Haar feature kind '" + std::string(name) + "'");
}

Rect HaarFeature::extent() const {
  auto [cx, cy] = cells(kind);
  return Rect{base.x, base.y, base.w * cx, base.h * cy};
}

std::size_t count_features(HaarKind kind, int window_side) {
  auto [cx, cy] = cells(kind);
  auto placements = [&](int cell_count) {
    std::size_t total = 0;
    for (int unit = 1; unit * cell_count <= window_side; ++unit) {
      total += static_cast<std::size_t>(window_side - unit * cell_count + 1);
    }
    return total;
  };
  return placements(cx) * placements(cy);
}

std::vector<HaarFeature> enumerate_features(int window_side) {
  if (window_side < 1) throw Error(Errc::dimension, "window side must be positive");
  std::vector<HaarFeature> out;
  std::size_t total = 0;
  for (auto k : all_kinds) total += count_features(k, window_side);
  out.reserve(total);
  for (auto kind : all_kinds) {
    auto [cx, cy] = cells(kind);
    for (int uw = 1; uw * cx <= window_side; ++uw) {
      for (int uh = 1; uh * cy <= window_side; ++uh) {
        for (int y = 0; y + uh * cy <= window_side; ++y) {
          for (int x = 0; x + uw * cx <= window_side; ++x) {
            out.push_back(HaarFeature{kind, Rect{x, y, uw, uh}});
          }
        }
      }
    }
  }
  return out;
}

double eval_feature(const IntegralImage& ii, const HaarFeature& f) {
  Rect e = f.extent();
  if (e.x < 0 || e.y < 0 || f.base.w < 1 || f.base.h < 1 || e.right() > ii.width() ||
      e.bottom() > ii.height()) {
    throw Error(Errc::bounds, std::string(haar_kind_name(f.kind)) +
                                  " feature does not fit the " + std::to_string(ii.width()) +
                                  "x" + std::to_string(ii.height()) + " window");
  }
  return eval_unchecked(ii, f);
}

bool WeakClassifier::predict(const IntegralImage& ii) const {
  return predict(eval_feature(ii, feature));
}

double ensemble_score(std::span<const WeakClassifier> learners, const IntegralImage& ii) {
  double s = 0.0;
  for (const auto& wc : learners) {
    if (wc.predict(ii)) s += wc.alpha;
  }
  return s;
}

BoostResult train_adaboost(std::span<const GrayImage> windows,
                           std::span<const SampleLabel> labels, int rounds,
                           std::span<const HaarFeature> pool) {
  require_windows(windows, labels);
  if (rounds < 1) throw Error(Errc::training, "boosting needs at least one round");
  const std::size_t n = windows.size();
  const auto faces = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), SampleLabel::face));
  if (faces == 0 || faces == n) {
    throw Error(Errc::training, "training set must contain both faces and non-faces");
  }

  std::vector<HaarFeature> owned;
  if (pool.empty()) {
    owned = enumerate_features(windows.front().width());
    pool = owned;
  }

  std::vector<IntegralImage> tables;
  tables.reserve(n);
  for (const auto& w : windows) tables.emplace_back(w);
  for (const auto& f : pool) eval_feature(tables.front(), f);  // bounds check once

  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = labels[i] == SampleLabel::face ? 0.5 / static_cast<double>(faces)
                                                : 0.5 / static_cast<double>(n - faces);
  }

  BoostResult result;
  std::vector<double> ensemble(n, 0.0);
  double alpha_total = 0.0;
  ResponseTable responses(tables, pool);

  for (int t = 0; t < rounds; ++t) {
    double total_face = 0.0;
    double total_nonface = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      (labels[i] == SampleLabel::face ? total_face : total_nonface) += weights[i];
    }

    Stump best;
    std::size_t best_index = 0;
    for (std::size_t fi = 0; fi < pool.size(); ++fi) {
      auto [values, order] = responses.feature(fi);
      Stump s = best_stump(values, order, labels, weights, total_face, total_nonface);
      if (s.error < best.error) {
        best = s;
        best_index = fi;
      }
    }
    if (best.error >= 0.5) break;

    double eps = std::max(best.error, 1e-10);
    WeakClassifier wc{pool[best_index], best.threshold, best.polarity,
                      0.5 * std::log((1.0 - eps) / eps)};

    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      bool says_face = wc.predict(eval_unchecked(tables[i], wc.feature));
      bool is_face = labels[i] == SampleLabel::face;
      weights[i] *= std::exp(says_face == is_face ? -wc.alpha : wc.alpha);
      sum += weights[i];
      if (says_face) ensemble[i] += wc.alpha;
    }
    for (auto& w : weights) w /= sum;
    alpha_total += wc.alpha;

    std::size_t wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool says_face = ensemble[i] >= 0.5 * alpha_total;
      if (says_face != (labels[i] == SampleLabel::face)) ++wrong;
    }
    double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    result.rounds.push_back(BoostRound{best_index, best.error,
                                       static_cast<double>(wrong) / static_cast<double>(n),
                                       weight_sum});
    result.learners.push_back(wc);
    if (best.error <= 0.0) {
      result.perfect_separation = true;
      break;
    }
  }
  result.final_weights = std::move(weights);
  return result;
}

double CascadeStage::alpha_sum() const {
  double s = 0.0;
  for (const auto& wc : learners) s += wc.alpha;
  return s;
}

std::optional<std::size_t> Cascade::rejecting_stage(const IntegralImage& window) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!stages[i].accepts(window)) return i;
  }
  return std::nullopt;
}

double Cascade::score(const IntegralImage& window) const {
  double s = 0.0;
  for (const auto& stage : stages) {
    double norm = stage.alpha_sum();
    s += norm > 0 ? (stage.score(window) - stage.threshold) / norm : 0.0;
  }
  return s;
}

Cascade train_cascade(std::span<const GrayImage> windows, std::span<const SampleLabel> labels,
                      const CascadeOptions& options, std::span<const HaarFeature> pool) {
  require_windows(windows, labels);
  Cascade cascade;
  cascade.window_side = windows.front().width();

  std::vector<GrayImage> active(windows.begin(), windows.end());
  std::vector<SampleLabel> active_labels(labels.begin(), labels.end());
  for (int size : options.stage_sizes) {
    BoostResult boosted = train_adaboost(active, active_labels, size, pool);
    CascadeStage stage{std::move(boosted.learners), 0.0};
    stage.threshold = options.threshold_ratio * stage.alpha_sum();
    cascade.stages.push_back(std::move(stage));

    std::vector<GrayImage> next;
    std::vector<SampleLabel> next_labels;
    bool negatives_left = false;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      if (labels[i] == SampleLabel::face) {
        next.push_back(windows[i]);
        next_labels.push_back(labels[i]);
      } else if (cascade.accepts(IntegralImage(windows[i]))) {
        next.push_back(windows[i]);
        next_labels.push_back(labels[i]);
        negatives_left = true;
      }
    }
    if (!negatives_left) break;
    active = std::move(next);
    active_labels = std::move(next_labels);
  }
  return cascade;
}

std::vector<Detection> detect_faces(const GrayImage& img, const Cascade& cascade,
                                    double scale_step, int shift) {
  const int base = cascade.window_side;
  std::vector<Detection> hits;
  if (img.width() < base || img.height() < base || cascade.stages.empty()) return hits;
  if (scale_step <= 1.0) throw Error(Errc::invalid_config, "scale step must exceed 1");
  shift = std::max(shift, 1);

  for (double scale = 1.0;; scale *= scale_step) {
    int side = static_cast<int>(std::lround(base * scale));
    if (side > img.width() || side > img.height()) break;
    int step = std::max(1, static_cast<int>(std::lround(shift * scale)));
    for (int y = 0; y + side <= img.height(); y += step) {
      for (int x = 0; x + side <= img.width(); x += step) {
        Rect r{x, y, side, side};
        IntegralImage ii(extract_window(img, r, base));
        if (cascade.accepts(ii)) hits.push_back(Detection{r, cascade.score(ii)});
      }
    }
  }

  auto order = [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    return a.box.w < b.box.w;
  };
  std::sort(hits.begin(), hits.end(), order);
  std::vector<Detection> kept;
  for (const auto& h : hits) {
    bool overlaps = std::any_of(kept.begin(), kept.end(),
                                [&](const Detection& k) { return iou(k.box, h.box) > 0.3; });
    if (!overlaps) kept.push_back(h);
  }
  return kept;
}

std::string cascade_to_json(const Cascade& cascade) {
  detail::ojson doc;
  doc["version"] = 1;
  doc["window_side"] = cascade.window_side;
  doc["stages"] = detail::ojson::array();
  for (const auto& stage : cascade.stages) {
    detail::ojson s;
    s["threshold"] = stage.threshold;
    s["learners"] = detail::ojson::array();
    for (const auto& wc : stage.learners) {
      detail::ojson l;
      l["kind"] = std::string(haar_kind_name(wc.feature.kind));
      l["x"] = wc.feature.base.x;
      l["y"] = wc.feature.base.y;
      l["w"] = wc.feature.base.w;
      l["h"] = wc.feature.base.h;
      l["threshold"] = wc.threshold;
      l["polarity"] = wc.polarity;
      l["alpha"] = wc.alpha;
      s["learners"].push_back(std::move(l));
    }
    doc["stages"].push_back(std::move(s));
  }
  return detail::dump17(doc);
}

Cascade cascade_from_json(std::string_view text) {
  try {
    auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<int>() != 1) {
      throw Error(Errc::version_mismatch, "unsupported cascade version");
    }
    Cascade c;
    c.window_side = doc.at("window_side").get<int>();
    for (const auto& s : doc.at("stages")) {
      CascadeStage stage;
      stage.threshold = s.at("threshold").get<double>();
      for (const auto& l : s.at("learners")) {
        WeakClassifier wc;
        wc.feature.kind = haar_kind_from_name(l.at("kind").get<std::string>());
        wc.feature.base = Rect{l.at("x").get<int>(), l.at("y").get<int>(),
                               l.at("w").get<int>(), l.at("h").get<int>()};
        Rect e = wc.feature.extent();
        if (e.x < 0 || e.y < 0 || e.right() > c.window_side || e.bottom() > c.window_side) {
          throw Error(Errc::bounds, "cascade feature outside its window");
        }
        wc.threshold = l.at("threshold").get<double>();
        wc.polarity = l.at("polarity").get<int>() >= 0 ? 1 : -1;
        wc.alpha = l.at("alpha").get<double>();
        stage.learners.push_back(wc);
      }
      c.stages.push_back(std::move(stage));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_input, std::string("cascade JSON: ") + e.what());
  }
}

void save_cascade(const std::filesystem::path& path, const Cascade& cascade) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << cascade_to_json(cascade) << '\n';
}

Cascade load_cascade(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return cascade_from_json(ss.str());
}

} // namespace ballotgate
