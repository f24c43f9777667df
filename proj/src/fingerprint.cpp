#include "ballotgate/fingerprint.hpp"

#include "ballotgate/error.hpp"
#include "json_format.hpp"
#include "template_json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <tuple>

namespace ballotgate {

namespace {

// Zhang-Suen ring order P2..P9: N, NE, E, SE, S, SW, W, NW.
constexpr std::array<int, 8> ring_dx{0, 1, 1, 1, 0, -1, -1, -1};
constexpr std::array<int, 8> ring_dy{-1, -1, 0, 1, 1, 1, 0, -1};

std::array<int, 8> ring(const BinaryImage& img, int x, int y) {
  std::array<int, 8> v{};
  for (int i = 0; i < 8; ++i) v[i] = img.ridge(x + ring_dx[i], y + ring_dy[i]) ? 1 : 0;
  return v;
}

int transitions01(const std::array<int, 8>& v) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (v[i] == 0 && v[(i + 1) % 8] == 1) ? 1 : 0;
  return a;
}

bool has_block(const BinaryImage& img, int x, int y) {
  return img.ridge(x, y) && img.ridge(x + 1, y) && img.ridge(x, y + 1) && img.ridge(x + 1, y + 1);
}

// Removing the pixel keeps its ridge neighbours 8-connected and it is not an
// end of a line.
bool simple_point(const BinaryImage& img, int x, int y) {
  auto v = ring(img, x, y);
  int count = 0;
  for (int b : v) count += b;
  if (count < 2) return false;
  std::array<int, 8> label{};
  int components = 0;
  for (int s = 0; s < 8; ++s) {
    if (v[s] == 0 || label[s] != 0) continue;
    ++components;
    std::array<int, 8> stack{};
    int top = 0;
    stack[top++] = s;
    label[s] = components;
    while (top > 0) {
      int c = stack[--top];
      for (int o = 0; o < 8; ++o) {
        if (v[o] == 0 || label[o] != 0) continue;
        if (std::abs(ring_dx[c] - ring_dx[o]) <= 1 && std::abs(ring_dy[c] - ring_dy[o]) <= 1) {
          label[o] = components;
          stack[top++] = o;
        }
      }
    }
  }
  return components == 1;
}

double wrap360(double a) {
  a = std::fmod(a, 360.0);
  if (a < 0) a += 360.0;
  return a >= 360.0 ? 0.0 : a;
}

double direction_deg(double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return 0.0;
  return wrap360(std::atan2(dy, dx) * 180.0 / std::numbers::pi);
}

double angle_diff(double a, double b, double period) {
  double d = std::fmod(std::abs(a - b), period);
  return std::min(d, period - d);
}

// Signed rotation in (-period/2, period/2].
double signed_delta(double from, double to, double period) {
  double d = std::fmod(to - from, period);
  if (d <= -period / 2) d += period;
  if (d > period / 2) d -= period;
  return d;
}

double period_of(MinutiaKind k) { return k == MinutiaKind::short_ridge ? 180.0 : 360.0; }

struct Px {
  int x, y;
  friend bool operator==(const Px&, const Px&) = default;
};

class Tracer {
public:
  Tracer(const BinaryImage& skel, const std::vector<int>& cn) : skel_(skel), cn_(cn) {}

  int cn(Px p) const { return cn_[static_cast<std::size_t>(p.y) * skel_.width + p.x]; }

  // Walks the ridge from `start` through `first`, away from every pixel in
  // `blocked`, until `max_pixels` are on the path or a non-line pixel is hit.
  std::vector<Px> walk(Px start, Px first, std::vector<Px> blocked, std::size_t max_pixels) const {
    std::vector<Px> path{start, first};
    blocked.push_back(start);
    blocked.push_back(first);
    Px cur = first;
    while (path.size() < max_pixels && cn(cur) == 2) {
      auto next = step(cur, blocked);
      if (!next) break;
      path.push_back(*next);
      blocked.push_back(*next);
      cur = *next;
    }
    return path;
  }

  // Unvisited ridge neighbour, preferring 4-neighbours, then ring order.
  std::optional<Px> step(Px cur, const std::vector<Px>& blocked) const {
    std::optional<Px> diagonal;
    for (int i = 0; i < 8; ++i) {
      Px n{cur.x + ring_dx[i], cur.y + ring_dy[i]};
      if (!skel_.ridge(n.x, n.y)) continue;
      if (std::find(blocked.begin(), blocked.end(), n) != blocked.end()) continue;
      if (i % 2 == 0) return n;
      if (!diagonal) diagonal = n;
    }
    return diagonal;
  }

private:
  const BinaryImage& skel_;
  const std::vector<int>& cn_;
};

double path_direction(const std::vector<Px>& path) {
  return direction_deg(path.back().x - path[0].x, path.back().y - path[0].y);
}

std::vector<Px> ridge_neighbours(const BinaryImage& skel, Px p) {
  std::vector<Px> out;
  for (int i = 0; i < 8; ++i) {
    if (skel.ridge(p.x + ring_dx[i], p.y + ring_dy[i])) {
      out.push_back(Px{p.x + ring_dx[i], p.y + ring_dy[i]});
    }
  }
  return out;
}

struct Transform {
  double cos_t, sin_t, dx, dy, dtheta;
  std::pair<double, double> apply(double x, double y) const {
    return {cos_t * x - sin_t * y + dx, sin_t * x + cos_t * y + dy};
  }
};

struct Candidate {
  double dist;
  std::size_t i, j;
};

std::vector<std::pair<std::size_t, std::size_t>> greedy_pairs(const FingerprintTemplate& a,
                                                              const FingerprintTemplate& b,
                                                              const Transform& t,
                                                              const MatchOptions& opt) {
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < a.minutiae.size(); ++i) {
    const auto& ma = a.minutiae[i];
    auto [x, y] = t.apply(ma.x, ma.y);
    double theta = ma.angle + t.dtheta;
    for (std::size_t j = 0; j < b.minutiae.size(); ++j) {
      const auto& mb = b.minutiae[j];
      if (mb.kind != ma.kind) continue;
      double d = std::hypot(x - mb.x, y - mb.y);
      if (d > opt.r_tol) continue;
      if (angle_diff(theta, mb.angle, period_of(ma.kind)) > opt.theta_tol) continue;
      cands.push_back(Candidate{d, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& l, const Candidate& r) {
    return std::tie(l.dist, l.i, l.j) < std::tie(r.dist, r.i, r.j);
  });
  std::vector<bool> used_a(a.minutiae.size()), used_b(b.minutiae.size());
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& c : cands) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = true;
    pairs.emplace_back(c.i, c.j);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

MatchResult match_ordered(const FingerprintTemplate& a, const FingerprintTemplate& b,
                          const MatchOptions& opt) {
  MatchResult best;
  bool have = false;
  for (const auto& ra : a.minutiae) {
    for (const auto& rb : b.minutiae) {
      if (ra.kind != rb.kind) continue;
      double dtheta = signed_delta(ra.angle, rb.angle, period_of(ra.kind));
      double rad = dtheta * std::numbers::pi / 180.0;
      Transform t{std::cos(rad), std::sin(rad), 0.0, 0.0, dtheta};
      auto [rx, ry] = t.apply(ra.x, ra.y);
      t.dx = rb.x - rx;
      t.dy = rb.y - ry;
      auto pairs = greedy_pairs(a, b, t, opt);
      const int m = static_cast<int>(pairs.size());
      bool better = !have || m > best.matched_pairs;
      if (have && m == best.matched_pairs) {
        double cur_rot = std::abs(dtheta), best_rot = std::abs(best.dtheta);
        if (cur_rot < best_rot) {
          better = true;
        } else if (cur_rot == best_rot &&
                   std::abs(t.dx) + std::abs(t.dy) < std::abs(best.dx) + std::abs(best.dy)) {
          better = true;
        }
      }
      if (better) {
        have = true;
        best.matched_pairs = m;
        best.dx = t.dx;
        best.dy = t.dy;
        best.dtheta = dtheta;
        best.pairs = std::move(pairs);
      }
    }
  }
  const std::size_t total = a.minutiae.size() + b.minutiae.size();
  best.similarity = total == 0 ? 0.0 : 2.0 * best.matched_pairs / static_cast<double>(total);
  return best;
}

bool template_less(const FingerprintTemplate& a, const FingerprintTemplate& b) {
  if (a.minutiae.size() != b.minutiae.size()) return a.minutiae.size() < b.minutiae.size();
  auto key = [](const Minutia& m) {
    return std::make_tuple(m.x, m.y, m.angle, static_cast<int>(m.kind));
  };
  for (std::size_t i = 0; i < a.minutiae.size(); ++i) {
    auto ka = key(a.minutiae[i]), kb = key(b.minutiae[i]);
    if (ka != kb) return ka < kb;
  }
  return false;
}

} // namespace

std::size_t BinaryImage::ridge_count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BinaryImage binarize(const GrayImage& img, int block) {
  if (block < 1) throw Error(Errc::invalid_config, "binarization block must be positive");
  BinaryImage out(img.width(), img.height());
  for (int by = 0; by < img.height(); by += block) {
    for (int bx = 0; bx < img.width(); bx += block) {
      const int ex = std::min(bx + block, img.width());
      const int ey = std::min(by + block, img.height());
      double sum = 0.0, sq = 0.0;
      for (int y = by; y < ey; ++y) {
        for (int x = bx; x < ex; ++x) {
          sum += img.at(x, y);
          sq += img.at(x, y) * img.at(x, y);
        }
      }
      const double n = static_cast<double>((ex - bx) * (ey - by));
      const double mean = sum / n;
      const double var = std::max(0.0, sq / n - mean * mean);
      if (var < 5.0) continue;
      for (int y = by; y < ey; ++y) {
        for (int x = bx; x < ex; ++x) out.set(x, y, img.at(x, y) < mean);
      }
    }
  }
  return out;
}

BinaryImage thin(const BinaryImage& input) {
  BinaryImage img = input;
  std::vector<std::pair<int, int>> marked;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      marked.clear();
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          if (!img.ridge(x, y)) continue;
          auto v = ring(img, x, y);
          int b = 0;
          for (int n : v) b += n;
          if (b < 2 || b > 6 || transitions01(v) != 1) continue;
          const int p2 = v[0], p4 = v[2], p6 = v[4], p8 = v[6];
          if (pass == 0 && (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0)) continue;
          if (pass == 1 && (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0)) continue;
          marked.emplace_back(x, y);
        }
      }
      for (auto [x, y] : marked) img.set(x, y, false);
      changed = changed || !marked.empty();
    }
  }

  // Zhang-Suen can leave 2x2 squares on staircase diagonals.
  changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y + 1 < img.height; ++y) {
      for (int x = 0; x + 1 < img.width; ++x) {
        if (!has_block(img, x, y)) continue;
        const std::array<std::pair<int, int>, 4> corners{{{x, y}, {x + 1, y}, {x, y + 1}, {x + 1, y + 1}}};
        for (auto [cx, cy] : corners) {
          if (simple_point(img, cx, cy)) {
            img.set(cx, cy, false);
            changed = true;
            break;
          }
        }
      }
    }
  }

  // Peeling eats up to two pixels off a ridge tip; walk each tip back out along
  // its own direction while the original ridge continues.
  constexpr int max_regrow = 3;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.ridge(x, y)) continue;
      auto nbrs = ridge_neighbours(img, Px{x, y});
      if (nbrs.size() != 1) continue;
      const int dx = x - nbrs[0].x, dy = y - nbrs[0].y;
      Px cur{x, y};
      for (int step = 0; step < max_regrow; ++step) {
        Px q{cur.x + dx, cur.y + dy};
        if (!input.ridge(q.x, q.y) || img.ridge(q.x, q.y)) break;
        auto around = ridge_neighbours(img, q);
        if (around.size() != 1 || !(around[0] == cur)) break;
        img.set(q.x, q.y, true);
        cur = q;
      }
    }
  }
  return img;
}

int crossing_number(const BinaryImage& skel, int x, int y) {
  auto v = ring(skel, x, y);
  int s = 0;
  for (int i = 0; i < 8; ++i) s += std::abs(v[i] - v[(i + 1) % 8]);
  return s / 2;
}

const char* minutia_kind_name(MinutiaKind k) {
  switch (k) {
    case MinutiaKind::ending: return "ending";
    case MinutiaKind::bifurcation: return "bifurcation";
    case MinutiaKind::short_ridge: return "short_ridge";
  }
  return "ending";
}

MinutiaKind minutia_kind_from_name(std::string_view name) {
  if (name == "ending") return MinutiaKind::ending;
  if (name == "bifurcation") return MinutiaKind::bifurcation;
  if (name == "short_ridge") return MinutiaKind::short_ridge;
  throw Error(Errc::malformed_input, "unknown minutia kind '" + std::string(name) + "'");
}

std::vector<Minutia> extract_minutiae(const BinaryImage& skel, const MinutiaeOptions& opt) {
  const int w = skel.width, h = skel.height;
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      if (has_block(skel, x, y)) {
        throw Error(Errc::not_thinned, "ridge map is not a skeleton: 2x2 block at (" +
                                           std::to_string(x) + ", " + std::to_string(y) + ")");
      }
    }
  }

  std::vector<int> cn(static_cast<std::size_t>(w) * h, 0);
  std::vector<Px> endings, junctions;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!skel.ridge(x, y)) continue;
      int c = crossing_number(skel, x, y);
      cn[static_cast<std::size_t>(y) * w + x] = c;
      if (c == 1) endings.push_back(Px{x, y});
      if (c == 3) junctions.push_back(Px{x, y});
    }
  }
  Tracer tracer(skel, cn);
  std::vector<Minutia> out;

  std::vector<Px> consumed;
  for (const Px& e : endings) {
    if (std::find(consumed.begin(), consumed.end(), e) != consumed.end()) continue;
    const Px first = ridge_neighbours(skel, e).front();
    auto ridge = tracer.walk(e, first, {}, static_cast<std::size_t>(std::max(opt.min_ridge_len, 2)));
    const Px last = ridge.back();
    if (ridge.size() < static_cast<std::size_t>(opt.min_ridge_len) && tracer.cn(last) == 1) {
      consumed.push_back(last);
      const Px mid = ridge[ridge.size() / 2];
      double a = direction_deg(last.x - e.x, last.y - e.y);
      out.push_back(Minutia{static_cast<double>(mid.x), static_cast<double>(mid.y),
                            std::fmod(a, 180.0), MinutiaKind::short_ridge});
      continue;
    }
    auto dir = tracer.walk(e, first, {}, static_cast<std::size_t>(opt.trace_len) + 1);
    out.push_back(Minutia{static_cast<double>(e.x), static_cast<double>(e.y),
                          path_direction(dir),
                          MinutiaKind::ending});
  }

  std::vector<Px> kept;
  for (const Px& j : junctions) {
    bool near = std::any_of(kept.begin(), kept.end(), [&](const Px& k) {
      return std::abs(k.x - j.x) <= 1 && std::abs(k.y - j.y) <= 1;
    });
    if (near) continue;
    kept.push_back(j);

    // Each run of ridge neighbours around the ring is one branch; it is
    // entered through its 4-neighbour when it has one.
    auto v = ring(skel, j.x, j.y);
    std::vector<std::vector<Px>> runs;
    std::vector<Px> starts;
    for (int i = 0; i < 8; ++i) {
      if (v[i] == 0 || v[(i + 7) % 8] == 1) continue;  // not the first of its run
      std::vector<Px> members;
      int pick = -1;
      for (int k = i; k < i + 8 && v[k % 8] == 1; ++k) {
        members.push_back(Px{j.x + ring_dx[k % 8], j.y + ring_dy[k % 8]});
        if (pick < 0 && k % 2 == 0) pick = k % 8;
      }
      if (pick < 0) pick = i;
      runs.push_back(std::move(members));
      starts.push_back(Px{j.x + ring_dx[pick], j.y + ring_dy[pick]});
    }
    std::vector<double> dirs;
    for (std::size_t b = 0; b < starts.size(); ++b) {
      std::vector<Px> blocked;
      for (std::size_t o = 0; o < runs.size(); ++o) {
        if (o != b) blocked.insert(blocked.end(), runs[o].begin(), runs[o].end());
      }
      auto path = tracer.walk(j, starts[b], blocked, static_cast<std::size_t>(opt.trace_len) + 1);
      dirs.push_back(path_direction(path));
    }
    double angle = dirs.empty() ? 0.0 : dirs.front();
    if (dirs.size() == 3) {
      // the odd branch is the one left over from the most similar pair
      double best = 1e9;
      for (int p = 0; p < 3; ++p) {
        int q1 = (p + 1) % 3, q2 = (p + 2) % 3;
        double d = angle_diff(dirs[q1], dirs[q2], 360.0);
        if (d < best) {
          best = d;
          angle = dirs[p];
        }
      }
    }
    out.push_back(Minutia{static_cast<double>(j.x), static_cast<double>(j.y), angle,
                          MinutiaKind::bifurcation});
  }

  std::erase_if(out, [&](const Minutia& m) {
    return m.x < opt.border || m.y < opt.border || m.x >= w - opt.border ||
           m.y >= h - opt.border;
  });
  std::sort(out.begin(), out.end(), [](const Minutia& a, const Minutia& b) {
    return std::make_tuple(a.y, a.x, static_cast<int>(a.kind)) <
           std::make_tuple(b.y, b.x, static_cast<int>(b.kind));
  });
  return out;
}

FingerprintTemplate make_fingerprint_template(const GrayImage& img, int block,
                                              const MinutiaeOptions& opt) {
  FingerprintTemplate t;
  t.width = img.width();
  t.height = img.height();
  t.minutiae = extract_minutiae(thin(binarize(img, block)), opt);
  return t;
}

MatchResult match_templates(const FingerprintTemplate& a, const FingerprintTemplate& b,
                            const MatchOptions& opt) {
  // Always search in a canonical argument order so the score is symmetric to
  // the last bit; the reported transform is inverted when the order flips.
  if (!template_less(b, a)) return match_ordered(a, b, opt);
  MatchResult r = match_ordered(b, a, opt);
  for (auto& p : r.pairs) std::swap(p.first, p.second);
  std::sort(r.pairs.begin(), r.pairs.end());
  const double rad = -r.dtheta * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double dx = -(c * r.dx - s * r.dy);
  const double dy = -(s * r.dx + c * r.dy);
  r.dx = dx;
  r.dy = dy;
  r.dtheta = r.dtheta == 0.0 ? 0.0 : -r.dtheta;
  return r;
}

FingerprintVerification verify_fingerprint(const GrayImage& probe,
                                           const FingerprintTemplate& enrolled, double threshold,
                                           const MatchOptions& opt) {
  FingerprintVerification v;
  v.match = match_templates(make_fingerprint_template(probe), enrolled, opt);
  v.accepted = v.match.similarity >= threshold;
  return v;
}

namespace detail {

ojson fingerprint_to_ojson(const FingerprintTemplate& t) {
  ojson doc;
  doc["version"] = 1;
  doc["width"] = t.width;
  doc["height"] = t.height;
  doc["minutiae"] = ojson::array();
  for (const auto& m : t.minutiae) {
    ojson e;
    e["x"] = m.x;
    e["y"] = m.y;
    e["angle"] = m.angle;
    e["kind"] = minutia_kind_name(m.kind);
    doc["minutiae"].push_back(std::move(e));
  }
  return doc;
}

FingerprintTemplate fingerprint_from_ojson(const nlohmann::json& doc) {
  if (doc.at("version").get<int>() != 1) {
    throw Error(Errc::version_mismatch, "unsupported fingerprint template version");
  }
  FingerprintTemplate t;
  t.width = doc.at("width").get<int>();
  t.height = doc.at("height").get<int>();
  for (const auto& e : doc.at("minutiae")) {
    t.minutiae.push_back(Minutia{e.at("x").get<double>(), e.at("y").get<double>(),
                                 e.at("angle").get<double>(),
                                 minutia_kind_from_name(e.at("kind").get<std::string>())});
  }
  return t;
}

} // namespace detail

std::string fingerprint_to_json(const FingerprintTemplate& t) {
  return detail::dump17(detail::fingerprint_to_ojson(t));
}

FingerprintTemplate fingerprint_from_json(std::string_view text) {
  try {
    return detail::fingerprint_from_ojson(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_input, std::string("fingerprint template JSON: ") + e.what());
  }
}

} // namespace ballotgate
