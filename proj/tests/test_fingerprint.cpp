#include "doctest.h"

#include "ballotgate/error.hpp"
#include "ballotgate/fingerprint.hpp"
#include "ballotgate/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

using namespace ballotgate;

namespace {

BinaryImage draw(int w, int h, const std::vector<std::pair<int, int>>& pixels) {
  BinaryImage img(w, h);
  for (auto [x, y] : pixels) img.set(x, y, true);
  return img;
}

// Oracle: walk the eight neighbours as explicit coordinates and count changes.
int brute_cn(const BinaryImage& img, int x, int y) {
  const int ring[9][2] = {{0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1},
                          {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}};
  int changes = 0;
  for (int i = 0; i < 8; ++i) {
    bool a = img.ridge(x + ring[i][0], y + ring[i][1]);
    bool b = img.ridge(x + ring[i + 1][0], y + ring[i + 1][1]);
    if (a != b) ++changes;
  }
  return changes / 2;
}

int components(const BinaryImage& img) {
  std::vector<int> seen(img.data.size(), 0);
  int count = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.ridge(x, y) || seen[static_cast<std::size_t>(y) * img.width + x]) continue;
      ++count;
      std::vector<std::pair<int, int>> stack{{x, y}};
      seen[static_cast<std::size_t>(y) * img.width + x] = 1;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = cx + dx, ny = cy + dy;
            if (!img.ridge(nx, ny) || seen[static_cast<std::size_t>(ny) * img.width + nx]) continue;
            seen[static_cast<std::size_t>(ny) * img.width + nx] = 1;
            stack.push_back({nx, ny});
          }
      }
    }
  }
  return count;
}

bool has_2x2(const BinaryImage& img) {
  for (int y = 0; y + 1 < img.height; ++y)
    for (int x = 0; x + 1 < img.width; ++x)
      if (img.ridge(x, y) && img.ridge(x + 1, y) && img.ridge(x, y + 1) && img.ridge(x + 1, y + 1))
        return true;
  return false;
}

FingerprintTemplate random_template(std::mt19937& rng, int n) {
  std::uniform_real_distribution<double> pos(10, 150), ang(0, 360);
  FingerprintTemplate t{160, 160, {}};
  for (int i = 0; i < n; ++i) {
    auto kind = static_cast<MinutiaKind>(rng() % 3);
    double a = ang(rng);
    if (kind == MinutiaKind::short_ridge) a = std::fmod(a, 180.0);
    t.minutiae.push_back(Minutia{std::round(pos(rng)), std::round(pos(rng)), a, kind});
  }
  return t;
}

FingerprintTemplate rotated(const FingerprintTemplate& t, double deg) {
  const double r = deg * std::numbers::pi / 180.0, c = std::cos(r), s = std::sin(r);
  const double cx = t.width / 2.0, cy = t.height / 2.0;
  FingerprintTemplate out = t;
  for (auto& m : out.minutiae) {
    double x = m.x - cx, y = m.y - cy;
    m.x = c * x - s * y + cx;
    m.y = s * x + c * y + cy;
    double period = m.kind == MinutiaKind::short_ridge ? 180.0 : 360.0;
    m.angle = std::fmod(m.angle + deg + period, period);
  }
  return out;
}

} // namespace

TEST_CASE("binarize") {
  auto uniform = binarize(GrayImage(64, 64, 140.0));
  CHECK(uniform.ridge_count() == 0);

  GrayImage stripes(64, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) stripes.at(x, y) = (x % 2 == 0) ? 0.0 : 255.0;
  auto b = binarize(stripes);
  GrayImage inverted(64, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) inverted.at(x, y) = 255.0 - stripes.at(x, y);
  auto bi = binarize(inverted);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(b.ridge(x, y) == (x % 2 == 0));
      CHECK(bi.ridge(x, y) != b.ridge(x, y));
    }

  // a flat block next to a textured one: only the textured block has ridges
  GrayImage half(32, 16, 200.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 16; x < 32; ++x) half.at(x, y) = (y % 4 < 2) ? 30.0 : 220.0;
  auto bh = binarize(half);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK_FALSE(bh.ridge(x, y));
  CHECK(bh.ridge(20, 0));
  CHECK_FALSE(bh.ridge(20, 2));
}

TEST_CASE("thin") {
  CHECK(thin(BinaryImage(20, 20)).ridge_count() == 0);

  SUBCASE("3-pixel bar becomes a centred line") {
    BinaryImage bar(30, 9);
    for (int y = 3; y <= 5; ++y)
      for (int x = 5; x <= 24; ++x) bar.set(x, y, true);
    auto s = thin(bar);
    CHECK_FALSE(has_2x2(s));
    int min_x = 100, max_x = -1;
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 30; ++x)
        if (s.ridge(x, y)) {
          CHECK(y == 4);
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
        }
    CHECK(std::abs(min_x - 5) <= 1);
    CHECK(std::abs(max_x - 24) <= 1);
    for (int x = min_x; x <= max_x; ++x) CHECK(s.ridge(x, 4));
  }

  SUBCASE("thin input is a fixpoint") {
    std::vector<std::pair<int, int>> px;
    for (int i = 0; i < 20; ++i) px.push_back({5 + i, 10});
    for (int i = 1; i < 8; ++i) px.push_back({15, 10 + i});  // T junction
    auto line = draw(40, 30, px);
    CHECK(thin(line) == line);
  }

  SUBCASE("synthetic prints keep their connectivity") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto bin = binarize(synth::render_fingerprint(synth::make_finger_identity(seed)));
      auto s = thin(bin);
      CHECK_FALSE(has_2x2(s));
      CHECK(components(s) == components(bin));
      CHECK(thin(s) == s);
      for (std::size_t i = 0; i < s.data.size(); ++i)
        if (s.data[i]) CHECK(bin.data[i]);
    }
  }
}

TEST_CASE("crossing numbers match the neighbour-transition oracle") {
  for (std::uint64_t seed = 100; seed < 150; ++seed) {
    auto skel = thin(binarize(synth::render_fingerprint(synth::make_finger_identity(seed))));
    auto minutiae = extract_minutiae(skel);
    std::set<std::pair<int, int>> endings, bifurcations;
    for (const auto& m : minutiae) {
      auto at = std::make_pair(static_cast<int>(m.x), static_cast<int>(m.y));
      int oracle = brute_cn(skel, at.first, at.second);
      if (m.kind == MinutiaKind::ending) CHECK(oracle == 1);
      if (m.kind == MinutiaKind::bifurcation) CHECK(oracle == 3);
      (m.kind == MinutiaKind::ending ? endings : bifurcations).insert(at);
    }
    for (int y = 0; y < skel.height; ++y) {
      for (int x = 0; x < skel.width; ++x) {
        if (!skel.ridge(x, y)) continue;
        int oracle = brute_cn(skel, x, y);
        REQUIRE(crossing_number(skel, x, y) == oracle);
        bool interior = x >= 5 && y >= 5 && x < skel.width - 5 && y < skel.height - 5;
        // interior endings are reported unless they close a short ridge
        if (oracle == 1 && interior && !endings.count({x, y})) {
          bool short_ridge = false;
          for (const auto& m : minutiae)
            if (m.kind == MinutiaKind::short_ridge && std::abs(m.x - x) <= 8 &&
                std::abs(m.y - y) <= 8)
              short_ridge = true;
          CHECK(short_ridge);
        }
      }
    }
  }
}

TEST_CASE("minutiae on constructed skeletons") {
  CHECK(extract_minutiae(BinaryImage(40, 40)).empty());

  SUBCASE("straight 30-pixel line") {
    std::vector<std::pair<int, int>> px;
    for (int x = 10; x < 40; ++x) px.push_back({x, 20});
    auto m = extract_minutiae(draw(50, 40, px));
    REQUIRE(m.size() == 2);
    CHECK(m[0].kind == MinutiaKind::ending);
    CHECK(m[1].kind == MinutiaKind::ending);
    CHECK(m[0].x == 10);
    CHECK(m[1].x == 39);
    CHECK(m[0].angle == 0.0);    // the ridge runs to the right of its left end
    CHECK(m[1].angle == 180.0);
  }

  SUBCASE("Y shape") {
    std::vector<std::pair<int, int>> px;
    for (int y = 20; y <= 35; ++y) px.push_back({20, y});  // stem, junction at (20, 20)
    for (int i = 1; i <= 10; ++i) {
      px.push_back({20 - i, 20 - i});
      px.push_back({20 + i, 20 - i});
    }
    auto m = extract_minutiae(draw(45, 45, px));
    int endings = 0, bifurcations = 0;
    for (const auto& mm : m) {
      if (mm.kind == MinutiaKind::ending) ++endings;
      if (mm.kind == MinutiaKind::bifurcation) {
        ++bifurcations;
        CHECK(mm.x == 20);
        CHECK(mm.y == 20);
        CHECK(mm.angle == 90.0);  // the stem points down (+y)
      }
    }
    CHECK(endings == 3);
    CHECK(bifurcations == 1);
  }

  SUBCASE("isolated 6-pixel segment is a short ridge") {
    std::vector<std::pair<int, int>> px;
    for (int x = 15; x < 21; ++x) px.push_back({x, 15});
    auto m = extract_minutiae(draw(40, 30, px));
    REQUIRE(m.size() == 1);
    CHECK(m[0].kind == MinutiaKind::short_ridge);
    CHECK(m[0].x == 18);
    CHECK(m[0].y == 15);
    CHECK(m[0].angle == 0.0);

    // at the minimum length it is an ordinary ridge again
    px.push_back({21, 15});
    px.push_back({22, 15});
    auto m8 = extract_minutiae(draw(40, 30, px));
    CHECK(m8.size() == 2);
  }

  SUBCASE("border minutiae are dropped") {
    std::vector<std::pair<int, int>> px;
    for (int x = 2; x < 30; ++x) px.push_back({x, 20});
    auto m = extract_minutiae(draw(40, 40, px));
    REQUIRE(m.size() == 1);
    CHECK(m[0].x == 29);
  }

  SUBCASE("thick input is refused") {
    auto blob = draw(20, 20, {{5, 5}, {6, 5}, {5, 6}, {6, 6}});
    try {
      extract_minutiae(blob);
      FAIL("expected not_thinned");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::not_thinned);
    }
  }
}

TEST_CASE("match_templates") {
  std::mt19937 rng(4);
  auto t = random_template(rng, 20);

  auto self = match_templates(t, t);
  CHECK(self.similarity == 1.0);
  CHECK(self.matched_pairs == 20);
  CHECK(self.dx == 0.0);
  CHECK(self.dy == 0.0);
  CHECK(self.dtheta == 0.0);

  auto rot = match_templates(t, rotated(t, 10.0));
  CHECK(rot.similarity >= 0.90);
  CHECK(rot.similarity == 1.0);
  CHECK(rot.dtheta == doctest::Approx(10.0));

  FingerprintTemplate far = t;
  for (auto& m : far.minutiae) m.x += 1000;
  far.minutiae.resize(10);
  FingerprintTemplate near_half = t;
  near_half.minutiae.resize(10);
  CHECK(match_templates(near_half, FingerprintTemplate{160, 160, {}}).similarity == 0.0);
  CHECK(match_templates(FingerprintTemplate{}, FingerprintTemplate{}).similarity == 0.0);
  // all kinds differ -> no reference pair at all
  FingerprintTemplate ends{160, 160, {{20, 20, 0, MinutiaKind::ending}}};
  FingerprintTemplate bifs{160, 160, {{20, 20, 0, MinutiaKind::bifurcation}}};
  CHECK(match_templates(ends, bifs).similarity == 0.0);

  // disjoint point sets: two far-apart rigid clusters only align one at a time
  FingerprintTemplate left{200, 200, {}}, right{200, 200, {}};
  for (int i = 0; i < 4; ++i) {
    left.minutiae.push_back({20.0 + 30 * i, 20.0, 0.0, MinutiaKind::ending});
    right.minutiae.push_back({20.0 + 30 * i, 180.0, 90.0, MinutiaKind::bifurcation});
  }
  CHECK(match_templates(left, right).similarity == 0.0);
}

TEST_CASE("match_templates properties") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    auto a = random_template(rng, 5 + trial % 12);
    auto b = random_template(rng, 3 + trial % 9);
    // share some structure so the scores are not all zero
    for (std::size_t i = 0; i < std::min<std::size_t>(3, a.minutiae.size()); ++i) {
      auto m = a.minutiae[i];
      m.x += 2;
      m.y -= 1;
      b.minutiae.push_back(m);
    }
    auto ab = match_templates(a, b);
    auto ba = match_templates(b, a);
    CHECK(ab.similarity == ba.similarity);
    CHECK(ab.matched_pairs == ba.matched_pairs);
    CHECK(ab.similarity >= 0.0);
    CHECK(ab.similarity <= 1.0);
    CHECK(ab.similarity ==
          doctest::Approx(2.0 * ab.matched_pairs / (a.minutiae.size() + b.minutiae.size())));

    std::set<std::size_t> ia, ib;
    for (auto [i, j] : ab.pairs) {
      CHECK(ia.insert(i).second);
      CHECK(ib.insert(j).second);
      CHECK(a.minutiae[i].kind == b.minutiae[j].kind);
    }
    CHECK(static_cast<int>(ab.pairs.size()) == ab.matched_pairs);
    if (ab.similarity == 1.0) CHECK(a.minutiae.size() == b.minutiae.size());

    // translating one side never changes the score
    FingerprintTemplate moved = b;
    for (auto& m : moved.minutiae) {
      m.x += 37;
      m.y -= 23;
    }
    CHECK(match_templates(a, moved).similarity == doctest::Approx(ab.similarity));
  }
}

TEST_CASE("20% of minutiae moved beyond tolerance scores about 0.8") {
  std::mt19937 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    // well separated grid so every unmoved minutia has one obvious partner
    FingerprintTemplate t{400, 400, {}};
    for (int i = 0; i < 20; ++i) {
      t.minutiae.push_back(Minutia{30.0 + 35 * (i % 5), 30.0 + 35 * (i / 5),
                                   std::fmod(37.0 * i + trial, 360.0),
                                   i % 2 ? MinutiaKind::ending : MinutiaKind::bifurcation});
    }
    auto p = t;
    std::vector<int> idx(20);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k = 0; k < 4; ++k) p.minutiae[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])].x += 250;
    auto r = match_templates(t, p);
    CHECK(r.matched_pairs == 16);
    CHECK(r.similarity == doctest::Approx(0.8));
  }
}

TEST_CASE("verify_fingerprint on synthetic scans") {
  auto id = synth::make_finger_identity(21);
  auto img = synth::render_fingerprint(id);
  auto enrolled = make_fingerprint_template(img);
  REQUIRE(enrolled.minutiae.size() >= 5);
  for (std::size_t i = 1; i < enrolled.minutiae.size(); ++i) {
    const auto& a = enrolled.minutiae[i - 1];
    const auto& b = enrolled.minutiae[i];
    CHECK((a.y < b.y || (a.y == b.y && a.x <= b.x)));
  }

  auto same = verify_fingerprint(img, enrolled);
  CHECK(same.match.similarity == 1.0);
  CHECK(same.accepted);

  auto blank = verify_fingerprint(GrayImage(160, 160, 255.0), enrolled);
  CHECK(blank.match.similarity == 0.0);
  CHECK_FALSE(blank.accepted);

  auto shifted = verify_fingerprint(
      synth::render_fingerprint(id, 160, 160, synth::ScanVariation{2, -3, 4.0, 5}), enrolled);
  CHECK(shifted.accepted);
  CHECK(shifted.match.dx == doctest::Approx(-2.0).epsilon(0.5));

  auto other = verify_fingerprint(synth::render_fingerprint(synth::make_finger_identity(22)), enrolled);
  CHECK_FALSE(other.accepted);
}

TEST_CASE("fingerprint template JSON") {
  std::mt19937 rng(8);
  auto t = random_template(rng, 7);
  t.minutiae[0].angle = 0.1 + 0.2;  // needs all 17 digits
  auto back = fingerprint_from_json(fingerprint_to_json(t));
  CHECK(back == t);
  CHECK_THROWS_AS(fingerprint_from_json("{\"version\":9}"), Error);
  CHECK_THROWS_AS(fingerprint_from_json("[1,2"), Error);
  CHECK_THROWS_AS(fingerprint_from_json(
                      R"({"version":1,"width":1,"height":1,"minutiae":[{"x":0,"y":0,"angle":0,"kind":"loop"}]})"),
                  Error);
}
