#include "ballotgate/synthetic.hpp"

#include "ballotgate/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

namespace ballotgate::synth {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Face intensity at normalised frame coordinates (u right, v down, [0,1]).
double face_intensity(const FaceIdentity& f, double u, double v) {
  const double cx = 0.5;
  const double cy = 0.53;
  double value = f.background + 20.0 * (v - 0.5);

  double er = std::hypot((u - cx) / f.face_rx, (v - cy) / f.face_ry);
  double hr = std::hypot((u - cx) / (f.face_rx * 1.08), (v - cy + 0.03) / (f.face_ry * 1.06));
  if (hr < 1.0 && v < f.hairline + 0.08 * std::abs(u - cx) / f.face_rx) {
    value = f.hair;
  }
  if (er < 1.0) {
    double skin = f.skin - 30.0 * er * er;
    if (v < f.hairline + 0.08 * std::abs(u - cx) / f.face_rx) skin = f.hair;
    value = skin;

    for (int side : {-1, 1}) {
      double ex = cx + side * f.eye_dx;
      double eye = std::hypot((u - ex) / f.eye_rx, (v - f.eye_y) / f.eye_ry);
      if (eye < 1.0) value = f.eye_dark + 40.0 * eye * eye;

      double by = f.eye_y - f.brow_gap + side * f.brow_tilt * (u - ex);
      if (std::abs(u - ex) < f.brow_len && std::abs(v - by) < f.brow_thick) {
        value = std::min(value, f.brow_dark);
      }
    }

    double nose_top = f.eye_y + 0.04;
    double nose_bot = f.eye_y + f.nose_len;
    if (v > nose_top && v < nose_bot) {
      double t = (v - nose_top) / (nose_bot - nose_top);
      double half = f.nose_w * (0.3 + 0.7 * t);
      if (std::abs(u - cx) < half) value -= f.nose_dark * t;
    }

    double mu = (u - cx) / f.mouth_w;
    double mv = v - f.mouth_y - f.mouth_curve * mu * mu;
    if (std::abs(mu) < 1.0 && std::abs(mv) < f.mouth_h * (1.0 - 0.5 * mu * mu)) {
      value = f.mouth_dark;
    }

    if (std::hypot(u - f.mark_x, v - f.mark_y) < f.mark_r) value = f.mark_dark;
  }
  return value;
}

GrayImage finish(int w, int h, std::vector<double> px) {
  for (auto& v : px) v = std::clamp(std::floor(v + 0.5), 0.0, 255.0);
  return GrayImage(w, h, std::move(px));
}

} // namespace

FaceIdentity make_face_identity(std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  FaceIdentity f{};
  f.face_rx = uniform(rng, 0.30, 0.42);
  f.face_ry = uniform(rng, 0.38, 0.47);
  f.skin = uniform(rng, 150, 215);
  f.background = uniform(rng, 25, 95);
  f.hair = uniform(rng, 15, 110);
  f.hairline = uniform(rng, 0.16, 0.30);
  f.eye_y = uniform(rng, 0.36, 0.46);
  f.eye_dx = uniform(rng, 0.11, 0.20);
  f.eye_rx = uniform(rng, 0.04, 0.075);
  f.eye_ry = uniform(rng, 0.022, 0.045);
  f.eye_dark = uniform(rng, 10, 70);
  f.brow_gap = uniform(rng, 0.05, 0.10);
  f.brow_thick = uniform(rng, 0.010, 0.028);
  f.brow_len = uniform(rng, 0.05, 0.10);
  f.brow_tilt = uniform(rng, -0.6, 0.6);
  f.brow_dark = uniform(rng, 20, 90);
  f.nose_len = uniform(rng, 0.14, 0.26);
  f.nose_w = uniform(rng, 0.03, 0.07);
  f.nose_dark = uniform(rng, 15, 60);
  f.mouth_y = uniform(rng, 0.68, 0.80);
  f.mouth_w = uniform(rng, 0.08, 0.20);
  f.mouth_h = uniform(rng, 0.012, 0.035);
  f.mouth_dark = uniform(rng, 30, 110);
  f.mouth_curve = uniform(rng, -0.05, 0.05);
  f.mark_x = uniform(rng, 0.25, 0.75);
  f.mark_y = uniform(rng, 0.45, 0.75);
  f.mark_r = uniform(rng, 0.0, 0.05);
  f.mark_dark = uniform(rng, 40, 120);
  return f;
}

Capture random_capture(std::uint64_t seed, double strength) {
  Rng rng(seed * 0xD1B54A32D192ED03ULL + 5);
  Capture c;
  c.dx = strength * uniform(rng, -0.015, 0.015);
  c.dy = strength * uniform(rng, -0.015, 0.015);
  c.scale = 1.0 + strength * uniform(rng, -0.02, 0.02);
  c.gain = 1.0 + strength * uniform(rng, -0.15, 0.15);
  c.offset = strength * uniform(rng, -15, 15);
  c.gradient = strength * uniform(rng, -12, 12);
  c.noise_sigma = strength * 3.0;
  c.noise_seed = seed + 99;
  return c;
}

GrayImage render_face(const FaceIdentity& id, int side, const Capture& cap) {
  constexpr int ss = 3;
  std::vector<double> px(static_cast<std::size_t>(side) * side);
  Rng noise_rng(cap.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          double fu = (x + (sx + 0.5) / ss) / side;
          double fv = (y + (sy + 0.5) / ss) / side;
          double u = (fu - 0.5 - cap.dx) / cap.scale + 0.5;
          double v = (fv - 0.5 - cap.dy) / cap.scale + 0.5;
          acc += face_intensity(id, u, v);
        }
      }
      double fu = (x + 0.5) / side;
      double value = cap.gain * acc / (ss * ss) + cap.offset + cap.gradient * (fu - 0.5);
      if (cap.noise_sigma > 0) value += cap.noise_sigma * noise(noise_rng);
      px[static_cast<std::size_t>(y) * side + x] = value;
    }
  }
  return finish(side, side, std::move(px));
}

GrayImage render_clutter(int side, std::uint64_t seed) {
  Rng rng(seed * 0x2545F4914F6CDD1DULL + 3);
  std::vector<double> px(static_cast<std::size_t>(side) * side);
  int kind = static_cast<int>(rng() % 6);
  double base = uniform(rng, 20, 230);
  std::normal_distribution<double> noise(0.0, 1.0);
  switch (kind) {
  case 0: {
    double sigma = uniform(rng, 10, 60);
    for (auto& v : px) v = base + sigma * noise(rng);
    break;
  }
  case 1: {
    std::fill(px.begin(), px.end(), base);
    int blobs = 2 + static_cast<int>(rng() % 6);
    for (int b = 0; b < blobs; ++b) {
      double bx = uniform(rng, 0, side), by = uniform(rng, 0, side);
      double rx = uniform(rng, 2, side / 2.0), ry = uniform(rng, 2, side / 2.0);
      double val = uniform(rng, 0, 255);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if (std::hypot((x - bx) / rx, (y - by) / ry) < 1.0) px[y * side + x] = val;
    }
    break;
  }
  case 2: {
    double ang = uniform(rng, 0, std::numbers::pi);
    double period = uniform(rng, 3, side / 1.5);
    double amp = uniform(rng, 20, 100);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        px[y * side + x] = base + amp * std::sin(2 * std::numbers::pi *
                                                 (x * std::cos(ang) + y * std::sin(ang)) / period);
    break;
  }
  case 3: {
    double gx = uniform(rng, -6, 6), gy = uniform(rng, -6, 6);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) px[y * side + x] = base + gx * x + gy * y + 4 * noise(rng);
    break;
  }
  case 4:
    std::fill(px.begin(), px.end(), base);
    break;
  default: {
    std::fill(px.begin(), px.end(), base);
    int rects = 1 + static_cast<int>(rng() % 5);
    for (int r = 0; r < rects; ++r) {
      int x0 = static_cast<int>(rng() % side), y0 = static_cast<int>(rng() % side);
      int w = 1 + static_cast<int>(rng() % side), h = 1 + static_cast<int>(rng() % side);
      double val = uniform(rng, 0, 255);
      for (int y = y0; y < std::min(side, y0 + h); ++y)
        for (int x = x0; x < std::min(side, x0 + w); ++x) px[y * side + x] = val;
    }
    break;
  }
  }
  return finish(side, side, std::move(px));
}

GrayImage face_in_scene(const FaceIdentity& id, int width, int height, Rect face_box,
                        std::uint64_t background_seed) {
  Rng rng(background_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  double base = uniform(rng, 60, 120);
  std::vector<double> px(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      px[y * width + x] = base + 15 * std::sin(x * 0.15) * std::cos(y * 0.11) + 3 * noise(rng);
  GrayImage scene = finish(width, height, std::move(px));
  GrayImage face = render_face(id, face_box.w);
  for (int y = 0; y < face_box.h && y + face_box.y < height; ++y)
    for (int x = 0; x < face_box.w && x + face_box.x < width; ++x)
      scene.at(face_box.x + x, face_box.y + y) = face.at(x, std::min(y, face.height() - 1));
  return scene;
}

WindowSet detector_training_set(int faces, int nonfaces, std::uint64_t seed, int side) {
  WindowSet set;
  for (int i = 0; i < faces; ++i) {
    auto id = make_face_identity(seed + 7919 * static_cast<std::uint64_t>(i));
    auto img = render_face(id, side, random_capture(seed + i, 0.7));
    set.windows.push_back(normalize(img));
    set.labels.push_back(SampleLabel::face);
  }
  for (int i = 0; i < nonfaces; ++i) {
    auto img = i % 10 == 0 ? GrayImage(side, side, 40.0 + i % 200)
                           : render_clutter(side, seed * 13 + static_cast<std::uint64_t>(i));
    set.windows.push_back(normalize(img));
    set.labels.push_back(SampleLabel::nonface);
  }
  return set;
}

FingerIdentity make_finger_identity(std::uint64_t seed, int width, int height,
                                    int minutia_count) {
  Rng rng(seed * 0xBF58476D1CE4E5B9ULL + 11);
  FingerIdentity f;
  f.period = uniform(rng, 8.5, 10.0);
  f.angle = uniform(rng, 0, std::numbers::pi);
  f.wave_amp = uniform(rng, 1.0, 3.0);
  f.wave_freq = uniform(rng, 0.015, 0.035);
  f.wave_phase = uniform(rng, 0, 2 * std::numbers::pi);
  f.curl = uniform(rng, -0.6, 0.6);
  const double margin = 22.0;
  const double min_gap = 26.0;
  int attempts = 0;
  while (static_cast<int>(f.singularities.size()) < minutia_count && attempts < 10000) {
    ++attempts;
    double x = uniform(rng, margin, width - margin);
    double y = uniform(rng, margin, height - margin);
    bool clear = std::all_of(f.singularities.begin(), f.singularities.end(), [&](auto& p) {
      return std::hypot(p.first - x, p.second - y) >= min_gap;
    });
    if (!clear) continue;
    f.singularities.emplace_back(x, y);
    f.charges.push_back(f.charges.size() % 2 == 0 ? 1 : -1);
  }
  return f;
}

GrayImage render_fingerprint(const FingerIdentity& id, int width, int height,
                             const ScanVariation& scan) {
  std::vector<double> px(static_cast<std::size_t>(width) * height);
  Rng rng(scan.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double k = 2 * std::numbers::pi / id.period;
  const double ca = std::cos(id.angle);
  const double sa = std::sin(id.angle);
  const double cx = width / 2.0;
  const double cy = height / 2.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double gx = x - scan.dx - cx;
      double gy = y - scan.dy - cy;
      double across = gx * ca + gy * sa;
      double along = -gx * sa + gy * ca;
      double phase = k * (across + id.curl * along * along / width) +
                     id.wave_amp * std::sin(id.wave_freq * along + id.wave_phase);
      for (std::size_t s = 0; s < id.singularities.size(); ++s) {
        double sx = id.singularities[s].first - cx;
        double sy = id.singularities[s].second - cy;
        phase += id.charges[s] * std::atan2(gy - sy, gx - sx);
      }
      double value = 128.0 - 95.0 * std::cos(phase);
      if (scan.noise_sigma > 0) value += scan.noise_sigma * noise(rng);
      px[static_cast<std::size_t>(y) * width + x] = value;
    }
  }
  return finish(width, height, std::move(px));
}

FingerIdentity perturb_finger(const FingerIdentity& id, double fraction, double min_shift,
                              std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  FingerIdentity out = id;
  auto count = static_cast<std::size_t>(std::lround(fraction * id.singularities.size()));
  for (std::size_t i = 0; i < count && i < out.singularities.size(); ++i) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double ang = uniform(rng, 0, 2 * std::numbers::pi);
      double dist = uniform(rng, min_shift, 2 * min_shift);
      double nx = id.singularities[i].first + dist * std::cos(ang);
      double ny = id.singularities[i].second + dist * std::sin(ang);
      if (nx > 20 && ny > 20 && nx < width - 20 && ny < height - 20) {
        out.singularities[i] = {nx, ny};
        break;
      }
    }
  }
  return out;
}

namespace {

std::string two_digits(int i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

} // namespace

void write_face_dataset(const std::filesystem::path& root, int identities, int per_identity,
                        int enroll_per_identity, int side, std::uint64_t seed,
                        double capture_strength) {
  std::filesystem::create_directories(root);
  std::ofstream split(root / "split.txt");
  for (int p = 0; p < identities; ++p) {
    std::string name = "id" + two_digits(p);
    std::filesystem::create_directories(root / name);
    auto identity = make_face_identity(seed + static_cast<std::uint64_t>(p));
    for (int i = 0; i < per_identity; ++i) {
      std::uint64_t cap_seed = seed * 1000 + static_cast<std::uint64_t>(p) * 100 + i;
      Capture cap = i == 0 ? Capture{} : random_capture(cap_seed, capture_strength);
      std::string file = name + "/" + two_digits(i) + ".pgm";
      write_pgm(root / file, render_face(identity, side, cap));
      split << (i < enroll_per_identity ? "enroll " : "probe ") << file << '\n';
    }
  }
}

void write_fingerprint_dataset(const std::filesystem::path& root, int identities,
                               int per_identity, int enroll_per_identity,
                               std::uint64_t seed) {
  std::filesystem::create_directories(root);
  std::ofstream split(root / "split.txt");
  for (int p = 0; p < identities; ++p) {
    std::string name = "f" + two_digits(p);
    std::filesystem::create_directories(root / name);
    auto finger = make_finger_identity(seed + static_cast<std::uint64_t>(p));
    Rng rng(seed * 31 + p);
    for (int i = 0; i < per_identity; ++i) {
      ScanVariation scan;
      if (i > 0) {
        scan.dx = static_cast<int>(rng() % 7) - 3;
        scan.dy = static_cast<int>(rng() % 7) - 3;
        scan.noise_sigma = 4.0;
        scan.noise_seed = rng();
      }
      std::string file = name + "/" + two_digits(i) + ".pgm";
      write_pgm(root / file, render_fingerprint(finger, 160, 160, scan));
      split << (i < enroll_per_identity ? "enroll " : "probe ") << file << '\n';
    }
  }
}

Person make_person(std::uint64_t seed, int capture, int face_side) {
  Person p;
  auto face_id = make_face_identity(seed * 7 + 1);
  auto finger_id = make_finger_identity(seed * 11 + 3);
  if (capture == 0) {
    p.face = render_face(face_id, face_side);
    p.finger = render_fingerprint(finger_id);
    return p;
  }
  const std::uint64_t variant = seed * 1000 + static_cast<std::uint64_t>(capture);
  p.face = render_face(face_id, face_side, random_capture(variant, 0.25));
  Rng rng(variant);
  ScanVariation scan;
  scan.dx = static_cast<int>(rng() % 5) - 2;
  scan.dy = static_cast<int>(rng() % 5) - 2;
  scan.noise_sigma = 4.0;
  scan.noise_seed = rng();
  p.finger = render_fingerprint(finger_id, 160, 160, scan);
  return p;
}

EigenModel reference_face_model(int identities, int side, int components) {
  std::vector<FaceVector> faces;
  for (int i = 0; i < identities; ++i) {
    auto id = make_face_identity(1000003ULL + static_cast<std::uint64_t>(i) * 31);
    faces.push_back(face_vector(render_face(id, side), side));
    faces.push_back(face_vector(render_face(id, side, random_capture(77 + i, 0.25)), side));
  }
  return fit_eigenmodel(faces, components);
}

} // namespace ballotgate::synth
