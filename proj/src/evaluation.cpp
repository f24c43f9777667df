#include "ballotgate/evaluation.hpp"

#include "ballotgate/detector.hpp"
#include "ballotgate/fingerprint.hpp"
#include "ballotgate/image_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

namespace ballotgate {

std::string format_accuracy(double percent) {
  char buf[32];
  double rounded = std::round(percent);
  if (std::abs(percent - rounded) < 1e-9) std::snprintf(buf, sizeof buf, "%.0f%%", rounded);
  else std::snprintf(buf, sizeof buf, "%.1f%%", percent);
  return buf;
}

std::string format_report(const EvalReport& r, Modality modality) {
  std::ostringstream out;
  out << (modality == Modality::face ? "Faces tested" : "Tested")
      << "\tCorrect\tIncorrect\tMissed\tAccuracy\n";
  out << r.tested << '\t' << r.correct << '\t' << r.incorrect << '\t' << r.missed << '\t'
      << format_accuracy(r.accuracy()) << '\n';
  return out.str();
}

Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = root;
  if (!fs::is_directory(root)) throw Error(Errc::io, "not a directory: " + root.string());

  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::map<std::string, std::size_t> by_rel;
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      DatasetImage img{dir.filename().string(), files[i], static_cast<int>(i)};
      by_rel[fs::relative(files[i], root).generic_string()] = ds.images.size();
      ds.images.push_back(std::move(img));
    }
  }
  if (ds.images.empty()) throw Error(Errc::empty_dataset, "no images under " + root.string());

  std::ifstream split(root / "split.txt");
  if (split) {
    ds.has_split = true;
    std::string line;
    for (int n = 1; std::getline(split, line); ++n) {
      std::istringstream in(line);
      std::string role, rel;
      if (!(in >> role)) continue;
      if (!(in >> rel) || (role != "enroll" && role != "probe"))
        throw Error(Errc::malformed_input, "split.txt line " + std::to_string(n) + ": " + line);
      auto it = by_rel.find(rel);
      if (it == by_rel.end()) throw Error(Errc::io, "split.txt names a missing image: " + rel);
      ds.images[it->second].role =
          role == "enroll" ? DatasetImage::Role::enroll : DatasetImage::Role::probe;
    }
  }
  return ds;
}

namespace {

Dataset load_split(const std::filesystem::path& root) {
  auto ds = load_dataset(root);
  if (!ds.has_split) throw Error(Errc::malformed_input, "dataset has no split.txt: " + root.string());
  bool enroll = false, probe = false;
  for (const auto& img : ds.images) {
    enroll |= img.role == DatasetImage::Role::enroll;
    probe |= img.role == DatasetImage::Role::probe;
  }
  if (!enroll || !probe) throw Error(Errc::empty_dataset, "split needs enroll and probe images");
  return ds;
}

FaceCropper cropper_for(const ApiConfig& config) {
  std::shared_ptr<const Cascade> detector;
  if (!config.cascade_path.empty())
    detector = std::make_shared<const Cascade>(load_cascade(config.cascade_path));
  return FaceCropper(config.side(), detector);
}

std::optional<FaceVector> try_crop(const FaceCropper& crop, const std::filesystem::path& path) {
  try {
    return crop(read_image(path));
  } catch (const Error& e) {
    if (e.code() != Errc::face_not_found) throw;
    return std::nullopt;
  }
}

std::shared_ptr<const EigenModel> fit_model(const std::vector<FaceVector>& faces, int m) {
  if (faces.size() < 2) throw Error(Errc::insufficient_data, "need at least two gallery faces");
  int comps = std::min<int>(m, static_cast<int>(faces.size()) - 1);
  return std::make_shared<const EigenModel>(fit_eigenmodel(faces, comps));
}

// Nearest-neighbour-only decision: KNN label, accepted if the probe lies
// within the similarity threshold of the line through its nearest template
// of that label.
bool knn_only_accepts(const FaceGallery& gallery, const Coords& c, int k, double threshold,
                      std::string* label) {
  auto templates = gallery.templates();
  auto kr = knn_classify(templates, c, k);
  const FaceTemplate* nearest = nullptr;
  double best = 0.0;
  for (const auto& t : templates) {
    if (t.identity != kr.label) continue;
    double dist = (t.coords - c).norm();
    if (!nearest || dist < best) {
      nearest = &t;
      best = dist;
    }
  }
  *label = kr.label;
  return nearest && line_similarity(nearest->coords, c) >= threshold;
}

} // namespace

EvalReport eval_face(const std::filesystem::path& root, const ApiConfig& config) {
  config.validate();
  auto ds = load_split(root);
  auto crop = cropper_for(config);

  std::vector<FaceVector> faces;
  std::vector<std::string> labels;
  for (const auto& img : ds.images) {
    if (img.role != DatasetImage::Role::enroll) continue;
    auto v = try_crop(crop, img.path);
    if (!v) throw Error(Errc::face_not_found, "no face in enrollment image " + img.path.string());
    faces.push_back(std::move(*v));
    labels.push_back(img.identity);
  }
  FaceGallery gallery(fit_model(faces, config.m), config.q_max, config.k);
  for (std::size_t i = 0; i < faces.size(); ++i) gallery.add(gallery.make_template(labels[i], faces[i]));

  EvalReport r;
  for (const auto& img : ds.images) {
    if (img.role != DatasetImage::Role::probe) continue;
    ++r.tested;
    auto v = try_crop(crop, img.path);
    if (!v) {
      ++r.missed;
      continue;
    }
    auto res = gallery.verify(*v, config.face_threshold);
    if (!res.accepted) ++r.missed;
    else if (res.candidate == img.identity) ++r.correct;
    else ++r.incorrect;
  }
  return r;
}

EvalReport eval_fingerprint(const std::filesystem::path& root, const ApiConfig& config) {
  config.validate();
  auto ds = load_split(root);
  auto rc = config.registry_config();
  std::vector<std::pair<std::string, FingerprintTemplate>> gallery;
  for (const auto& img : ds.images) {
    if (img.role != DatasetImage::Role::enroll) continue;
    auto t = make_fingerprint_template(read_image(img.path), rc.fp_block, rc.minutiae);
    if (t.minutiae.empty()) throw Error(Errc::blank_fingerprint, "blank enrollment print " + img.path.string());
    gallery.emplace_back(img.identity, std::move(t));
  }

  EvalReport r;
  for (const auto& img : ds.images) {
    if (img.role != DatasetImage::Role::probe) continue;
    ++r.tested;
    auto probe = make_fingerprint_template(read_image(img.path), rc.fp_block, rc.minutiae);
    double best = -1.0;
    const std::string* who = nullptr;
    for (const auto& [id, t] : gallery) {
      double s = match_templates(probe, t, rc.match).similarity;
      if (s > best) {
        best = s;
        who = &id;
      }
    }
    if (probe.minutiae.empty() || best < config.fp_threshold) ++r.missed;
    else if (*who == img.identity) ++r.correct;
    else ++r.incorrect;
  }
  return r;
}

std::vector<FoldResult> cross_validate_face(const std::filesystem::path& root,
                                            const ApiConfig& config, int k, int folds) {
  config.validate();
  if (folds < 2) throw Error(Errc::invalid_config, "need at least two folds");
  if (k < 1) throw Error(Errc::invalid_config, "k must be at least 1");
  auto ds = load_dataset(root);
  auto crop = cropper_for(config);
  std::vector<std::optional<FaceVector>> vectors;
  for (const auto& img : ds.images) vectors.push_back(try_crop(crop, img.path));

  std::vector<FoldResult> out;
  for (int f = 0; f < folds; ++f) {
    FoldResult fr;
    std::vector<FaceVector> train;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      if (ds.images[i].index % folds == f || !vectors[i]) continue;
      train.push_back(*vectors[i]);
      labels.push_back(ds.images[i].identity);
    }
    fr.gallery_size = static_cast<int>(train.size());
    bool any_probe = false;
    for (const auto& img : ds.images) any_probe |= img.index % folds == f;
    if (!any_probe) {
      out.push_back(fr);
      continue;
    }
    if (k > fr.gallery_size)
      throw Error(Errc::invalid_config, "k exceeds the gallery of fold " + std::to_string(f));

    FaceGallery gallery(fit_model(train, config.m), config.q_max, k);
    for (std::size_t i = 0; i < train.size(); ++i) gallery.add(gallery.make_template(labels[i], train[i]));

    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      if (ds.images[i].index % folds != f) continue;
      ++fr.tested;
      if (!vectors[i]) continue;
      const auto& truth = ds.images[i].identity;
      auto res = gallery.verify(*vectors[i], config.face_threshold);
      if (res.accepted && res.candidate == truth) ++fr.cascade_correct;
      std::string label;
      Coords c = project(gallery.model(), *vectors[i]);
      if (knn_only_accepts(gallery, c, k, config.face_threshold, &label) && label == truth)
        ++fr.knn_correct;
    }
    out.push_back(fr);
  }
  return out;
}

Comparison compare_classifiers(const std::filesystem::path& root, const std::vector<int>& k_values,
                               const ApiConfig& config) {
  config.validate();
  auto ds = load_dataset(root);
  std::map<std::string, int> per_identity;
  for (const auto& img : ds.images) ++per_identity[img.identity];
  for (const auto& [id, n] : per_identity)
    if (n < 2) throw Error(Errc::insufficient_data, "identity " + id + " has fewer than two images");

  // Smallest gallery over the folds that have probes.
  constexpr int folds = 5;
  int min_gallery = static_cast<int>(ds.images.size());
  for (int f = 0; f < folds; ++f) {
    int probes = 0;
    for (const auto& img : ds.images) probes += img.index % folds == f;
    if (probes > 0) min_gallery = std::min(min_gallery, static_cast<int>(ds.images.size()) - probes);
  }

  Comparison c;
  for (int k : k_values) {
    if (k < 1) throw Error(Errc::invalid_config, "k must be at least 1");
    if (k > min_gallery) {
      c.warnings.push_back("k=" + std::to_string(k) + " skipped: a fold gallery has only " +
                           std::to_string(min_gallery) + " images");
      continue;
    }
    int tested = 0, knn = 0, cascade = 0;
    for (const auto& fr : cross_validate_face(root, config, k, folds)) {
      tested += fr.tested;
      knn += fr.knn_correct;
      cascade += fr.cascade_correct;
    }
    c.rows.push_back({k, 100.0 * knn / tested, 100.0 * cascade / tested});
  }
  return c;
}

std::string comparison_csv(const Comparison& c) {
  std::string out = "k,knn_only,gpca_knn\n";
  char buf[96];
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.2f,%.2f\n", r.k, r.knn_only, r.gpca_knn);
    out += buf;
  }
  return out;
}

std::vector<TimingPoint> bench_response(const std::filesystem::path& root,
                                        const std::vector<int>& dimensions, int trials,
                                        const ApiConfig& config) {
  if (trials < 1) throw Error(Errc::invalid_config, "trials must be at least 1");
  for (int d : dimensions) {
    ApiConfig probe = config;
    probe.d = d;
    probe.validate();
  }
  auto ds = load_dataset(root);
  std::vector<GrayImage> images;
  for (const auto& img : ds.images) images.push_back(read_image(img.path));

  std::vector<TimingPoint> out;
  using clock = std::chrono::steady_clock;
  for (int d : dimensions) {
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d))));
    std::vector<FaceVector> train;
    std::vector<std::string> labels;
    // Probe crops are brought to the target resolution up front, as a camera
    // crop taken at that size would be; resampling cost depends on the stored
    // image size rather than on d.
    std::vector<GrayImage> probes;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (ds.images[i].index % 5 == 0) {
        probes.push_back(resize(images[i], side, side));
      } else {
        train.push_back(face_vector(images[i], side));
        labels.push_back(ds.images[i].identity);
      }
    }
    if (probes.empty()) throw Error(Errc::empty_dataset, "no held-out images to time");
    FaceGallery gallery(fit_model(train, config.m), config.q_max, config.k);
    for (std::size_t i = 0; i < train.size(); ++i) gallery.add(gallery.make_template(labels[i], train[i]));

    std::vector<double> per_verify;
    volatile double sink = 0.0;
    for (int t = 0; t < trials; ++t) {
      // Repeat passes until the batch is long enough to time reliably.
      long verifies = 0;
      auto start = clock::now();
      double elapsed = 0.0;
      do {
        for (const auto& img : probes) {
          sink = sink + gallery.verify(face_vector(img, side), config.face_threshold).similarity;
          ++verifies;
        }
        elapsed = std::chrono::duration<double>(clock::now() - start).count();
      } while (elapsed < 0.02);
      per_verify.push_back(elapsed / static_cast<double>(verifies));
    }
    std::sort(per_verify.begin(), per_verify.end());
    std::size_t n = per_verify.size();
    double median = n % 2 ? per_verify[n / 2] : 0.5 * (per_verify[n / 2 - 1] + per_verify[n / 2]);
    out.push_back({d, median, trials});
  }
  return out;
}

std::string timing_csv(const std::vector<TimingPoint>& points) {
  std::string out = "dimension,mean_response_s,trials\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%.9f,%d\n", p.dimension, p.mean_response_s, p.trials);
    out += buf;
  }
  return out;
}

} // namespace ballotgate
