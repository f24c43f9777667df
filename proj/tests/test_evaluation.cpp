#include "doctest.h"

#include "ballotgate/error.hpp"
#include "ballotgate/evaluation.hpp"
#include "ballotgate/image_io.hpp"
#include "ballotgate/synthetic.hpp"

#include <filesystem>
#include <fstream>

using namespace ballotgate;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "ballotgate_test_eval" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

int code(Errc c) { return static_cast<int>(c); }

void check_arithmetic(const EvalReport& r) {
  CHECK(r.tested == r.correct + r.incorrect + r.missed);
  if (r.tested > 0) CHECK(r.accuracy() == doctest::Approx(100.0 * r.correct / r.tested));
}

void write_split(const fs::path& root, const std::vector<std::pair<std::string, std::string>>& lines) {
  std::ofstream out(root / "split.txt");
  for (const auto& [role, rel] : lines) out << role << ' ' << rel << '\n';
}

// 10 identities x 10 crops at 42 x 42 with mild capture variation.
const fs::path& desk_faces() {
  static fs::path root = [] {
    auto p = scratch("desk_faces");
    synth::write_face_dataset(p, 10, 10, 8, 42, 1000, 0.25);
    return p;
  }();
  return root;
}

} // namespace

TEST_CASE("report schema and arithmetic") {
  EvalReport faces{100, 91, 3, 6};
  CHECK(faces.accuracy() == 91.0);
  CHECK(format_report(faces, Modality::face) ==
        "Faces tested\tCorrect\tIncorrect\tMissed\tAccuracy\n100\t91\t3\t6\t91%\n");
  EvalReport prints{100, 98, 0, 2};
  CHECK(format_report(prints, Modality::fingerprint) ==
        "Tested\tCorrect\tIncorrect\tMissed\tAccuracy\n100\t98\t0\t2\t98%\n");
  CHECK(format_accuracy(100.0 * 43 / 45) == "95.6%");
  CHECK(format_accuracy(100.0) == "100%");
  CHECK(EvalReport{}.accuracy() == 0.0);
  check_arithmetic(faces);
  check_arithmetic(prints);
}

TEST_CASE("dataset layout") {
  auto root = scratch("layout");
  synth::write_face_dataset(root, 2, 3, 1, 24, 5);
  auto ds = load_dataset(root);
  REQUIRE(ds.images.size() == 6);
  CHECK(ds.has_split);
  CHECK(ds.images[0].identity == "id00");
  CHECK(ds.images[4].identity == "id01");
  CHECK(ds.images[4].index == 1);
  CHECK(ds.images[3].role == DatasetImage::Role::enroll);
  CHECK(ds.images[5].role == DatasetImage::Role::probe);

  write_split(root, {{"enroll", "id00/00.pgm"}, {"probe", "id00/09.pgm"}});
  CHECK(error_code([&] { load_dataset(root); }) == code(Errc::io));
  write_split(root, {{"train", "id00/00.pgm"}});
  CHECK(error_code([&] { load_dataset(root); }) == code(Errc::malformed_input));
  fs::remove(root / "split.txt");
  CHECK_FALSE(load_dataset(root).has_split);
  CHECK(error_code([&] { eval_face(root, ApiConfig{}); }) == code(Errc::malformed_input));

  auto empty = scratch("empty");
  CHECK(error_code([&] { load_dataset(empty); }) == code(Errc::empty_dataset));
  CHECK(error_code([&] { eval_fingerprint(empty, ApiConfig{}); }) == code(Errc::empty_dataset));
}

TEST_CASE("face evaluation on its own enrollment images is all correct") {
  auto root = scratch("face_self");
  synth::write_face_dataset(root, 5, 2, 1, 42, 77, 0.25);
  // Probes are byte copies of the enrollment crops.
  for (int p = 0; p < 5; ++p) {
    auto dir = root / ("id0" + std::to_string(p));
    fs::copy_file(dir / "00.pgm", dir / "01.pgm", fs::copy_options::overwrite_existing);
  }
  auto r = eval_face(root, ApiConfig{});
  CHECK(r.tested == 5);
  CHECK(r.correct == 5);
  check_arithmetic(r);
}

TEST_CASE("probes of an identity absent from the gallery are never correct") {
  auto root = scratch("face_heldout");
  synth::write_face_dataset(root, 6, 4, 2, 42, 300, 0.25);
  std::vector<std::pair<std::string, std::string>> lines;
  for (int p = 0; p < 5; ++p)
    for (int i = 0; i < 4; ++i) lines.push_back({"enroll", "id0" + std::to_string(p) + "/0" + std::to_string(i) + ".pgm"});
  for (int i = 0; i < 4; ++i) lines.push_back({"probe", "id05/0" + std::to_string(i) + ".pgm"});
  write_split(root, lines);
  auto r = eval_face(root, ApiConfig{});
  CHECK(r.tested == 4);
  CHECK(r.correct == 0);
  check_arithmetic(r);
}

TEST_CASE("desk face dataset: cascade accuracy and fold-wise comparison") {
  ApiConfig cfg;
  auto folds = cross_validate_face(desk_faces(), cfg, 1);
  REQUIRE(folds.size() == 5);
  int tested = 0, cascade = 0, knn = 0;
  for (const auto& f : folds) {
    CHECK(f.tested == 20);
    CHECK(f.gallery_size == 80);
    CHECK(f.cascade_correct >= f.knn_correct - 1);
    tested += f.tested;
    cascade += f.cascade_correct;
    knn += f.knn_correct;
  }
  MESSAGE("cascade " << cascade << "/" << tested << ", knn " << knn << "/" << tested);
  CHECK(100.0 * cascade / tested >= 85.0);

  auto r = eval_face(desk_faces(), cfg);
  CHECK(r.tested == 20);
  check_arithmetic(r);
  CHECK(r.accuracy() >= 85.0);
}

TEST_CASE("compare_classifiers") {
  ApiConfig cfg;
  auto c = compare_classifiers(desk_faces(), {1, 80, 81}, cfg);
  REQUIRE(c.rows.size() == 2);
  CHECK(c.rows[0].k == 1);
  CHECK(c.rows[0].gpca_knn >= c.rows[0].knn_only);
  CHECK(c.rows[1].k == 80);  // every gallery image votes; tie rule decides
  REQUIRE(c.warnings.size() == 1);
  CHECK(c.warnings[0].find("k=81") != std::string::npos);
  auto csv = comparison_csv(c);
  CHECK(csv.rfind("k,knn_only,gpca_knn\n1,", 0) == 0);

  // Two images per identity: every fold gallery holds one image per identity,
  // so with q_max = 1 both classifiers use the same line.
  auto pairs = scratch("pairs");
  synth::write_face_dataset(pairs, 8, 2, 1, 42, 500, 0.25);
  cfg.q_max = 1;
  auto same = compare_classifiers(pairs, {1, 2}, cfg);
  REQUIRE(same.rows.size() == 2);
  for (const auto& row : same.rows) CHECK(row.knn_only == row.gpca_knn);
  for (const auto& f : cross_validate_face(pairs, cfg, 1)) CHECK(f.knn_correct == f.cascade_correct);

  auto single = scratch("single");
  synth::write_face_dataset(single, 3, 1, 1, 42, 9);
  CHECK(error_code([&] { compare_classifiers(single, {1}, ApiConfig{}); }) ==
        code(Errc::insufficient_data));
}

TEST_CASE("fingerprint evaluation") {
  ApiConfig cfg;
  auto root = scratch("prints");
  synth::write_fingerprint_dataset(root, 10, 10, 1, 1);
  auto r = eval_fingerprint(root, cfg);
  MESSAGE(format_report(r, Modality::fingerprint));
  CHECK(r.tested == 90);
  check_arithmetic(r);
  CHECK(r.accuracy() >= 95.0);

  // Self-match: probes are the enrollment scans.
  auto self = scratch("prints_self");
  synth::write_fingerprint_dataset(self, 4, 2, 1, 11);
  for (int p = 0; p < 4; ++p) {
    auto dir = self / ("f0" + std::to_string(p));
    fs::copy_file(dir / "00.pgm", dir / "01.pgm", fs::copy_options::overwrite_existing);
  }
  auto rs = eval_fingerprint(self, cfg);
  CHECK(rs.correct == 4);
  CHECK(rs.accuracy() == 100.0);

  // Probes whose every minutia has moved well beyond the tolerances.
  auto moved = scratch("prints_moved");
  std::vector<std::pair<std::string, std::string>> lines;
  for (int p = 0; p < 5; ++p) {
    auto name = "f0" + std::to_string(p);
    fs::create_directories(moved / name);
    auto id = synth::make_finger_identity(900 + p);
    write_pgm(moved / name / "00.pgm", synth::render_fingerprint(id));
    write_pgm(moved / name / "01.pgm", synth::render_fingerprint(synth::perturb_finger(id, 1.0, 30.0, 40 + p)));
    lines.push_back({"enroll", name + "/00.pgm"});
    lines.push_back({"probe", name + "/01.pgm"});
  }
  write_split(moved, lines);
  auto rm = eval_fingerprint(moved, cfg);
  CHECK(rm.tested == 5);
  CHECK(rm.correct == 0);
  check_arithmetic(rm);
}

TEST_CASE("bench_response") {
  ApiConfig cfg;
  auto points = bench_response(desk_faces(), {196, 784, 1764}, 5, cfg);
  REQUIRE(points.size() == 3);
  MESSAGE(timing_csv(points));
  for (const auto& p : points) {
    CHECK(p.trials == 5);
    CHECK(p.mean_response_s > 0.0);
  }
  CHECK(points[0].mean_response_s <= points[1].mean_response_s);
  CHECK(points[1].mean_response_s <= points[2].mean_response_s);

  auto one = bench_response(desk_faces(), {1764}, 1, cfg);
  REQUIRE(one.size() == 1);
  CHECK(one[0].dimension == 1764);
  CHECK(timing_csv(one).rfind("dimension,mean_response_s,trials\n1764,", 0) == 0);

  CHECK(error_code([&] { bench_response(desk_faces(), {3}, 1, cfg); }) == code(Errc::invalid_config));
  CHECK(error_code([&] { bench_response(desk_faces(), {196}, 0, cfg); }) == code(Errc::invalid_config));
}

TEST_CASE("config parsing and validation") {
  auto c = config_from_json("{}");
  CHECK(c.face_threshold == 0.90);
  CHECK(c.fp_threshold == 0.90);
  CHECK(c.k == 1);
  CHECK(c.d == 1764);
  CHECK(c.side() == 42);
  CHECK(c.session_timeout_s == 120);

  auto custom = config_from_json(R"({"port": 9000, "d": 784, "k": 3, "registry_path": "x.jsonl", "theta_tol": 20})");
  CHECK(custom.port == 9000);
  CHECK(custom.side() == 28);
  CHECK(custom.registry_config().face_side == 28);
  CHECK(custom.registry_config().match.theta_tol == 20.0);
  CHECK(custom.registry_path == "x.jsonl");
  auto back = config_from_json(config_to_json(custom));
  CHECK(back.port == 9000);
  CHECK(back.k == 3);
  CHECK(back.registry_path == "x.jsonl");

  for (const char* bad : {R"({"face_threshold": 1.5})", R"({"fp_threshold": -0.1})", R"({"k": 0})",
                          R"({"d": 1000})", R"({"d": 0})", R"({"q_max": 0})", R"({"r_tol": 0})",
                          R"({"session_timeout_s": 0})", R"({"colour": "blue"})"}) {
    CAPTURE(bad);
    CHECK(error_code([&] { config_from_json(bad); }) == code(Errc::invalid_config));
  }
  CHECK(error_code([] { config_from_json(R"({"k": "one"})"); }) == code(Errc::malformed_input));
  CHECK(error_code([] { config_from_json("[1]"); }) == code(Errc::malformed_input));
}
