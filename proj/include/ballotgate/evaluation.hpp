#pragma once

#include "ballotgate/error.hpp"
#include "ballotgate/gateway.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ballotgate {

/// One row of a testing-outcome table.
struct EvalReport {
  int tested = 0;
  int correct = 0;
  int incorrect = 0;  // accepted as the wrong identity
  int missed = 0;     // rejected, or nothing usable in the image

  double accuracy() const { return tested == 0 ? 0.0 : 100.0 * correct / tested; }
};

/// "91%" for whole numbers, one decimal otherwise ("95.6%").
std::string format_accuracy(double percent);

/// Tab-separated header and value rows. Faces use the header
/// "Faces tested\tCorrect\tIncorrect\tMissed\tAccuracy", fingerprints
/// "Tested\tCorrect\tIncorrect\tMissed\tAccuracy".
std::string format_report(const EvalReport& report, Modality modality);

/// `<root>/<identity>/<image>` with images (.pgm, .png) indexed in name order
/// within each identity. `<root>/split.txt` lines read "enroll <rel path>" or
/// "probe <rel path>".
struct DatasetImage {
  std::string identity;
  std::filesystem::path path;
  int index = 0;
  enum class Role { none, enroll, probe } role = Role::none;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetImage> images;
  bool has_split = false;
};

/// Throws empty_dataset when no images are found, io for a split entry that
/// does not exist and malformed_input for a bad split line.
Dataset load_dataset(const std::filesystem::path& root);

/// Enrolls the enroll split, then identifies and verifies every probe.
/// Correct = accepted as its own identity.
EvalReport eval_face(const std::filesystem::path& root, const ApiConfig& config);

/// Best match over every enrolled print; accepted at fp_threshold.
EvalReport eval_fingerprint(const std::filesystem::path& root, const ApiConfig& config);

/// Per-fold face results: fold f probes the images whose index % folds == f,
/// and the eigen model and gallery are built from the rest.
struct FoldResult {
  int tested = 0;
  int knn_correct = 0;      // nearest-neighbour identity plus line similarity
  int cascade_correct = 0;  // KNN candidate plus identity subspace similarity
  int gallery_size = 0;
};

std::vector<FoldResult> cross_validate_face(const std::filesystem::path& root,
                                            const ApiConfig& config, int k, int folds = 5);

struct ComparisonRow {
  int k = 1;
  double knn_only = 0.0;  // percent
  double gpca_knn = 0.0;  // percent
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<std::string> warnings;  // k values skipped
};

/// 5-fold accuracy of both classifiers for each k. A k larger than some fold's
/// gallery is skipped with a warning.
Comparison compare_classifiers(const std::filesystem::path& root, const std::vector<int>& k_values,
                               const ApiConfig& config);

/// "k,knn_only,gpca_knn" followed by one row per k.
std::string comparison_csv(const Comparison& c);

struct TimingPoint {
  int dimension = 0;
  double mean_response_s = 0.0;  // median over trials of the per-verify time
  int trials = 0;
};

/// For each d, refits the eigen model on the dataset's crops resized to
/// sqrt(d) and times normalization plus cascaded verification of held-out
/// crops already at that resolution.
/// Throws invalid_config for a non-square d or trials < 1.
std::vector<TimingPoint> bench_response(const std::filesystem::path& root,
                                        const std::vector<int>& dimensions, int trials,
                                        const ApiConfig& config);

/// "dimension,mean_response_s,trials" followed by one row per point.
std::string timing_csv(const std::vector<TimingPoint>& points);

} // namespace ballotgate
