#pragma once

#include "ballotgate/imaging.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ballotgate {

using FaceVector = Eigen::VectorXd;
using Coords = Eigen::VectorXd;

/// Flattened side x side crop: resized, then normalized to zero mean and unit
/// variance. The default 42 x 42 crop gives 1764 features.
FaceVector face_vector(const GrayImage& face, int side = 42);

/// Mean face plus an orthonormal eigenface basis (columns, eigenvalues
/// descending).
struct EigenModel {
  FaceVector mean;
  Eigen::MatrixXd basis;
  Eigen::VectorXd eigenvalues;

  int dimension() const { return static_cast<int>(mean.size()); }
  int components() const { return static_cast<int>(basis.cols()); }
};

/// Mean-centred PCA. Uses the n x n Gram matrix when there are fewer samples
/// than dimensions and the d x d covariance otherwise. Eigenvalues follow the
/// unbiased 1/(n-1) convention. `components` is clamped to min(d, n-1).
/// Directions with no variance are completed deterministically so the basis
/// stays orthonormal; their eigenvalue is 0. Each column is signed so its
/// largest-magnitude entry is positive.
EigenModel fit_eigenmodel(std::span<const FaceVector> training, int components);

/// basis^T (x - mean)
Coords project(const EigenModel& model, const FaceVector& x);

/// mean + basis * coords
FaceVector reconstruct(const EigenModel& model, const Coords& coords);

struct FaceTemplate {
  std::string identity;
  Coords coords;
};

struct KnnResult {
  std::string label;
  double distance = 0.0;  // to the nearest neighbour carrying `label`
};

/// Majority vote among the k nearest templates (Euclidean). Vote ties go to
/// the smaller mean distance, then the lexicographically smaller label.
KnnResult knn_classify(std::span<const FaceTemplate> gallery, const Coords& query, int k);

struct IdentitySubspace {
  std::string identity;
  Eigen::MatrixXd basis;  // m x q, orthonormal columns
};

/// One uncentred subspace per identity spanning its template coordinates,
/// truncated to the leading min(q_max, templates) singular directions.
/// Output is ordered by identity.
std::vector<IdentitySubspace> fit_identity_subspaces(std::span<const FaceTemplate> gallery,
                                                     int q_max);

/// 1 - |c - P c| / |c| for the orthogonal projector P onto `basis`, clamped to
/// [0, 1]; 0 when c = 0.
double subspace_similarity(const Eigen::MatrixXd& basis, const Coords& c);

/// subspace_similarity against the line through a single template.
double line_similarity(const Coords& direction, const Coords& c);

struct VerifyResult {
  std::string candidate;
  double similarity = 0.0;
  bool accepted = false;
  double knn_distance = 0.0;
};

/// Two-stage verification: KNN picks a candidate identity, then the probe is
/// accepted iff its similarity to that identity's subspace reaches
/// `threshold` (inclusive).
VerifyResult cascaded_verify(const EigenModel& model,
                             std::span<const IdentitySubspace> subspaces,
                             std::span<const FaceTemplate> gallery, const FaceVector& probe,
                             double threshold = 0.90, int k = 1);

/// Gallery of enrolled templates with their identity subspaces kept current.
class FaceGallery {
public:
  FaceGallery(std::shared_ptr<const EigenModel> model, int q_max = 3, int k = 1);

  const EigenModel& model() const { return *model_; }
  std::shared_ptr<const EigenModel> shared_model() const { return model_; }
  std::span<const FaceTemplate> templates() const { return templates_; }
  std::span<const IdentitySubspace> subspaces() const { return subspaces_; }
  bool empty() const { return templates_.empty(); }

  FaceTemplate make_template(std::string identity, const FaceVector& face) const;

  /// Adds a template and refits every identity subspace.
  void add(FaceTemplate t);
  void clear();

  /// cascaded_verify with k clamped to the gallery size.
  VerifyResult verify(const FaceVector& probe, double threshold) const;

  /// Subspace similarity of a probe against one enrolled identity; 0 if the
  /// identity is unknown.
  double similarity_to(std::string_view identity, const Coords& coords) const;

private:
  std::shared_ptr<const EigenModel> model_;
  int q_max_;
  int k_;
  std::vector<FaceTemplate> templates_;
  std::vector<IdentitySubspace> subspaces_;
};

std::string model_to_json(const EigenModel& model);
EigenModel model_from_json(std::string_view text);
void save_model(const std::filesystem::path& path, const EigenModel& model);
EigenModel load_model(const std::filesystem::path& path);

} // namespace ballotgate
