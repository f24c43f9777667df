#include "ballotgate/facerec.hpp"

#include "ballotgate/error.hpp"
#include "json_format.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace ballotgate {

namespace {

void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> column) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < column.size(); ++i) {
    if (std::abs(column[i]) > best) {
      best = std::abs(column[i]);
      arg = i;
    }
  }
  if (column[arg] < 0) column = -column;
}

// Modified Gram-Schmidt, applied twice. Columns that vanish are replaced by
// the first standard basis vector that is independent of the previous ones.
void orthonormalize(Eigen::MatrixXd& q, std::vector<bool>& filled) {
  const Eigen::Index d = q.rows();
  Eigen::Index next_unit = 0;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
    }
    double norm = q.col(j).norm();
    while (!filled[static_cast<std::size_t>(j)] || norm < 1e-8) {
      if (next_unit >= d) throw Error(Errc::consistency, "cannot complete eigenbasis");
      q.col(j).setZero();
      q(next_unit++, j) = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
      }
      norm = q.col(j).norm();
      filled[static_cast<std::size_t>(j)] = norm >= 1e-8;
    }
    q.col(j) /= norm;
  }
}

const IdentitySubspace* find_subspace(std::span<const IdentitySubspace> subspaces,
                                      std::string_view identity) {
  auto it = std::lower_bound(subspaces.begin(), subspaces.end(), identity,
                             [](const IdentitySubspace& s, std::string_view id) {
                               return s.identity < id;
                             });
  if (it != subspaces.end() && it->identity == identity) return &*it;
  for (const auto& s : subspaces) {
    if (s.identity == identity) return &s;
  }
  return nullptr;
}

} // namespace

FaceVector face_vector(const GrayImage& face, int side) {
  if (side < 1) throw Error(Errc::dimension, "face crop side must be positive");
  auto img = normalize(resize(face, side, side));
  auto px = img.pixels();
  return Eigen::Map<const Eigen::VectorXd>(px.data(), static_cast<Eigen::Index>(px.size()));
}

EigenModel fit_eigenmodel(std::span<const FaceVector> training, int components) {
  const auto n = static_cast<Eigen::Index>(training.size());
  if (n < 2) {
    throw Error(Errc::insufficient_data, "eigenface fitting needs at least two samples, got " +
                                             std::to_string(n));
  }
  const Eigen::Index d = training.front().size();
  if (d < 1) throw Error(Errc::dimension, "face vectors are empty");
  for (const auto& x : training) {
    if (x.size() != d) throw Error(Errc::dimension, "face vectors differ in dimension");
  }
  const Eigen::Index m = std::clamp<Eigen::Index>(components, 1, std::min(d, n - 1));

  Eigen::MatrixXd centered(d, n);
  for (Eigen::Index i = 0; i < n; ++i) centered.col(i) = training[static_cast<std::size_t>(i)];
  EigenModel model;
  model.mean = centered.rowwise().mean();
  centered.colwise() -= model.mean;
  const double dof = static_cast<double>(n - 1);

  Eigen::MatrixXd basis(d, m);
  Eigen::VectorXd values(m);
  if (n < d) {
    Eigen::MatrixXd gram = centered.transpose() * centered / dof;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw Error(Errc::consistency, "Gram eigensolver failed");
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::Index src = n - 1 - j;  // ascending -> descending
      values[j] = solver.eigenvalues()[src];
      basis.col(j) = centered * solver.eigenvectors().col(src);
    }
  } else {
    Eigen::MatrixXd cov = centered * centered.transpose() / dof;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
      throw Error(Errc::consistency, "covariance eigensolver failed");
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      values[j] = solver.eigenvalues()[d - 1 - j];
      basis.col(j) = solver.eigenvectors().col(d - 1 - j);
    }
  }

  const double largest = std::max(values.maxCoeff(), 0.0);
  std::vector<bool> filled(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    bool degenerate = values[j] <= 1e-12 * largest || values[j] <= 0.0;
    filled[static_cast<std::size_t>(j)] = !degenerate;
    if (degenerate) values[j] = 0.0;
  }
  orthonormalize(basis, filled);
  for (Eigen::Index j = 0; j < m; ++j) canonicalize_sign(basis.col(j));

  model.basis = std::move(basis);
  model.eigenvalues = std::move(values);
  return model;
}

Coords project(const EigenModel& model, const FaceVector& x) {
  if (x.size() != model.mean.size()) {
    throw Error(Errc::dimension, "face vector has " + std::to_string(x.size()) +
                                     " features, model expects " +
                                     std::to_string(model.mean.size()));
  }
  return model.basis.transpose() * (x - model.mean);
}

FaceVector reconstruct(const EigenModel& model, const Coords& coords) {
  if (coords.size() != model.basis.cols()) {
    throw Error(Errc::dimension, "coordinate vector does not match model components");
  }
  return model.mean + model.basis * coords;
}

KnnResult knn_classify(std::span<const FaceTemplate> gallery, const Coords& query, int k) {
  if (gallery.empty()) throw Error(Errc::empty_gallery, "KNN over an empty gallery");
  if (k < 1 || static_cast<std::size_t>(k) > gallery.size()) {
    throw Error(Errc::invalid_config, "k must lie in [1, gallery size]");
  }
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].coords.size() != query.size()) {
      throw Error(Errc::dimension, "template and query dimensions differ");
    }
    dist.emplace_back((gallery[i].coords - query).norm(), i);
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

  struct Vote {
    int count = 0;
    double sum = 0.0;
    double nearest = 0.0;
  };
  std::map<std::string, Vote> votes;
  for (int i = 0; i < k; ++i) {
    auto& v = votes[gallery[dist[static_cast<std::size_t>(i)].second].identity];
    if (v.count == 0) v.nearest = dist[static_cast<std::size_t>(i)].first;
    ++v.count;
    v.sum += dist[static_cast<std::size_t>(i)].first;
  }
  const std::pair<const std::string, Vote>* best = nullptr;
  for (const auto& entry : votes) {  // map order gives the lexicographic fallback
    if (best == nullptr) {
      best = &entry;
      continue;
    }
    const Vote& a = entry.second;
    const Vote& b = best->second;
    if (a.count > b.count || (a.count == b.count && a.sum / a.count < b.sum / b.count)) {
      best = &entry;
    }
  }
  return KnnResult{best->first, best->second.nearest};
}

std::vector<IdentitySubspace> fit_identity_subspaces(std::span<const FaceTemplate> gallery,
                                                     int q_max) {
  std::map<std::string, std::vector<const Coords*>> groups;
  for (const auto& t : gallery) groups[t.identity].push_back(&t.coords);

  std::vector<IdentitySubspace> out;
  out.reserve(groups.size());
  for (const auto& [identity, members] : groups) {
    const Eigen::Index m = members.front()->size();
    Eigen::MatrixXd stacked(m, static_cast<Eigen::Index>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      stacked.col(static_cast<Eigen::Index>(i)) = *members[i];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const Eigen::Index limit =
        std::min<Eigen::Index>(std::max(q_max, 0), static_cast<Eigen::Index>(members.size()));
    Eigen::Index q = 0;
    while (q < limit && q < sv.size() && sv[q] > 0.0 && sv[q] > 1e-10 * sv[0]) ++q;
    Eigen::MatrixXd basis = svd.matrixU().leftCols(q);
    for (Eigen::Index j = 0; j < q; ++j) canonicalize_sign(basis.col(j));
    out.push_back(IdentitySubspace{identity, std::move(basis)});
  }
  return out;
}

double subspace_similarity(const Eigen::MatrixXd& basis, const Coords& c) {
  const double norm = c.norm();
  if (norm == 0.0) return 0.0;
  if (basis.cols() == 0) return 0.0;
  if (basis.rows() != c.size()) throw Error(Errc::dimension, "subspace/probe dimension mismatch");
  Coords residual = c - basis * (basis.transpose() * c);
  return std::clamp(1.0 - residual.norm() / norm, 0.0, 1.0);
}

double line_similarity(const Coords& direction, const Coords& c) {
  const double len = direction.norm();
  if (len == 0.0) return 0.0;
  Eigen::MatrixXd basis = direction / len;
  return subspace_similarity(basis, c);
}

VerifyResult cascaded_verify(const EigenModel& model,
                             std::span<const IdentitySubspace> subspaces,
                             std::span<const FaceTemplate> gallery, const FaceVector& probe,
                             double threshold, int k) {
  if (gallery.empty()) throw Error(Errc::empty_gallery, "no enrolled faces to verify against");
  Coords c = project(model, probe);
  KnnResult nearest = knn_classify(gallery, c, k);
  const IdentitySubspace* sub = find_subspace(subspaces, nearest.label);
  if (sub == nullptr) {
    throw Error(Errc::consistency, "no subspace fitted for identity '" + nearest.label + "'");
  }
  VerifyResult r;
  r.candidate = nearest.label;
  r.knn_distance = nearest.distance;
  r.similarity = subspace_similarity(sub->basis, c);
  r.accepted = r.similarity >= threshold;
  return r;
}

FaceGallery::FaceGallery(std::shared_ptr<const EigenModel> model, int q_max, int k)
    : model_(std::move(model)), q_max_(q_max), k_(k) {
  if (!model_) throw Error(Errc::invalid_config, "face gallery needs an eigen model");
  if (q_max_ < 1 || k_ < 1) throw Error(Errc::invalid_config, "q_max and k must be >= 1");
}

FaceTemplate FaceGallery::make_template(std::string identity, const FaceVector& face) const {
  return FaceTemplate{std::move(identity), project(*model_, face)};
}

void FaceGallery::add(FaceTemplate t) {
  if (t.coords.size() != model_->components()) {
    throw Error(Errc::dimension, "template does not match the eigen model");
  }
  templates_.push_back(std::move(t));
  subspaces_ = fit_identity_subspaces(templates_, q_max_);
}

void FaceGallery::clear() {
  templates_.clear();
  subspaces_.clear();
}

VerifyResult FaceGallery::verify(const FaceVector& probe, double threshold) const {
  int k = std::min<int>(k_, static_cast<int>(templates_.size()));
  return cascaded_verify(*model_, subspaces_, templates_, probe, threshold, std::max(k, 1));
}

double FaceGallery::similarity_to(std::string_view identity, const Coords& coords) const {
  const IdentitySubspace* sub = find_subspace(subspaces_, identity);
  return sub == nullptr ? 0.0 : subspace_similarity(sub->basis, coords);
}

std::string model_to_json(const EigenModel& model) {
  detail::ojson doc;
  doc["version"] = 1;
  doc["d"] = model.dimension();
  doc["m"] = model.components();
  auto reals = [](const double* p, Eigen::Index n) {
    detail::ojson a = detail::ojson::array();
    for (Eigen::Index i = 0; i < n; ++i) a.push_back(p[i]);
    return a;
  };
  doc["mean"] = reals(model.mean.data(), model.mean.size());
  doc["basis"] = reals(model.basis.data(), model.basis.size());  // column-major
  doc["eigenvalues"] = reals(model.eigenvalues.data(), model.eigenvalues.size());
  return detail::dump17(doc);
}

EigenModel model_from_json(std::string_view text) {
  try {
    auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<int>() != 1) {
      throw Error(Errc::version_mismatch, "unsupported eigen model version");
    }
    const auto d = doc.at("d").get<Eigen::Index>();
    const auto m = doc.at("m").get<Eigen::Index>();
    auto mean = doc.at("mean").get<std::vector<double>>();
    auto basis = doc.at("basis").get<std::vector<double>>();
    auto values = doc.at("eigenvalues").get<std::vector<double>>();
    if (d < 1 || m < 1 || static_cast<Eigen::Index>(mean.size()) != d ||
        static_cast<Eigen::Index>(basis.size()) != d * m ||
        static_cast<Eigen::Index>(values.size()) != m) {
      throw Error(Errc::malformed_input, "eigen model arrays do not match d and m");
    }
    EigenModel model;
    model.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), d);
    model.basis = Eigen::Map<Eigen::MatrixXd>(basis.data(), d, m);
    model.eigenvalues = Eigen::Map<Eigen::VectorXd>(values.data(), m);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_input, std::string("eigen model JSON: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const EigenModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << model_to_json(model) << '\n';
}

EigenModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

} // namespace ballotgate
