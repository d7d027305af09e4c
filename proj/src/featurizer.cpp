#include "rulmdp/featurizer.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "rulmdp/errors.hpp"

namespace rulmdp {

Tensor rul_features(const std::vector<double>& pred, std::size_t trailing) {
  if (trailing == 0) throw ValidationError("trailing window must be >= 1");
  Tensor out({pred.size(), kRulFeatures});
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const std::size_t n = std::min(t + 1, trailing);
    out(t, 0) = pred[t];
    out(t, 1) = t == 0 ? 0.0 : pred[t] - pred[t - 1];
    double s = 0.0;
    for (std::size_t i = t + 1 - n; i <= t; ++i) s += pred[i];
    out(t, 2) = s / static_cast<double>(n);
  }
  return out;
}

double Pca::project(const double* row, std::size_t k) const {
  const auto& c = components.at(k);
  double s = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) s += (row[j] - mean[j]) * c[j];
  return s;
}

Pca fit_pca(const Tensor& x, std::size_t p) {
  const std::size_t n = x.rows(), d = x.cols();
  if (p == 0 || p > d) throw ValidationError("component count must be in [1, " + std::to_string(d) + "]");
  if (n < p + 1) throw ValidationError("PCA needs at least p+1 = " + std::to_string(p + 1) + " rows, got " + std::to_string(n));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(x.ptr(), n, d);
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("eigen-decomposition of the covariance failed");

  Pca pca;
  pca.mean.assign(mu.data(), mu.data() + d);
  pca.total_variance = cov.trace();
  const double top = es.eigenvalues()(d - 1);
  for (std::size_t k = 0; k < p; ++k) {
    const Eigen::Index idx = static_cast<Eigen::Index>(d - 1 - k);
    const double ev = es.eigenvalues()(idx);
    if (!(ev > 1e-12 * std::max(top, 1e-300)))
      throw ValidationError("requested " + std::to_string(p) + " components but the data has rank " + std::to_string(k));
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = es.eigenvectors()(static_cast<Eigen::Index>(j), idx);
    auto first = std::find_if(v.begin(), v.end(), [](double c) { return std::abs(c) > 1e-12; });
    if (first != v.end() && *first < 0)
      for (double& c : v) c = -c;
    pca.components.push_back(std::move(v));
    pca.eigenvalues.push_back(ev);
  }
  return pca;
}

std::vector<double> decile_edges(std::vector<double> values) {
  if (values.empty()) throw ValidationError("decile edges need at least one value");
  std::sort(values.begin(), values.end());
  const double n1 = static_cast<double>(values.size() - 1);
  std::vector<double> edges;
  for (std::size_t k = 1; k < kHealthStates; ++k) {
    const double pos = n1 * static_cast<double>(k) / static_cast<double>(kHealthStates);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    double e = values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    if (!edges.empty() && e <= edges.back()) e = std::nextafter(edges.back(), HUGE_VAL);
    edges.push_back(e);
  }
  return edges;
}

std::size_t bin_index(const std::vector<double>& edges, double value) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

std::size_t StateFeaturizer::discretize(const double* row) const {
  return std::min(bin_index(edges, pca.project(row, 0)), kHealthStates - 1);
}

std::vector<std::size_t> StateFeaturizer::discretize_sequence(const std::vector<double>& predicted_rul) const {
  const Tensor f = rul_features(predicted_rul, trailing);
  std::vector<std::size_t> out(f.rows());
  for (std::size_t t = 0; t < f.rows(); ++t) out[t] = discretize(f.ptr() + t * f.cols());
  return out;
}

StateFeaturizer fit_featurizer(const std::vector<std::vector<double>>& per_unit, std::size_t components) {
  std::size_t rows = 0;
  for (const auto& u : per_unit) rows += u.size();
  Tensor x({rows, kRulFeatures});
  std::size_t r = 0;
  for (const auto& u : per_unit) {
    const Tensor f = rul_features(u);
    std::copy(f.data().begin(), f.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * kRulFeatures));
    r += f.rows();
  }
  StateFeaturizer sf;
  sf.pca = fit_pca(x, components);
  std::vector<double> proj(rows);
  for (std::size_t i = 0; i < rows; ++i) proj[i] = sf.pca.project(x.ptr() + i * kRulFeatures, 0);
  sf.edges = decile_edges(std::move(proj));
  return sf;
}

nlohmann::ordered_json featurizer_to_json(const StateFeaturizer& f) {
  nlohmann::ordered_json j;
  j["trailing"] = f.trailing;
  j["mean"] = f.pca.mean;
  j["components"] = f.pca.components;
  j["eigenvalues"] = f.pca.eigenvalues;
  j["total_variance"] = f.pca.total_variance;
  j["edges"] = f.edges;
  return j;
}

StateFeaturizer featurizer_from_json(const nlohmann::json& j) {
  try {
    StateFeaturizer f;
    f.trailing = j.at("trailing").get<std::size_t>();
    f.pca.mean = j.at("mean").get<std::vector<double>>();
    f.pca.components = j.at("components").get<std::vector<std::vector<double>>>();
    f.pca.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    f.pca.total_variance = j.at("total_variance").get<double>();
    f.edges = j.at("edges").get<std::vector<double>>();
    if (f.edges.size() != kHealthStates - 1) throw DataError("featurizer must have 9 bin edges");
    if (f.pca.components.empty()) throw DataError("featurizer has no components");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed featurizer document: ") + e.what());
  }
}

}  // namespace rulmdp
