#pragma once

#include <vector>

#include <json.hpp>

#include "rulmdp/tensor.hpp"

namespace rulmdp {

inline constexpr std::size_t kHealthStates = 10;
inline constexpr std::size_t kRulFeatures = 3;
inline constexpr std::size_t kTrailingMean = 5;

// Per-step rows (predicted RUL, one-step difference, trailing mean) for one
// unit's prediction sequence. The first difference is 0. Returns [n x 3].
Tensor rul_features(const std::vector<double>& predicted_rul, std::size_t trailing = kTrailingMean);

struct Pca {
  std::vector<double> mean;                   // per input feature
  std::vector<std::vector<double>> components;  // p unit vectors, descending eigenvalue
  std::vector<double> eigenvalues;            // p leading eigenvalues of the sample covariance
  double total_variance = 0.0;

  std::size_t dim() const noexcept { return mean.size(); }
  double explained_variance_ratio(std::size_t k) const { return eigenvalues.at(k) / total_variance; }
  double project(const double* row, std::size_t k = 0) const;
};

// Top-p eigenvectors of the sample covariance of the rows of x. Each component
// is signed so its first nonzero coordinate is positive. Throws when fewer than
// p+1 rows are given or when p exceeds the numerical rank.
Pca fit_pca(const Tensor& x, std::size_t p);

// Linear-interpolation quantiles at 0.1..0.9, nudged upward where ties would
// make them non-increasing.
std::vector<double> decile_edges(std::vector<double> values);
// Number of edges <= value, in [0, edges.size()].
std::size_t bin_index(const std::vector<double>& edges, double value);

struct StateFeaturizer {
  Pca pca;
  std::vector<double> edges;  // 9 strictly increasing interior edges on component 0
  std::size_t trailing = kTrailingMean;

  // State in [0, 9]; higher is healthier because component 0 is oriented to
  // grow with predicted RUL.
  std::size_t discretize(const double* feature_row) const;
  std::vector<std::size_t> discretize_sequence(const std::vector<double>& predicted_rul) const;
};

// PCA on the stacked feature rows of every sequence, deciles of component 0.
StateFeaturizer fit_featurizer(const std::vector<std::vector<double>>& predicted_rul_per_unit,
                               std::size_t components = 2);

nlohmann::ordered_json featurizer_to_json(const StateFeaturizer& f);
StateFeaturizer featurizer_from_json(const nlohmann::json& j);

}  // namespace rulmdp
