#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rulmdp/tensor.hpp"

namespace rulmdp {

inline constexpr std::size_t kOpSettings = 3;
inline constexpr std::size_t kSensors = 21;
inline constexpr std::size_t kRawFeatures = kOpSettings + kSensors;
inline constexpr std::size_t kCmapssColumns = 2 + kRawFeatures;
inline constexpr double kDefaultRulCap = 125.0;
inline constexpr std::size_t kDefaultWindowLen = 30;

struct CycleRecord {
  std::uint32_t unit_id = 0;
  std::uint32_t cycle = 0;
  std::array<double, kOpSettings> op_settings{};
  std::array<double, kSensors> sensors{};

  // Raw feature i: settings first, then sensors.
  double feature(std::size_t i) const { return i < kOpSettings ? op_settings[i] : sensors[i - kOpSettings]; }
  double& feature(std::size_t i) { return i < kOpSettings ? op_settings[i] : sensors[i - kOpSettings]; }

  friend bool operator==(const CycleRecord&, const CycleRecord&) = default;
};

struct UnitSeries {
  std::uint32_t unit_id = 0;
  std::vector<CycleRecord> records;  // cycles 1..failure_cycle in order
  std::uint32_t failure_cycle = 0;

  std::size_t length() const noexcept { return records.size(); }
  friend bool operator==(const UnitSeries&, const UnitSeries&) = default;
};

struct RulWindow {
  Tensor inputs;  // [window_len x feature_dim], normalized
  double target_rul = 0.0;
  std::uint32_t unit_id = 0;
  std::uint32_t end_cycle = 0;
  bool padded = false;  // left-padded by repeating the unit's first record
};

struct NormStats {
  std::vector<std::size_t> retained;  // raw feature indices kept, ascending
  std::vector<double> mean;           // per retained feature
  std::vector<double> stddev;         // per retained feature, > 0
  std::vector<std::size_t> dropped;   // zero-variance raw feature indices

  std::size_t feature_dim() const noexcept { return retained.size(); }
};

// Whitespace-separated 26-column records (unit, cycle, 3 settings, 21 sensors).
// Units are returned in order of first appearance.
std::vector<UnitSeries> parse_cmapss(std::istream& in);
std::vector<UnitSeries> parse_cmapss_text(std::string_view text);
std::vector<UnitSeries> load_cmapss(const std::filesystem::path& path);
std::string write_cmapss(const std::vector<UnitSeries>& units);

// Piecewise-linear label: min(rul_cap, failure_cycle - cycle).
double piecewise_rul(std::uint32_t failure_cycle, std::uint32_t cycle, double rul_cap);
std::vector<std::pair<std::uint32_t, double>> label_rul(const UnitSeries& series, double rul_cap);

NormStats fit_normalizer(const std::vector<UnitSeries>& train_units);
// [length x feature_dim] z-scored retained features.
Tensor apply_normalizer(const UnitSeries& series, const NormStats& stats);
// Inverse of apply_normalizer on retained features.
Tensor denormalize(const Tensor& normalized, const NormStats& stats);

std::vector<RulWindow> make_windows(const UnitSeries& series, const NormStats& stats, std::size_t window_len,
                                    double rul_cap);
std::vector<RulWindow> make_windows(const std::vector<UnitSeries>& units, const NormStats& stats,
                                    std::size_t window_len, double rul_cap);

nlohmann::ordered_json norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& doc);

// CSV with header `unit_id,end_cycle,target_rul,x0_0,...` (features flattened row-major).
std::string windows_to_csv(const std::vector<RulWindow>& windows);
std::vector<RulWindow> windows_from_csv(std::string_view text);

}  // namespace rulmdp
