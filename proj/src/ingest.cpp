#include "rulmdp/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"

namespace rulmdp {

namespace {

bool parse_number(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string_view> split_char(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::uint32_t as_positive_int(double v, std::size_t line, const char* field) {
  if (v < 1.0 || v != std::floor(v) || v > 4294967295.0)
    throw ParseError(line, std::string(field) + " must be a positive integer");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<UnitSeries> parse_cmapss(std::istream& in) {
  std::vector<UnitSeries> units;
  std::map<std::uint32_t, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != kCmapssColumns)
      throw ParseError(lineno, "expected " + std::to_string(kCmapssColumns) + " fields, found " +
                                   std::to_string(toks.size()));
    std::array<double, kCmapssColumns> v{};
    for (std::size_t i = 0; i < kCmapssColumns; ++i)
      if (!parse_number(toks[i], v[i]))
        throw ParseError(lineno, "field " + std::to_string(i + 1) + " is not numeric: '" + std::string(toks[i]) + "'");
    CycleRecord rec;
    rec.unit_id = as_positive_int(v[0], lineno, "unit id");
    rec.cycle = as_positive_int(v[1], lineno, "cycle");
    for (std::size_t i = 0; i < kRawFeatures; ++i) rec.feature(i) = v[2 + i];

    auto [it, inserted] = index.try_emplace(rec.unit_id, units.size());
    if (inserted) units.push_back(UnitSeries{rec.unit_id, {}, 0});
    UnitSeries& u = units[it->second];
    const std::uint32_t expected = u.records.empty() ? 1 : u.records.back().cycle + 1;
    if (rec.cycle != expected)
      throw ParseError(lineno, "unit " + std::to_string(rec.unit_id) + " cycle " + std::to_string(rec.cycle) +
                                   " is not consecutive (expected " + std::to_string(expected) + ")");
    u.records.push_back(rec);
    u.failure_cycle = rec.cycle;
  }
  return units;
}

std::vector<UnitSeries> parse_cmapss_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_cmapss(in);
}

std::vector<UnitSeries> load_cmapss(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_cmapss(in);
}

std::string write_cmapss(const std::vector<UnitSeries>& units) {
  std::string out;
  for (const auto& u : units) {
    for (const auto& r : u.records) {
      out += std::to_string(r.unit_id);
      out += ' ';
      out += std::to_string(r.cycle);
      for (std::size_t i = 0; i < kRawFeatures; ++i) {
        out += ' ';
        out += format_double(r.feature(i));
      }
      out += '\n';
    }
  }
  return out;
}

double piecewise_rul(std::uint32_t failure_cycle, std::uint32_t cycle, double rul_cap) {
  return std::min(rul_cap, static_cast<double>(failure_cycle) - static_cast<double>(cycle));
}

std::vector<std::pair<std::uint32_t, double>> label_rul(const UnitSeries& series, double rul_cap) {
  if (!(rul_cap > 0.0)) throw ValidationError("rul_cap must be positive");
  std::vector<std::pair<std::uint32_t, double>> out;
  out.reserve(series.records.size());
  for (const auto& r : series.records) out.emplace_back(r.cycle, piecewise_rul(series.failure_cycle, r.cycle, rul_cap));
  return out;
}

NormStats fit_normalizer(const std::vector<UnitSeries>& train_units) {
  std::size_t n = 0;
  for (const auto& u : train_units) n += u.records.size();
  if (n < 2) throw DataError("normalizer needs at least 2 training records");
  NormStats stats;
  for (std::size_t f = 0; f < kRawFeatures; ++f) {
    double mean = 0.0;
    for (const auto& u : train_units)
      for (const auto& r : u.records) mean += r.feature(f);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& u : train_units)
      for (const auto& r : u.records) var += (r.feature(f) - mean) * (r.feature(f) - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      stats.dropped.push_back(f);
      continue;
    }
    stats.retained.push_back(f);
    stats.mean.push_back(mean);
    stats.stddev.push_back(sd);
  }
  if (stats.retained.empty()) throw DataError("every feature is constant on the training split");
  return stats;
}

Tensor apply_normalizer(const UnitSeries& series, const NormStats& stats) {
  if (series.records.empty()) throw DataError("unit " + std::to_string(series.unit_id) + " has no records");
  const std::size_t fd = stats.feature_dim();
  Tensor out({series.records.size(), fd});
  for (std::size_t t = 0; t < series.records.size(); ++t)
    for (std::size_t j = 0; j < fd; ++j)
      out(t, j) = (series.records[t].feature(stats.retained[j]) - stats.mean[j]) / stats.stddev[j];
  return out;
}

Tensor denormalize(const Tensor& normalized, const NormStats& stats) {
  if (normalized.cols() != stats.feature_dim()) throw ShapeError("denormalize: feature count mismatch");
  Tensor out = normalized;
  for (std::size_t t = 0; t < out.rows(); ++t)
    for (std::size_t j = 0; j < out.cols(); ++j) out(t, j) = out(t, j) * stats.stddev[j] + stats.mean[j];
  return out;
}

std::vector<RulWindow> make_windows(const UnitSeries& series, const NormStats& stats, std::size_t window_len,
                                    double rul_cap) {
  if (window_len < 1) throw ValidationError("window_len must be >= 1");
  const Tensor x = apply_normalizer(series, stats);
  const auto labels = label_rul(series, rul_cap);
  const std::size_t len = series.records.size();
  const std::size_t fd = stats.feature_dim();
  const bool pad = len < window_len;
  std::vector<RulWindow> out;
  for (std::size_t end = pad ? 0 : window_len - 1; end < len; ++end) {
    RulWindow w;
    w.inputs = Tensor({window_len, fd});
    for (std::size_t k = 0; k < window_len; ++k) {
      // Position k holds cycle index end - (window_len - 1 - k), clamped to the first record.
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(end) - static_cast<std::ptrdiff_t>(window_len - 1 - k);
      const std::size_t row = src < 0 ? 0 : static_cast<std::size_t>(src);
      std::copy_n(x.ptr() + row * fd, fd, w.inputs.ptr() + k * fd);
    }
    w.target_rul = std::max(0.0, labels[end].second);
    w.unit_id = series.unit_id;
    w.end_cycle = series.records[end].cycle;
    w.padded = pad;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<RulWindow> make_windows(const std::vector<UnitSeries>& units, const NormStats& stats,
                                    std::size_t window_len, double rul_cap) {
  std::vector<RulWindow> out;
  for (const auto& u : units) {
    auto w = make_windows(u, stats, window_len, rul_cap);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

nlohmann::ordered_json norm_stats_to_json(const NormStats& stats) {
  nlohmann::ordered_json j;
  j["retained"] = stats.retained;
  j["mean"] = stats.mean;
  j["stddev"] = stats.stddev;
  j["dropped"] = stats.dropped;
  return j;
}

NormStats norm_stats_from_json(const nlohmann::json& doc) {
  NormStats s;
  try {
    s.retained = doc.at("retained").get<std::vector<std::size_t>>();
    s.mean = doc.at("mean").get<std::vector<double>>();
    s.stddev = doc.at("stddev").get<std::vector<double>>();
    s.dropped = doc.at("dropped").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("normalizer stats malformed: ") + e.what());
  }
  if (s.mean.size() != s.retained.size() || s.stddev.size() != s.retained.size())
    throw DataError("normalizer stats have inconsistent lengths");
  for (double sd : s.stddev)
    if (!(sd > 0.0)) throw DataError("normalizer stats contain a non-positive stddev");
  return s;
}

std::string windows_to_csv(const std::vector<RulWindow>& windows) {
  std::string out = "unit_id,end_cycle,target_rul";
  if (!windows.empty()) {
    const std::size_t n = windows.front().inputs.rows(), f = windows.front().inputs.cols();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < f; ++j) out += ",x" + std::to_string(t) + "_" + std::to_string(j);
  }
  out += '\n';
  for (const auto& w : windows) {
    out += std::to_string(w.unit_id) + "," + std::to_string(w.end_cycle) + "," + format_double(w.target_rul);
    for (double v : w.inputs.data()) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<RulWindow> windows_from_csv(std::string_view text) {
  std::vector<RulWindow> out;
  std::size_t pos = 0, lineno = 0;
  std::size_t n = 0, f = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split_char(line, ',');
    if (lineno == 1) {
      if (cells.size() < 3 || cells[0] != "unit_id" || cells[1] != "end_cycle" || cells[2] != "target_rul")
        throw ParseError(lineno, "windows header must start with unit_id,end_cycle,target_rul");
      if (cells.size() > 3) {
        // Last column is x{n-1}_{f-1}.
        const std::string_view last = cells.back();
        const auto us = last.find('_');
        if (last.size() < 4 || last[0] != 'x' || us == std::string_view::npos)
          throw ParseError(lineno, "unrecognized feature column '" + std::string(last) + "'");
        n = std::stoul(std::string(last.substr(1, us - 1))) + 1;
        f = std::stoul(std::string(last.substr(us + 1))) + 1;
        if (n * f != cells.size() - 3) throw ParseError(lineno, "feature columns do not form a window_len x dim grid");
      }
      continue;
    }
    if (cells.size() != 3 + n * f)
      throw ParseError(lineno, "expected " + std::to_string(3 + n * f) + " cells, found " + std::to_string(cells.size()));
    if (n == 0) throw ParseError(lineno, "windows file has no feature columns");
    std::vector<double> vals(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (!parse_number(cells[i], vals[i])) throw ParseError(lineno, "cell " + std::to_string(i + 1) + " is not numeric");
    RulWindow w;
    w.unit_id = as_positive_int(vals[0], lineno, "unit_id");
    w.end_cycle = as_positive_int(vals[1], lineno, "end_cycle");
    w.target_rul = vals[2];
    w.padded = w.end_cycle < n;
    w.inputs = Tensor({n, f}, std::vector<double>(vals.begin() + 3, vals.end()));
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace rulmdp
