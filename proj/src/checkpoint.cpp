#include "rulmdp/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rulmdp/errors.hpp"

namespace rulmdp {

std::string format_double(double v, int digits) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string serialize_checkpoint(const nlohmann::ordered_json& config, const ParamSet& params) {
  std::ostringstream out;
  out << "{\n  \"format_version\": " << kCheckpointFormatVersion << ",\n";
  out << "  \"config\": " << config.dump() << ",\n";
  out << "  \"params\": {";
  bool first = true;
  for (const auto& [name, p] : params) {
    out << (first ? "\n" : ",\n");
    first = false;
    out << "    " << nlohmann::json(name).dump() << ": {\"shape\": [";
    for (std::size_t i = 0; i < p.value.shape().size(); ++i) out << (i ? ", " : "") << p.value.shape()[i];
    out << "], \"data\": [";
    for (std::size_t i = 0; i < p.value.size(); ++i) out << (i ? ", " : "") << format_double(p.value[i]);
    out << "]}";
  }
  out << "\n  }\n}\n";
  return out.str();
}

Checkpoint parse_checkpoint(std::string_view text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"] != kCheckpointFormatVersion)
    throw DataError("unsupported checkpoint format_version");
  if (!doc.contains("params") || !doc["params"].is_object()) throw DataError("checkpoint has no params object");
  Checkpoint ck;
  ck.config = doc.value("config", nlohmann::ordered_json::object());
  for (const auto& [name, entry] : doc["params"].items()) {
    try {
      Shape shape = entry.at("shape").get<Shape>();
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      ck.params.add(name, Tensor(std::move(shape), std::move(data)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint parameter '" + name + "' malformed: " + e.what());
    } catch (const ShapeError& e) {
      throw DataError("checkpoint parameter '" + name + "': " + e.what());
    }
  }
  return ck;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::ordered_json& config, const ParamSet& params) {
  write_file(path, serialize_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace rulmdp
