#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "rulmdp/autodiff.hpp"

namespace rulmdp {

inline constexpr int kCheckpointFormatVersion = 1;

// Shortest "%.{digits}g" rendering; 17 digits round-trips every double.
std::string format_double(double v, int digits = 17);

struct Checkpoint {
  nlohmann::ordered_json config;
  ParamSet params;
};

// {format_version, config, params: {name: {shape, data}}} with parameters in
// lexicographic order and 17 significant digits per value.
std::string serialize_checkpoint(const nlohmann::ordered_json& config, const ParamSet& params);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::ordered_json& config, const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Whole-file helpers shared by the CLI and service.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace rulmdp
