#pragma once

// Run configuration: a JSON document checked against the schema published
// in docs/config.schema.json before anything else happens.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odergru/data.hpp"
#include "odergru/model.hpp"

namespace odergru {

using Json = nlohmann::json;

/// The schema text compiled into the binary.
const std::string& config_schema_text();

/// Checks doc against a JSON-Schema subset (type, enum, properties,
/// required, additionalProperties, items, minItems, minLength, minimum,
/// maximum, exclusiveMinimum, exclusiveMaximum). Returns the first
/// violation as "<json pointer>: <message>", or nothing.
std::optional<std::string> schema_violation(const Json& doc, const Json& schema);

struct DataSpec {
  std::optional<SynthSpec> synth;
  std::optional<std::filesystem::path> csv;
  CsvSchema csv_schema;
  std::optional<double> drop_fraction;
  std::uint64_t drop_seed = 0;
};

struct BenchSpec {
  std::vector<std::size_t> dims{8, 16, 32, 64, 128};
  std::size_t points = 8;
  std::size_t repeats = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
  std::size_t threads = 1;
  DataSpec data;
  ModelConfig model;
  TrainConfig train;
  BenchSpec bench;
  Json source;  // the validated document, as read
};

/// Parses and validates. Throws ConfigError naming the offending field.
RunConfig parse_run_config(const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

Json model_config_to_json(const ModelConfig& cfg);
/// Missing fields take their defaults.
ModelConfig model_config_from_json(const Json& j);
Json train_config_to_json(const TrainConfig& cfg);

/// Loads (or generates) the dataset described by spec, applying the
/// optional drop corruption.
Dataset materialize(const DataSpec& spec, DropReport* report = nullptr);

/// FNV-1a 64 of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace odergru
