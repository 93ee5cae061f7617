#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "odergru/config.hpp"
#include "odergru/errors.hpp"

using namespace odergru;

namespace {

Json minimal() {
  return Json::parse(R"({"data": {"synth": {"n_per_class": 4, "length": 6, "channels": 3, "classes": 2}}})");
}

std::string config_error(const Json& doc) {
  try {
    parse_run_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("embedded schema matches the published file") {
  std::ifstream in(std::filesystem::path(ODERGRU_SOURCE_DIR) / "docs" / "config.schema.json");
  const std::string file((std::istreambuf_iterator<char>(in)), {});
  CHECK(Json::parse(file) == Json::parse(config_schema_text()));
}

TEST_CASE("schema validator subset") {
  const Json schema = Json::parse(R"({
    "type": "object", "additionalProperties": false, "required": ["a"],
    "properties": {
      "a": {"type": "integer", "minimum": 1, "maximum": 5},
      "b": {"type": "array", "minItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}},
      "c": {"enum": ["x", "y"]},
      "d": {"type": "string", "minLength": 1}
    }})");
  CHECK_FALSE(schema_violation(Json::parse(R"({"a": 3, "b": [1, 2.5], "c": "x", "d": "q"})"), schema));
  CHECK(*schema_violation(Json::parse(R"({})"), schema) == "/: missing required field 'a'");
  CHECK(schema_violation(Json::parse(R"({"a": 0})"), schema)->starts_with("/a:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1.5})"), schema)->starts_with("/a:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1, "b": [1]})"), schema)->starts_with("/b:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1, "b": [1, 0]})"), schema)->starts_with("/b/1:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1, "c": "z"})"), schema)->starts_with("/c:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1, "d": ""})"), schema)->starts_with("/d:"));
  CHECK(schema_violation(Json::parse(R"({"a": 1, "e": 1})"), schema)->starts_with("/e: unknown field"));
}

TEST_CASE("parse_run_config") {
  const RunConfig rc = parse_run_config(minimal());
  REQUIRE(rc.data.synth);
  CHECK(rc.data.synth->n_per_class == 4);
  CHECK(rc.model.encoder.input_channels == 3);
  CHECK(rc.model.classes == 2);
  CHECK(rc.model.hidden_dim() == 4);
  CHECK(rc.train.lr == 1e-4);
  CHECK(rc.train.l2 == 1e-3);
  CHECK(rc.train.batch == 32);
  CHECK(rc.threads == 1);

  Json j = minimal();
  j["data"]["csv"] = Json::object();
  CHECK(config_error(j).find("/data/csv") != std::string::npos);
  CHECK(config_error(j).find("path") != std::string::npos);

  j = minimal();
  j["data"].erase("synth");
  CHECK_FALSE(config_error(j).empty());

  j = minimal();
  j["train"] = {{"lr", -1.0}};
  CHECK(config_error(j).find("/train/lr") != std::string::npos);

  j = minimal();
  j["model"] = {{"encoder", {{"mode", "sideways"}}}};
  CHECK(config_error(j).find("/model/encoder/mode") != std::string::npos);

  j = minimal();
  j["model"] = {{"task", "imputation"}};
  CHECK(parse_run_config(j).train.loss == LossKind::mse);
}

TEST_CASE("model config JSON round trip") {
  Json j = minimal();
  j["model"] = Json::parse(R"({
    "task": "forecasting", "horizon": 3, "hidden_dim": 5,
    "encoder": {"mode": "windowed", "window_len": 4, "stride": 2,
                "layers": [{"out_channels": 6, "kernel": 2, "pool": false}, {"out_channels": 5, "kernel": 2, "leaky": false}]},
    "rgru": {"candidate": "sigmoid"},
    "field": {"hidden": [7, 7]},
    "ode": {"n_steps": 9, "backward": "adjoint", "enabled": true}})");
  const RunConfig rc = parse_run_config(j);
  const ModelConfig back = model_config_from_json(model_config_to_json(rc.model));
  CHECK(model_config_to_json(back) == model_config_to_json(rc.model));
  CHECK(back.task == Task::forecasting);
  CHECK(back.ode.backward == OdeBackward::adjoint);
  CHECK(back.field.hidden == std::vector<std::size_t>{7, 7});
  CHECK(back.encoder.layers.size() == 2);
  CHECK(back.rgru.dim == 5);
}

TEST_CASE("materialize and hashing") {
  Json j = minimal();
  j["data"]["drop"] = {{"fraction", 0.5}, {"seed", 3}};
  const RunConfig rc = parse_run_config(j);
  DropReport rep;
  const Dataset ds = materialize(rc.data, &rep);
  CHECK(rep.cells_dropped > 0);
  CHECK(ds == materialize(rc.data));
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("load_run_config errors") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  const auto p = std::filesystem::temp_directory_path() / "odergru_bad.json";
  std::ofstream(p) << "{ not json";
  CHECK_THROWS_AS(load_run_config(p), ConfigError);
  std::filesystem::remove(p);
}
