#include "odergru/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "odergru/errors.hpp"
#include "config_schema.inc"  // kConfigSchema, generated from docs/config.schema.json

namespace odergru {

const std::string& config_schema_text() {
  static const std::string text(kConfigSchema);
  return text;
}

namespace {

std::string child(const std::string& ptr, const std::string& key) { return ptr + "/" + key; }

bool type_ok(const Json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  if (type == "number") return v.is_number();
  if (type == "null") return v.is_null();
  return false;
}

std::optional<std::string> check(const Json& v, const Json& s, const std::string& ptr) {
  const std::string at = ptr.empty() ? "/" : ptr;
  if (s.contains("type")) {
    const std::string t = s["type"];
    if (!type_ok(v, t)) return at + ": expected " + t;
  }
  if (s.contains("enum")) {
    bool hit = false;
    for (const auto& e : s["enum"]) hit = hit || e == v;
    if (!hit) return at + ": must be one of " + s["enum"].dump();
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) return at + ": must be >= " + s["minimum"].dump();
    if (s.contains("maximum") && x > s["maximum"].get<double>()) return at + ": must be <= " + s["maximum"].dump();
    if (s.contains("exclusiveMinimum") && !(x > s["exclusiveMinimum"].get<double>()))
      return at + ": must be > " + s["exclusiveMinimum"].dump();
    if (s.contains("exclusiveMaximum") && !(x < s["exclusiveMaximum"].get<double>()))
      return at + ": must be < " + s["exclusiveMaximum"].dump();
  }
  if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s["minLength"].get<std::size_t>())
    return at + ": must not be empty";
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
      return at + ": needs at least " + s["minItems"].dump() + " items";
    if (s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i)
        if (auto e = check(v[i], s["items"], child(ptr, std::to_string(i)))) return e;
  }
  if (v.is_object()) {
    if (s.contains("required"))
      for (const auto& r : s["required"])
        if (!v.contains(r.get<std::string>())) return at + ": missing required field '" + r.get<std::string>() + "'";
    const Json props = s.value("properties", Json::object());
    const bool closed = s.contains("additionalProperties") && s["additionalProperties"] == false;
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (props.contains(it.key())) {
        if (auto e = check(it.value(), props[it.key()], child(ptr, it.key()))) return e;
      } else if (closed) {
        return child(ptr, it.key()) + ": unknown field";
      }
    }
  }
  return std::nullopt;
}

template <class E>
E enum_from(const Json& j, const char* key, E fallback, std::initializer_list<std::pair<const char*, E>> names) {
  if (!j.contains(key)) return fallback;
  const std::string s = j[key];
  for (auto& [n, e] : names)
    if (s == n) return e;
  throw ConfigError(std::string("unknown value '") + s + "' for " + key);
}

template <class E>
const char* enum_name(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (auto& [n, v] : names)
    if (v == e) return n;
  return "?";
}

constexpr std::initializer_list<std::pair<const char*, Task>> kTasks{
    {"classification", Task::classification}, {"forecasting", Task::forecasting}, {"imputation", Task::imputation}};
constexpr std::initializer_list<std::pair<const char*, EncoderMode>> kModes{{"windowed", EncoderMode::windowed},
                                                                            {"pointwise", EncoderMode::pointwise}};
constexpr std::initializer_list<std::pair<const char*, CandidateActivation>> kCands{
    {"softplus", CandidateActivation::softplus}, {"sigmoid", CandidateActivation::sigmoid}};
constexpr std::initializer_list<std::pair<const char*, OdeBackward>> kBackward{{"unrolled", OdeBackward::unrolled},
                                                                              {"adjoint", OdeBackward::adjoint}};
constexpr std::initializer_list<std::pair<const char*, LossKind>> kLoss{{"cross_entropy", LossKind::cross_entropy},
                                                                       {"mse", LossKind::mse}};

}  // namespace

std::optional<std::string> schema_violation(const Json& doc, const Json& schema) { return check(doc, schema, ""); }

Json model_config_to_json(const ModelConfig& c) {
  Json layers = Json::array();
  for (const auto& l : c.encoder.layers)
    layers.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"leaky", l.leaky}, {"pool", l.pool}});
  return {
      {"task", enum_name(c.task, kTasks)},
      {"classes", c.classes},
      {"horizon", c.horizon},
      {"hidden_dim", c.encoder.out_dim},
      {"input_channels", c.encoder.input_channels},
      {"freeze_encoder", c.freeze_encoder},
      {"encoder",
       {{"mode", enum_name(c.encoder.mode, kModes)},
        {"window_len", c.encoder.window_len},
        {"stride", c.encoder.stride},
        {"append_mask", c.encoder.append_mask},
        {"rho_min", c.encoder.rho_min},
        {"jitter_rel", c.encoder.jitter_rel},
        {"jitter_abs", c.encoder.jitter_abs},
        {"layers", layers}}},
      {"rgru",
       {{"positive_weight_diag", c.rgru.positive_weight_diag}, {"candidate", enum_name(c.rgru.candidate, kCands)}}},
      {"field", {{"hidden", c.field.hidden}, {"zero_output", c.field.zero_output}}},
      {"ode",
       {{"n_steps", c.ode.n_steps},
        {"solver", "euler_manifold"},
        {"backward", enum_name(c.ode.backward, kBackward)},
        {"time_scale", c.ode.time_scale},
        {"enabled", c.ode.enabled}}},
  };
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.task = enum_from(j, "task", c.task, kTasks);
  c.classes = j.value("classes", c.classes);
  c.horizon = j.value("horizon", c.horizon);
  c.encoder.out_dim = j.value("hidden_dim", std::size_t(4));
  c.encoder.input_channels = j.value("input_channels", c.encoder.input_channels);
  c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
  if (j.contains("encoder")) {
    const Json& e = j["encoder"];
    c.encoder.mode = enum_from(e, "mode", c.encoder.mode, kModes);
    c.encoder.window_len = e.value("window_len", c.encoder.window_len);
    c.encoder.stride = e.value("stride", c.encoder.stride);
    c.encoder.append_mask = e.value("append_mask", c.encoder.append_mask);
    c.encoder.rho_min = e.value("rho_min", c.encoder.rho_min);
    c.encoder.jitter_rel = e.value("jitter_rel", c.encoder.jitter_rel);
    c.encoder.jitter_abs = e.value("jitter_abs", c.encoder.jitter_abs);
    if (e.contains("layers")) {
      c.encoder.layers.clear();
      for (const auto& l : e["layers"]) {
        ConvLayerSpec s;
        s.out_channels = l.value("out_channels", s.out_channels);
        s.kernel = l.value("kernel", s.kernel);
        s.leaky = l.value("leaky", s.leaky);
        s.pool = l.value("pool", s.pool);
        c.encoder.layers.push_back(s);
      }
    }
  }
  c.rgru.dim = c.encoder.out_dim;
  if (j.contains("rgru")) {
    c.rgru.positive_weight_diag = j["rgru"].value("positive_weight_diag", c.rgru.positive_weight_diag);
    c.rgru.candidate = enum_from(j["rgru"], "candidate", c.rgru.candidate, kCands);
  }
  if (j.contains("field")) {
    c.field.hidden = j["field"].value("hidden", c.field.hidden);
    c.field.zero_output = j["field"].value("zero_output", c.field.zero_output);
  }
  if (j.contains("ode")) {
    const Json& o = j["ode"];
    c.ode.n_steps = o.value("n_steps", c.ode.n_steps);
    c.ode.backward = enum_from(o, "backward", c.ode.backward, kBackward);
    c.ode.time_scale = o.value("time_scale", c.ode.time_scale);
    c.ode.enabled = o.value("enabled", c.ode.enabled);
  }
  return c;
}

Json train_config_to_json(const TrainConfig& t) {
  return {{"lr", t.lr},       {"l2", t.l2},   {"batch", t.batch},
          {"max_iter", t.max_iter}, {"loss", enum_name(t.loss, kLoss)}, {"eval_every", t.eval_every}};
}

RunConfig parse_run_config(const Json& doc) {
  static const Json schema = Json::parse(config_schema_text());
  if (auto err = schema_violation(doc, schema)) throw ConfigError("config " + *err);

  RunConfig rc;
  rc.source = doc;
  rc.seed = doc.value("seed", std::uint64_t(0));
  rc.out = doc.value("out", std::string("run"));
  rc.threads = doc.value("threads", std::size_t(1));

  const Json data = doc.value("data", Json::object());
  if (data.contains("synth") == data.contains("csv"))
    throw ConfigError("config /data: exactly one of 'synth' or 'csv' is required");
  if (data.contains("synth")) {
    const Json& s = data["synth"];
    SynthSpec sp;
    sp.n_per_class = s.value("n_per_class", sp.n_per_class);
    sp.length = s.value("length", sp.length);
    sp.channels = s.value("channels", sp.channels);
    sp.classes = s.value("classes", sp.classes);
    sp.seed = s.value("seed", sp.seed);
    sp.sigma_obs = s.value("sigma_obs", sp.sigma_obs);
    sp.test_fraction = s.value("test_fraction", sp.test_fraction);
    sp.shared_endpoints = s.value("shared_endpoints", sp.shared_endpoints);
    rc.data.synth = sp;
  } else {
    const Json& c = data["csv"];
    rc.data.csv = std::filesystem::path(c["path"].get<std::string>());
    rc.data.csv_schema.seq_id = c.value("seq_id", rc.data.csv_schema.seq_id);
    rc.data.csv_schema.time = c.value("time", rc.data.csv_schema.time);
    rc.data.csv_schema.label = c.value("label", rc.data.csv_schema.label);
    rc.data.csv_schema.split = c.value("split", rc.data.csv_schema.split);
    rc.data.csv_schema.channel_prefix = c.value("channel_prefix", rc.data.csv_schema.channel_prefix);
  }
  if (data.contains("drop")) {
    rc.data.drop_fraction = data["drop"]["fraction"].get<double>();
    rc.data.drop_seed = data["drop"].value("seed", std::uint64_t(0));
  }

  rc.model = model_config_from_json(doc.value("model", Json::object()));
  if (rc.data.synth) {
    rc.model.encoder.input_channels = rc.data.synth->channels;
    if (rc.model.task == Task::classification && !doc.value("model", Json::object()).contains("classes"))
      rc.model.classes = rc.data.synth->classes;
  }

  const Json t = doc.value("train", Json::object());
  rc.train.lr = t.value("lr", rc.train.lr);
  rc.train.l2 = t.value("l2", rc.train.l2);
  rc.train.batch = t.value("batch", rc.train.batch);
  rc.train.max_iter = t.value("max_iter", rc.train.max_iter);
  rc.train.loss = enum_from(t, "loss", rc.model.task == Task::classification ? LossKind::cross_entropy : LossKind::mse,
                            kLoss);
  rc.train.eval_every = t.value("eval_every", rc.train.eval_every);
  rc.train.seed = rc.seed;
  rc.train.threads = rc.threads;

  if (doc.contains("bench")) {
    const Json& b = doc["bench"];
    rc.bench.dims = b.value("dims", rc.bench.dims);
    rc.bench.points = b.value("points", rc.bench.points);
    rc.bench.repeats = b.value("repeats", rc.bench.repeats);
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

Dataset materialize(const DataSpec& spec, DropReport* report) {
  Dataset ds = spec.synth ? synth_manifold_sequences(*spec.synth) : load_csv(*spec.csv, spec.csv_schema);
  if (spec.drop_fraction && *spec.drop_fraction > 0.0) ds = drop_observations(ds, *spec.drop_fraction, spec.drop_seed, report);
  return ds;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace odergru
