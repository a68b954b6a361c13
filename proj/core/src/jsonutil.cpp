#include "json_detail.hpp"

#include <cmath>
#include <string>

#include "obsflow/errors.hpp"

namespace obsflow::detail {

void require_keys(const json& obj, std::initializer_list<const char*> allowed,
                  const char* where) {
  if (!obj.is_object())
    throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError(std::string(where) + ": unknown key \"" + item.key() + "\"");
  }
}

const json& require(const json& obj, const char* key, const char* where) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ConfigError(std::string(where) + ": missing key \"" + key + "\"");
  return *it;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::vector<std::size_t> index_list(const json& j, const char* where) {
  if (!j.is_array()) throw ConfigError(std::string(where) + ": expected an array");
  std::vector<std::size_t> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError(std::string(where) + ": indices must be non-negative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

double positive_number(const json& j, const char* what, const char* where) {
  if (!j.is_number())
    throw ConfigError(std::string(where) + ": " + what + " must be a number");
  return j.get<double>();
}

}  // namespace

json system_to_json(const dynsys::SystemSpec& s) {
  json j;
  switch (s.kind) {
    case dynsys::SystemKind::L63:
      j["kind"] = "l63";
      j["params"] = {{"sigma", s.params[0]}, {"rho", s.params[1]}, {"beta", s.params[2]}};
      break;
    case dynsys::SystemKind::L96:
      j["kind"] = "l96";
      j["params"] = {{"F", s.params[0]}, {"d", static_cast<long>(s.params[1])}};
      break;
    case dynsys::SystemKind::KS:
      j["kind"] = "ks";
      j["params"] = {{"L", s.params[0]}, {"n", static_cast<long>(s.params[1])}};
      break;
  }
  j["p"] = s.p_indices;
  j["q"] = s.q_indices;
  return j;
}

dynsys::SystemSpec system_from_json(const json& j, const char* where) {
  require_keys(j, {"kind", "params", "p", "q"}, where);
  const std::string kind = require(j, "kind", where).get<std::string>();
  const json& params = require(j, "params", where);
  auto p = index_list(require(j, "p", where), where);
  auto q = index_list(require(j, "q", where), where);

  dynsys::SystemSpec s;
  if (kind == "l63") {
    require_keys(params, {"sigma", "rho", "beta"}, where);
    s = dynsys::make_l63(std::move(p), std::move(q),
                         positive_number(require(params, "sigma", where), "sigma", where),
                         positive_number(require(params, "rho", where), "rho", where),
                         positive_number(require(params, "beta", where), "beta", where));
  } else if (kind == "l96") {
    require_keys(params, {"F", "d"}, where);
    const json& d = require(params, "d", where);
    if (!d.is_number_integer() || d.get<long long>() < 1)
      throw ConfigError(std::string(where) + ": d must be a positive integer");
    s = dynsys::make_l96(d.get<std::size_t>(),
                         positive_number(require(params, "F", where), "F", where),
                         std::move(p), std::move(q));
  } else if (kind == "ks") {
    require_keys(params, {"L", "n"}, where);
    const json& n = require(params, "n", where);
    if (!n.is_number_integer() || n.get<long long>() < 1)
      throw ConfigError(std::string(where) + ": n must be a positive integer");
    s = dynsys::make_ks(n.get<std::size_t>(),
                        positive_number(require(params, "L", where), "L", where),
                        std::move(p), std::move(q));
  } else {
    throw ConfigError(std::string(where) + ": unknown system kind \"" + kind + "\"");
  }
  s.validate();
  return s;
}

json task_to_json(const data::TaskSpec& t) {
  json j;
  j["task"] = data::to_string(t.task);
  j["system"] = system_to_json(t.system);
  j["input_window"] = {t.input_t0, t.input_t1};
  j["output_window"] = {t.output_t0, t.output_t1};
  j["dt"] = t.dt;
  j["burn_in"] = t.burn_in;
  if (t.filter_modes) j["filter_modes"] = *t.filter_modes;
  return j;
}

data::TaskSpec task_from_json(const json& j, const char* where) {
  require_keys(j,
               {"task", "system", "input_window", "output_window", "dt", "burn_in",
                "filter_modes"},
               where);
  data::TaskSpec t;
  t.task = data::task_kind_from_string(require(j, "task", where).get<std::string>());
  t.system = system_from_json(require(j, "system", where), where);

  auto window = [&](const char* key, double& a, double& b) {
    const json& w = require(j, key, where);
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
      throw ConfigError(std::string(where) + ": " + key + " must be [t0, t1]");
    a = w[0].get<double>();
    b = w[1].get<double>();
  };
  window("input_window", t.input_t0, t.input_t1);
  window("output_window", t.output_t0, t.output_t1);

  t.dt = positive_number(require(j, "dt", where), "dt", where);
  t.burn_in = positive_number(require(j, "burn_in", where), "burn_in", where);
  if (auto it = j.find("filter_modes"); it != j.end()) {
    if (!it->is_number_integer())
      throw ConfigError(std::string(where) + ": filter_modes must be an integer");
    t.filter_modes = it->get<int>();
  }
  t.validate();
  return t;
}

json model_to_json(const nop::ModelConfig& c) {
  json j;
  j["arch"] = c.arch == nop::Arch::SelfAttnStack ? "self_attn_stack" : "encoder_decoder";
  j["layers"] = c.layers;
  j["channels"] = c.channels;
  j["heads"] = c.heads;
  j["mlp_hidden"] = c.mlp_hidden;
  j["activation"] = c.activation == nop::Activation::Gelu ? "gelu" : "tanh";
  j["d_in"] = c.d_in;
  j["d_out"] = c.d_out;
  j["input_len"] = c.input_len;
  j["output_len"] = c.output_len;
  j["layernorm"] = c.use_layernorm;
  j["in_shift"] = c.in_shift;
  j["in_scale"] = c.in_scale;
  j["out_shift"] = c.out_shift;
  j["out_scale"] = c.out_scale;
  return j;
}

namespace {

int positive_int(const json& j, const char* what, const char* where) {
  if (!j.is_number_integer() || j.get<long long>() < 1)
    throw ConfigError(std::string(where) + ": " + what + " must be a positive integer");
  return j.get<int>();
}

std::vector<double> number_list(const json& j, const char* what, const char* where) {
  if (!j.is_array()) throw ConfigError(std::string(where) + ": " + what + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number())
      throw ConfigError(std::string(where) + ": " + what + " entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

nop::ModelConfig model_from_json(const json& j, const char* where) {
  require_keys(j,
               {"arch", "layers", "channels", "heads", "mlp_hidden", "activation", "d_in",
                "d_out", "input_len", "output_len", "layernorm", "in_shift", "in_scale",
                "out_shift", "out_scale"},
               where);
  nop::ModelConfig c;

  const std::string arch = require(j, "arch", where).get<std::string>();
  if (arch == "self_attn_stack")
    c.arch = nop::Arch::SelfAttnStack;
  else if (arch == "encoder_decoder")
    c.arch = nop::Arch::EncoderDecoder;
  else
    throw ConfigError(std::string(where) + ": unknown arch \"" + arch + "\"");

  c.layers = positive_int(require(j, "layers", where), "layers", where);
  c.channels = positive_int(require(j, "channels", where), "channels", where);
  c.heads = positive_int(require(j, "heads", where), "heads", where);
  c.mlp_hidden = positive_int(require(j, "mlp_hidden", where), "mlp_hidden", where);

  const std::string act = require(j, "activation", where).get<std::string>();
  if (act == "gelu")
    c.activation = nop::Activation::Gelu;
  else if (act == "tanh")
    c.activation = nop::Activation::Tanh;
  else
    throw ConfigError(std::string(where) + ": unknown activation \"" + act + "\"");

  c.d_in = positive_int(require(j, "d_in", where), "d_in", where);
  c.d_out = positive_int(require(j, "d_out", where), "d_out", where);
  c.input_len = positive_int(require(j, "input_len", where), "input_len", where);
  c.output_len = positive_int(require(j, "output_len", where), "output_len", where);

  if (auto it = j.find("layernorm"); it != j.end()) {
    if (!it->is_boolean())
      throw ConfigError(std::string(where) + ": layernorm must be a boolean");
    c.use_layernorm = it->get<bool>();
  }
  auto opt_vec = [&](const char* key, std::vector<double>& dst) {
    if (auto it = j.find(key); it != j.end()) dst = number_list(*it, key, where);
  };
  opt_vec("in_shift", c.in_shift);
  opt_vec("in_scale", c.in_scale);
  opt_vec("out_shift", c.out_shift);
  opt_vec("out_scale", c.out_scale);

  c.validate();
  return c;
}

}  // namespace obsflow::detail
