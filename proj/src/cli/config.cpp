#include "lfm/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lfm/core/error.hpp"

namespace lfm::cli {
namespace {

Json sweep_grid(double lo, double step, int count) {
  Json a = Json::array();
  for (int i = 0; i < count; ++i) a.push_back(std::round((lo + step * i) * 10.0) / 10.0);
  return a;
}

std::string type_name(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool is_integral(const Json& v) {
  if (v.is_number_integer()) return true;
  if (!v.is_number_float()) return false;
  const double d = v.get<double>();
  return std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e15;
}

// Checks `value` against the type of `def` and returns it normalized
// (fractional-free floats given for integer keys become integers).
Json check_value(const std::string& key, const Json& def, const Json& value) {
  const auto fail = [&] {
    return ConfigError("config key " + key + ": expected " + type_name(def) + ", got " + type_name(value));
  };
  if (def.is_boolean()) {
    if (!value.is_boolean()) throw fail();
    return value;
  }
  if (def.is_number_unsigned() || def.is_number_integer()) {
    if (!is_integral(value)) throw fail();
    const auto i = static_cast<std::int64_t>(value.get<double>());
    if (def.is_number_unsigned() && i < 0) throw ConfigError("config key " + key + ": must be non-negative");
    if (def.is_number_unsigned()) return Json(static_cast<std::uint64_t>(i));
    return Json(i);
  }
  if (def.is_number_float()) {
    if (!value.is_number()) throw fail();
    return Json(value.get<double>());
  }
  if (def.is_string()) {
    if (!value.is_string()) throw fail();
    return value;
  }
  if (def.is_array()) {
    if (!value.is_array()) throw fail();
    // Arrays are typed by their documented element kind.
    static const std::string kStringArrays[] = {"metrics.fields"};
    static const std::string kIntArrays[] = {"surrogate.hidden"};
    Json out = Json::array();
    for (const auto& e : value) {
      bool want_string = false, want_int = false;
      for (const auto& k : kStringArrays) want_string = want_string || k == key;
      for (const auto& k : kIntArrays) want_int = want_int || k == key;
      if (want_string) {
        if (!e.is_string()) throw ConfigError("config key " + key + ": elements must be strings");
        out.push_back(e);
      } else if (want_int) {
        if (!is_integral(e) || e.get<double>() < 0)
          throw ConfigError("config key " + key + ": elements must be non-negative integers");
        out.push_back(static_cast<std::uint64_t>(e.get<double>()));
      } else {
        if (!e.is_number()) throw ConfigError("config key " + key + ": elements must be numbers");
        out.push_back(e.get<double>());
      }
    }
    return out;
  }
  throw fail();
}

}  // namespace

Json default_config() {
  Json c;
  c["seed"] = std::uint64_t{0};
  c["data"] = {
      {"dim", std::uint64_t{4096}},
      {"n", std::uint64_t{5000}},
      {"n_val", std::uint64_t{500}},
      {"components", std::uint64_t{2}},
      {"mean_scale", 0.3},
      {"component_scale", 0.03},
  };
  c["transport"] = {
      {"t_max", 0.999},
      {"steps", std::uint64_t{20}},
      {"sources", std::uint64_t{1000}},
      {"dominance_probes", std::uint64_t{2000}},
  };
  c["pruning"] = {
      {"criterion", "random"},
      {"pr", 0.5},
      {"k", std::uint64_t{24}},
      {"kmeans_iters", std::uint64_t{100}},
      {"mode", "auto"},
      {"direction", "auto"},
      {"global", false},
      {"kernel_features", std::uint64_t{1024}},
      {"kernel_bandwidth", 0.0},
  };
  c["surrogate"] = {
      {"time_embedding", std::uint64_t{32}},
      {"hidden", Json::array()},
      {"depth", std::uint64_t{3}},
      {"batch", std::uint64_t{64}},
      {"steps", std::uint64_t{2000}},
      {"lr", 0.01},
      {"momentum", 0.9},
      {"ema_decay", 0.995},
      {"grad_clip", 0.0},
      {"t_sampling", "continuous"},
      {"grid_k", std::uint64_t{21}},
      {"coupling", "random"},
      {"score_noise_paths", std::uint64_t{2}},
      {"score_timesteps", std::uint64_t{8}},
      {"score_two_pass", true},
      {"score_last_layer", false},
  };
  c["c2f"] = {
      {"t0_grid", sweep_grid(0.0, 0.1, 10)},
      {"steps", std::uint64_t{20}},
      {"coarse", "pruned"},
      {"coarse_criterion", "C_b"},
      {"coarse_pr", 0.5},
      {"remove_component", std::uint64_t{0}},
      {"fine", "full"},
      {"probes", std::uint64_t{200}},
      {"cost_coarse", 33.0},
      {"cost_fine", 675.0},
      {"finetune", false},
      {"lambda_v", 1.0},
      {"inversion_steps", std::uint64_t{20}},
  };
  c["metrics"] = {
      {"prs", sweep_grid(0.1, 0.1, 9)},
      {"path_sources", std::uint64_t{200}},
      {"lipschitz_points", std::uint64_t{11}},
      {"lipschitz_probes", std::uint64_t{8}},
      {"lipschitz_iters", std::uint64_t{20}},
      {"error_probes", std::uint64_t{64}},
      {"fields", Json::array({"surrogate.lfsm"})},
  };
  c["output"] = {{"dir", "out"}};
  return c;
}

Json resolve_config(const Json& user) {
  Json out = default_config();
  if (user.is_null()) return out;
  if (!user.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [section, body] : user.items()) {
    if (!out.contains(section)) throw ConfigError("config: unknown section " + section);
    Json& target = out[section];
    if (!target.is_object()) {
      target = check_value(section, target, body);
      continue;
    }
    if (!body.is_object()) throw ConfigError("config section " + section + ": expected object");
    for (const auto& [key, value] : body.items()) {
      const std::string name = section + "." + key;
      if (!target.contains(key)) throw ConfigError("config: unknown key " + name);
      target[key] = check_value(name, target[key], value);
    }
  }
  return out;
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override " + assignment + ": expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json patch;
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    patch[key] = value;
  } else {
    patch[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  // Validate against the defaults, then merge into the current config.
  const Json checked = resolve_config(patch);
  if (dot == std::string::npos) {
    config[key] = checked[key];
  } else {
    config[key.substr(0, dot)][key.substr(dot + 1)] = checked[key.substr(0, dot)][key.substr(dot + 1)];
  }
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json j = Json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

std::string defaults_table() {
  std::ostringstream out;
  const Json defaults = default_config();
  for (const auto& [section, body] : defaults.items()) {
    if (!body.is_object()) {
      out << section << " = " << body.dump() << "\n";
      continue;
    }
    for (const auto& [key, value] : body.items()) out << section << "." << key << " = " << value.dump() << "\n";
  }
  return out.str();
}

Rng module_rng(std::uint64_t master, const std::string& name) { return Rng(master, stream_id(name)); }

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace lfm::cli
