#include "gcrl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace gcrl {
namespace {

struct Binding {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) throw ConfigError("not a number: '" + s + "'");
  return v;
}

template <typename I>
I to_int(const std::string& s) {
  I v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

template <typename T>
Binding num(const char* key, T ExperimentConfig::*field) {
  return {key,
          [field](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) c.*field = to_double(v);
            else c.*field = to_int<T>(v);
          },
          [field](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*field);
            else return std::to_string(c.*field);
          }};
}

template <typename S, typename T>
Binding nested(const char* key, S ExperimentConfig::*outer, T S::*field) {
  return {key,
          [outer, field](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) (c.*outer).*field = to_bool(v);
            else if constexpr (std::is_floating_point_v<T>) (c.*outer).*field = to_double(v);
            else (c.*outer).*field = to_int<T>(v);
          },
          [outer, field](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, bool>) return from_bool((c.*outer).*field);
            else if constexpr (std::is_floating_point_v<T>) return format_double((c.*outer).*field);
            else return std::to_string((c.*outer).*field);
          }};
}

Binding text(const char* key, std::string ExperimentConfig::*field) {
  return {key, [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
          [field](const ExperimentConfig& c) { return c.*field; }};
}

Binding list(const char* key, std::vector<double> ExperimentConfig::*field) {
  return {key, [field](ExperimentConfig& c, const std::string& v) { c.*field = parse_double_list(v); },
          [field](const ExperimentConfig& c) { return join(c.*field); }};
}

const std::vector<Binding>& bindings() {
  using E = ExperimentConfig;
  static const std::vector<Binding> b = {
      num("seed", &E::seed),
      text("data_dir", &E::data_dir),
      list("train_msd", &E::train_msd),
      num("test_msd", &E::test_msd),
      text("manifest", &E::manifest),
      text("test_env", &E::test_env),
      list("train_alpha", &E::train_alpha),
      num("noise_window", &E::noise_window),
      nested("sim.n_agents", &E::sim, &SimConfig::n_agents),
      nested("sim.radius", &E::sim, &SimConfig::radius),
      nested("sim.speed", &E::sim, &SimConfig::speed),
      nested("sim.dt", &E::sim, &SimConfig::dt),
      nested("sim.jitter_deg", &E::sim, &SimConfig::jitter_deg),
      nested("sim.max_steps", &E::sim, &SimConfig::max_steps),
      nested("count_train", &E::sim, &SimConfig::count_train),
      nested("count_val", &E::sim, &SimConfig::count_val),
      nested("count_test", &E::sim, &SimConfig::count_test),
      {"coord_mode", [](E& c, const std::string& v) { c.model.coord_mode = parse_coord_mode(v); },
       [](const E& c) { return to_string(c.model.coord_mode); }},
      nested("hidden", &E::model, &ModelConfig::hidden),
      nested("s_dim", &E::model, &ModelConfig::d_s),
      nested("z_dim", &E::model, &ModelConfig::d_z),
      nested("n_cluster", &E::model, &ModelConfig::n_cluster),
      nested("coupling_priors", &E::model, &ModelConfig::coupling_priors),
      nested("flow_layers", &E::model, &ModelConfig::flow_layers),
      nested("flow_hidden", &E::model, &ModelConfig::flow_hidden),
      nested("decoder_hidden", &E::model, &ModelConfig::decoder_hidden),
      nested("recon_hidden", &E::model, &ModelConfig::recon_hidden),
      nested("leaky_slope", &E::model, &ModelConfig::leaky_slope),
      {"latents", [](E& c, const std::string& v) { c.model.latents = parse_latent_use(v); },
       [](const E& c) { return to_string(c.model.latents); }},
      nested("learn_output_var", &E::model, &ModelConfig::learn_output_var),
      {"loss_mode", [](E& c, const std::string& v) { c.loss.mode = parse_loss_mode(v); },
       [](const E& c) { return to_string(c.loss.mode); }},
      nested("n_samples_qy", &E::loss, &LossConfig::n_samples_qy),
      nested("n_samples_sz", &E::loss, &LossConfig::n_samples_sz),
      nested("variety_n", &E::loss, &LossConfig::variety_n),
      nested("use_recon", &E::loss, &LossConfig::use_recon),
      nested("weight_min", &E::loss, &LossConfig::weight_min),
      nested("weight_max", &E::loss, &LossConfig::weight_max),
      {"lr_schedule", [](E& c, const std::string& v) { c.schedule = ng::parse_schedule_kind(v); },
       [](const E& c) { return ng::to_string(c.schedule); }},
      num("lr", &E::lr),
      num("peak_lr", &E::peak_lr),
      num("epochs", &E::epochs),
      num("batch_size", &E::batch_size),
      num("val_n", &E::val_n),
      num("eval_n", &E::eval_n),
      num("adapt_batches", &E::adapt_batches),
      text("adapt_scope", &E::adapt_scope),
      num("adapt_epochs", &E::adapt_epochs),
      num("adapt_lr", &E::adapt_lr),
      {"eval_latents",
       [](E& c, const std::string& v) {
         if (v == "posterior") c.eval_source = LatentSource::kPosterior;
         else if (v == "prior") c.eval_source = LatentSource::kPrior;
         else throw ConfigError("eval_latents must be posterior or prior");
       },
       [](const E& c) { return std::string(c.eval_source == LatentSource::kPrior ? "prior" : "posterior"); }},
  };
  return b;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, p);
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item)));
  return out;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    loss.validate();
    if (manifest.empty()) {
      sim.validate();
      if (train_msd.empty()) throw ConfigError("train_msd must list at least one domain");
      for (double m : train_msd) {
        if (!(m > 0.0)) throw ConfigError("msd values must be positive");
      }
    } else if (test_env.empty()) {
      throw ConfigError("manifest mode needs test_env");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (double a : train_alpha) {
    if (!(a > 0.0)) throw ConfigError("noise alpha must be positive");
  }
  if (model.noise_channel != !train_alpha.empty()) {
    throw ConfigError("noise channel flag and train_alpha disagree");
  }
  if (noise_window < 1) throw ConfigError("noise_window must be >= 1");
  if (!(lr > 0.0) || !(peak_lr > 0.0) || !(adapt_lr > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (epochs < 1 || batch_size < 1 || val_n < 1 || eval_n < 1) {
    throw ConfigError("epochs, batch_size, val_n and eval_n must be >= 1");
  }
  if (adapt_batches < 0 || adapt_epochs < 0) throw ConfigError("adaptation counts must be >= 0");
  if (adapt_scope != "adaptable" && adapt_scope != "gmm-weights-only") {
    throw ConfigError("adapt_scope must be adaptable or gmm-weights-only");
  }
}

void apply_profile(ExperimentConfig& cfg, const std::string& profile) {
  if (profile == "synthetic") {
    cfg.sim.count_train = 10000;
    cfg.sim.count_val = 3000;
    cfg.sim.count_test = 5000;
    cfg.epochs = 250;
  } else if (profile == "desk") {
    cfg.sim.count_train = 1000;
    cfg.sim.count_val = 200;
    cfg.sim.count_test = 500;
    cfg.epochs = 60;
  } else if (profile == "eth") {
    cfg.model.coord_mode = CoordMode::kRelative;
    cfg.model.hidden = 64;
    cfg.model.d_s = 8;
    cfg.model.d_z = 8;
    cfg.loss.mode = LossMode::kFull;
    cfg.loss.n_samples_qy = 10;
    cfg.loss.n_samples_sz = 10;
    cfg.schedule = ng::ScheduleKind::kOneCycle;
    cfg.peak_lr = 1e-2;
    cfg.lr = cfg.peak_lr / 25.0;
    cfg.epochs = 300;
    cfg.eval_n = 20;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (synthetic, desk, eth)");
  }
  cfg.profile = profile;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "profile") {
    apply_profile(cfg, value);
    return;
  }
  for (const auto& b : bindings()) {
    if (key == b.key) {
      try {
        b.set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
      }
      cfg.model.noise_channel = !cfg.train_alpha.empty();
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out{"profile"};
  for (const auto& b : bindings()) out.emplace_back(b.key);
  return out;
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  std::string profile;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "profile") profile = value;
    else entries.emplace_back(std::move(key), std::move(value));
  }
  ExperimentConfig cfg;
  if (!profile.empty()) apply_profile(cfg, profile);
  for (const auto& [k, v] : entries) {
    try {
      set_key(cfg, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out = "profile=" + cfg.profile + "\n";
  for (const auto& b : bindings()) out += std::string(b.key) + "=" + b.get(cfg) + "\n";
  return out;
}

}  // namespace gcrl
