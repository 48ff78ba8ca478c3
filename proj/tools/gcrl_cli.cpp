// gcrl: generate | train | adapt | eval
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 non-finite loss,
// 4 partition violation, 5 missing inputs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "gcrl/checkpoint.hpp"
#include "gcrl/dataio.hpp"
#include "gcrl/experiment.hpp"

namespace fs = std::filesystem;
using namespace gcrl;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNonFinite = 3, kPartition = 4, kMissing = 5 };

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::string profile;
  std::vector<std::string> sets;
  std::string out = "runs/out";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key=value config file");
  app->add_option("--profile", c.profile, "synthetic | desk | eth");
  app->add_option("--set", c.sets, "override, key=value (repeatable)");
  app->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c, const std::string& base_text = {}) {
  ExperimentConfig cfg;
  if (!base_text.empty()) {
    std::istringstream in(base_text);
    cfg = parse_config(in, "checkpoint");
  } else if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw MissingInput("config file not found: " + c.config_path);
    cfg = load_config(c.config_path);
  }
  if (!c.profile.empty()) apply_profile(cfg, c.profile);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_snapshot(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.txt");
  os << to_text(cfg);
  if (!os) throw std::runtime_error("cannot write config snapshot in " + dir.string());
}

std::unique_ptr<GcrlModel> build_model(const ExperimentConfig& cfg) {
  return std::make_unique<GcrlModel>(cfg.model, derive_seed(cfg.seed, 1));
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw MissingInput("checkpoint not found: " + path);
  return load_checkpoint(path);
}

int cmd_generate(const Common& c, const std::vector<double>& msds) {
  ExperimentConfig cfg = resolve(c);
  std::vector<double> list = msds.empty() ? standard_msd_domains() : msds;
  for (double msd : list) {
    SimConfig sc = cfg.sim;
    sc.msd = msd;
    sc.validate();
    const fs::path dir = fs::path(cfg.data_dir) / domain_dir_name(msd);
    generate_domain(sc, cfg.seed, dir);
    std::cout << "wrote " << dir.string() << "\n";
  }
  write_snapshot(c.out, cfg);
  return kOk;
}

int cmd_train(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  Dataset data = load_dataset(cfg);
  auto model = build_model(cfg);
  const fs::path out(c.out);
  write_snapshot(out, cfg);
  std::ofstream loss(out / "loss.csv");
  loss.precision(10);
  write_loss_header(loss);
  auto result = train_model(*model, data.train, data.val, cfg, [&](const EpochLog& e) {
    write_loss_row(loss, e);
    loss.flush();
    std::cout << "epoch " << e.epoch << " total " << e.total << " val_ade " << e.val_ade << "\n";
  });
  save_checkpoint(out / "model.ckpt", capture(*model, to_text(cfg)));
  std::cout << "best epoch " << result.best_epoch << " val_ade " << result.best_val_ade << "\n";
  return kOk;
}

int cmd_adapt(const Common& c, const std::string& ckpt_path) {
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  ExperimentConfig cfg = resolve(c, ckpt.config_text);
  auto model = build_model(cfg);
  restore(*model, ckpt);
  const fs::path out(c.out);
  write_snapshot(out, cfg);
  auto scenes = load_domain_split(cfg, cfg.test_msd, Split::kTrain,
                                  static_cast<int>(cfg.train_msd.size()));
  std::ofstream loss(out / "adapt_loss.csv");
  loss.precision(10);
  write_loss_header(loss);
  auto r = adapt_model(*model, scenes, cfg, [&](const EpochLog& e) { write_loss_row(loss, e); });
  save_checkpoint(out / "adapted.ckpt", capture(*model, to_text(cfg)));
  std::cout << "updated scalars " << r.updated_scalars << ", z-branch hash " << std::hex
            << r.z_hash_after << std::dec << " (unchanged)\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, int best_of,
             const std::vector<double>& alphas, const std::vector<std::string>& mcc_pair,
             const std::string& mcc_mode) {
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  ExperimentConfig cfg = resolve(c, ckpt.config_text);
  if (best_of > 0) cfg.eval_n = best_of;
  auto model = build_model(cfg);
  restore(*model, ckpt);
  const fs::path out(c.out);
  write_snapshot(out, cfg);

  std::vector<MetricRow> rows;
  const int env_id = static_cast<int>(cfg.train_msd.size());
  const double msd = cfg.manifest.empty() ? cfg.test_msd : 0.0;
  auto emit = [&](std::vector<Scene> scenes, double alpha, const std::string& env) {
    Rng rng(derive_seed(cfg.seed, 404));
    auto r = best_of_n(*model, scenes, cfg.eval_n, rng, cfg.eval_source);
    rows.push_back({"ade", r.ade, env, alpha, msd, cfg.eval_n, cfg.seed});
    rows.push_back({"fde", r.fde, env, alpha, msd, cfg.eval_n, cfg.seed});
  };
  if (!alphas.empty()) {
    if (!cfg.model.noise_channel) throw ConfigError("--alpha needs a model trained with a noise channel");
    ExperimentConfig plain = cfg;
    plain.train_alpha.clear();
    plain.model.noise_channel = false;
    std::vector<Scene> clean = cfg.manifest.empty()
                                   ? load_domain_split(plain, cfg.test_msd, Split::kTest, env_id)
                                   : load_dataset(plain).test;
    for (double a : alphas) emit(with_noise(clean, {a}, cfg.noise_window), a, "test");
  } else {
    Dataset d = load_dataset(cfg);
    emit(d.test, 0.0, d.test_env);
  }

  if (!mcc_pair.empty()) {
    if (mcc_pair.size() != 2) throw ConfigError("--mcc takes two checkpoints");
    Dataset d = load_dataset(cfg);
    const MccMode mode = parse_mcc_mode(mcc_mode);
    LatentCodes codes[2];
    for (int k = 0; k < 2; ++k) {
      Checkpoint ck = read_checkpoint(mcc_pair[static_cast<std::size_t>(k)]);
      std::istringstream in(ck.config_text);
      ExperimentConfig kc = parse_config(in, mcc_pair[static_cast<std::size_t>(k)]);
      auto m = build_model(kc);
      restore(*m, ck);
      codes[k] = posterior_means(*m, d.test);
    }
    std::vector<std::string> warnings;
    const std::string tag = to_string(mode);
    rows.push_back({"mcc_s_" + tag, mcc(codes[0].s, codes[1].s, mode, &warnings), d.test_env, 0.0, msd, 0, cfg.seed});
    rows.push_back({"mcc_z_" + tag, mcc(codes[0].z, codes[1].z, mode, &warnings), d.test_env, 0.0, msd, 0, cfg.seed});
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  write_metrics_csv((out / "metrics.csv").string(), rows);
  write_metrics_header(std::cout);
  for (const auto& r : rows) write_metric_row(std::cout, r);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative causal representation learning for trajectory forecasting"};
  app.require_subcommand(1);

  Common gen_c, train_c, adapt_c, eval_c;
  std::vector<double> gen_msd;
  auto* gen = app.add_subcommand("generate", "write synthetic circle-crossing domains");
  add_common(gen, gen_c);
  gen->add_option("--msd", gen_msd, "domains to write (default 0.1..0.8)")->delimiter(',');

  auto* train = app.add_subcommand("train", "train a model, keep the best validation epoch");
  add_common(train, train_c);

  std::string adapt_ckpt;
  auto* adapt = app.add_subcommand("adapt", "fine-tune on a few batches of the test domain");
  add_common(adapt, adapt_c);
  adapt->add_option("--checkpoint", adapt_ckpt)->required();

  std::string eval_ckpt, mcc_mode = "weak";
  int best_of = 0;
  std::vector<double> alphas;
  std::vector<std::string> mcc_pair;
  auto* eval = app.add_subcommand("eval", "best-of-N ADE/FDE, alpha sweep, MCC");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--best-of", best_of, "N (default: eval_n)");
  eval->add_option("--alpha", alphas, "noise intensities to sweep")->delimiter(',');
  eval->add_option("--mcc", mcc_pair, "two checkpoints to compare")->expected(2);
  eval->add_option("--mode", mcc_mode, "weak | strong");

  // Shortcut flags become --set entries.
  struct Shortcut {
    const char* flag;
    const char* key;
  };
  const Shortcut shortcuts[] = {
      {"--seed", "seed"},           {"--data-dir", "data_dir"},       {"--epochs", "epochs"},
      {"--train-msd", "train_msd"}, {"--test-msd", "test_msd"},       {"--count-train", "count_train"},
      {"--count-val", "count_val"}, {"--count-test", "count_test"},   {"--batches", "adapt_batches"},
      {"--scope", "adapt_scope"},   {"--train-alpha", "train_alpha"}, {"--latents", "eval_latents"},
  };
  std::vector<std::pair<Common*, CLI::App*>> subs{{&gen_c, gen}, {&train_c, train}, {&adapt_c, adapt}, {&eval_c, eval}};
  for (auto& [common, sub] : subs) {
    for (const auto& s : shortcuts) {
      Common* target = common;
      const std::string key = s.key;
      sub->add_option_function<std::string>(
          s.flag, [target, key](const std::string& v) { target->sets.push_back(key + "=" + v); },
          "sets " + key);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(gen_c, gen_msd);
    if (*train) return cmd_train(train_c);
    if (*adapt) return cmd_adapt(adapt_c, adapt_ckpt);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, best_of, alphas, mcc_pair, mcc_mode);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ng::NumericError& e) {
    std::cerr << "non-finite loss: " << e.what() << "\n";
    return kNonFinite;
  } catch (const PartitionError& e) {
    std::cerr << "partition violation: " << e.what() << "\n";
    return kPartition;
  } catch (const MissingInput& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kMissing;
  } catch (const DataError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kMissing;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
