#include "gcrl/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <ostream>

#include "gcrl/checkpoint.hpp"
#include "gcrl/dataio.hpp"

namespace gcrl {

std::vector<Scene> with_noise(const std::vector<Scene>& scenes, const std::vector<double>& alphas,
                              int window) {
  if (alphas.empty()) return scenes;
  std::vector<Scene> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out.push_back(add_noise_channel(scenes[i], {alphas[i % alphas.size()], window}));
  }
  return out;
}

std::vector<Scene> load_domain_split(const ExperimentConfig& cfg, double msd, Split split, int env_id) {
  const auto path = std::filesystem::path(cfg.data_dir) / domain_dir_name(msd) /
                    (std::string(split_name(split)) + ".tsv");
  if (!std::filesystem::exists(path)) throw DataError("missing dataset file " + path.string());
  auto scenes = load_scenes(path, env_id);
  if (cfg.train_alpha.empty()) return scenes;
  if (split == Split::kTrain) return with_noise(scenes, cfg.train_alpha, cfg.noise_window);
  const double top = *std::max_element(cfg.train_alpha.begin(), cfg.train_alpha.end());
  return with_noise(scenes, {top}, cfg.noise_window);
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  if (!cfg.manifest.empty()) {
    auto split = leave_one_out(load_manifest(cfg.manifest), cfg.test_env);
    d.train = std::move(split.train);
    d.val = std::move(split.val);
    d.test = std::move(split.test);
    d.train_envs = std::move(split.train_envs);
    d.test_env = split.test_env;
    if (!cfg.train_alpha.empty()) {
      const double top = *std::max_element(cfg.train_alpha.begin(), cfg.train_alpha.end());
      d.train = with_noise(d.train, cfg.train_alpha, cfg.noise_window);
      d.val = with_noise(d.val, {top}, cfg.noise_window);
      d.test = with_noise(d.test, {top}, cfg.noise_window);
    }
    return d;
  }
  for (std::size_t e = 0; e < cfg.train_msd.size(); ++e) {
    const double msd = cfg.train_msd[e];
    const int id = static_cast<int>(e);
    auto tr = load_domain_split(cfg, msd, Split::kTrain, id);
    auto va = load_domain_split(cfg, msd, Split::kVal, id);
    d.train.insert(d.train.end(), tr.begin(), tr.end());
    d.val.insert(d.val.end(), va.begin(), va.end());
    d.train_envs.push_back(domain_dir_name(msd));
  }
  d.test_env = domain_dir_name(cfg.test_msd);
  d.test = load_domain_split(cfg, cfg.test_msd, Split::kTest, static_cast<int>(cfg.train_msd.size()));
  return d;
}

void write_loss_header(std::ostream& os) { os << "epoch,pred,recon,kl_s,kl_z,total,lr,val_ade\n"; }

void write_loss_row(std::ostream& os, const EpochLog& r) {
  os << r.epoch << ',' << r.pred << ',' << r.recon << ',' << r.kl_s << ',' << r.kl_z << ','
     << r.total << ',' << r.lr << ',' << r.val_ade << '\n';
}

namespace {

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
}

std::vector<Scene> pick(const std::vector<Scene>& scenes, const std::vector<std::size_t>& order,
                        std::size_t start, std::size_t count) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t k = start; k < start + count; ++k) out.push_back(scenes[order[k]]);
  return out;
}

void accumulate(EpochLog& log, const ElboBreakdown& b) {
  log.pred += b.pred;
  log.recon += b.recon;
  log.kl_s += b.kl_s;
  log.kl_z += b.kl_z;
  log.total += b.total_value();
}

void finish(EpochLog& log, std::size_t steps) {
  const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
  log.pred /= n;
  log.recon /= n;
  log.kl_s /= n;
  log.kl_z /= n;
  log.total /= n;
}

}  // namespace

TrainResult train_model(GcrlModel& model, const std::vector<Scene>& train,
                        const std::vector<Scene>& val, const ExperimentConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  model.set_grad_scope(GradScope::kTrain);
  ng::Adam opt(model.trainable(GradScope::kTrain));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train.size() + bs - 1) / bs;
  ng::LrSchedule sched{cfg.schedule, cfg.lr, cfg.schedule == ng::ScheduleKind::kConstant ? cfg.lr : cfg.peak_lr,
                       static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs};

  Rng rng(derive_seed(cfg.seed, 101));
  Rng val_rng_base(derive_seed(cfg.seed, 202));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::map<std::string, Matrix> best_state;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t start = s * bs;
      auto scenes = pick(train, order, start, std::min(bs, train.size() - start));
      Batch batch = make_batch(scenes, model.config());
      ElboBreakdown b = elbo_loss(model, batch, cfg.loss, rng);
      opt.zero_grad();
      b.total.backward();
      log.lr = sched.lr_at(step);
      opt.step(log.lr);
      ++step;
      accumulate(log, b);
    }
    finish(log, steps_per_epoch);
    if (!val.empty()) {
      // Same draws every epoch so validation scores are comparable.
      Rng vr = val_rng_base;
      log.val_ade = best_of_n(model, val, cfg.val_n, vr, LatentSource::kPosterior).ade;
      if (epoch == 1 || log.val_ade < result.best_val_ade) {
        result.best_val_ade = log.val_ade;
        result.best_epoch = epoch;
        best_state = model.state();
      }
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!best_state.empty()) model.load_state(best_state);
  return result;
}

GradScope parse_adapt_scope(const std::string& s) {
  if (s == "adaptable") return GradScope::kAdaptable;
  if (s == "gmm-weights-only") return GradScope::kWeightsOnly;
  throw std::invalid_argument("unknown adaptation scope '" + s + "'");
}

AdaptResult adapt_model(GcrlModel& model, const std::vector<Scene>& scenes, const ExperimentConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  AdaptResult result;
  result.z_hash_before = z_branch_hash(model);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t n_batches = static_cast<std::size_t>(cfg.adapt_batches);
  if (n_batches == 0 || cfg.adapt_epochs == 0) {
    result.z_hash_after = result.z_hash_before;
    return result;
  }
  if (scenes.size() < n_batches * bs) {
    throw std::invalid_argument("adapt_model: need " + std::to_string(n_batches * bs) +
                                " scenes, got " + std::to_string(scenes.size()));
  }
  const GradScope scope = parse_adapt_scope(cfg.adapt_scope);
  const GradScope previous = model.grad_scope();
  model.set_grad_scope(scope);
  auto params = model.trainable(scope);
  for (const auto& p : params) result.updated_scalars += static_cast<std::size_t>(p.size());
  ng::Adam opt(params);

  std::vector<Batch> batches;
  for (std::size_t k = 0; k < n_batches; ++k) {
    std::vector<Scene> chunk(scenes.begin() + static_cast<std::ptrdiff_t>(k * bs),
                             scenes.begin() + static_cast<std::ptrdiff_t>((k + 1) * bs));
    batches.push_back(make_batch(chunk, model.config()));
  }
  Rng rng(derive_seed(cfg.seed, 303));
  for (int epoch = 1; epoch <= cfg.adapt_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = cfg.adapt_lr;
    for (const auto& batch : batches) {
      ElboBreakdown b = adaptation_loss(model, batch, cfg.loss, rng);
      opt.zero_grad();
      b.total.backward();
      opt.step(cfg.adapt_lr);
      accumulate(log, b);
    }
    finish(log, batches.size());
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model.set_grad_scope(previous);
  result.z_hash_after = z_branch_hash(model);
  if (result.z_hash_after != result.z_hash_before) {
    throw PartitionError("adaptation modified the z-branch");
  }
  return result;
}

}  // namespace gcrl
