#include "gcrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gcrl {
namespace {

std::unique_ptr<Density> make_prior_density(const ModelConfig& cfg, Eigen::Index dim,
                                            const std::string& prefix, Rng& rng,
                                            bool random_mean) {
  if (cfg.coupling_priors) {
    return std::make_unique<FlowStack>(dim, cfg.flow_layers, cfg.flow_hidden, prefix, rng);
  }
  auto g = std::make_unique<LearnableGaussian>(dim, prefix);
  if (random_mean) {
    // Identical mixture components would receive identical updates forever.
    Matrix& m = g->mean().tensor.mutable_value();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  }
  return g;
}

Mixture make_prior_s(const ModelConfig& cfg, Rng& rng) {
  std::vector<std::unique_ptr<Density>> comps;
  for (int k = 0; k < cfg.n_cluster; ++k) {
    comps.push_back(
        make_prior_density(cfg, cfg.d_s, "prior_s.component" + std::to_string(k), rng, true));
  }
  Mixture m(std::move(comps), "prior_s");
  m.set_weights(std::vector<double>(static_cast<std::size_t>(cfg.n_cluster), 1.0 / cfg.n_cluster));
  return m;
}

}  // namespace

LatentUse parse_latent_use(const std::string& s) {
  if (s == "both") return LatentUse::kBoth;
  if (s == "s-only" || s == "s_only") return LatentUse::kSOnly;
  if (s == "z-only" || s == "z_only") return LatentUse::kZOnly;
  throw std::invalid_argument("unknown latent usage '" + s + "'");
}

std::string to_string(LatentUse u) {
  switch (u) {
    case LatentUse::kBoth: return "both";
    case LatentUse::kSOnly: return "s-only";
    case LatentUse::kZOnly: return "z-only";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (obs_len < 2 || pred_len < 1) throw std::invalid_argument("ModelConfig: bad sequence lengths");
  if (hidden < 1 || decoder_hidden < 1 || recon_hidden < 1 || flow_hidden < 1) {
    throw std::invalid_argument("ModelConfig: widths must be positive");
  }
  if (d_s < 1 || d_z < 1 || n_cluster < 1) {
    throw std::invalid_argument("ModelConfig: latent dims and n_cluster must be positive");
  }
  if (coupling_priors && (d_s < 2 || d_z < 2)) {
    throw std::invalid_argument("ModelConfig: coupling priors need latent dims >= 2");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("ModelConfig: leaky slope must lie in (0, 1)");
  }
}

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kHeadS: return "head_s";
    case ParamGroup::kHeadZ: return "head_z";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kReconstructor: return "reconstructor";
    case ParamGroup::kPriorS: return "prior_s";
    case ParamGroup::kPriorSWeights: return "prior_s_weights";
    case ParamGroup::kPriorZ: return "prior_z";
  }
  return "?";
}

bool is_z_branch(ParamGroup g) { return g == ParamGroup::kHeadZ || g == ParamGroup::kPriorZ; }

bool scope_allows(GradScope scope, ParamGroup g) {
  switch (scope) {
    case GradScope::kTrain: return g != ParamGroup::kPriorSWeights;
    case GradScope::kAdaptable: return !is_z_branch(g);
    case GradScope::kWeightsOnly: return g == ParamGroup::kPriorSWeights;
    case GradScope::kNone: return false;
  }
  return false;
}

Batch make_batch(std::span<const Scene> scenes, const ModelConfig& cfg) {
  const int T = cfg.obs_len, P = cfg.pred_len;
  Eigen::Index n = 0;
  for (const auto& s : scenes) {
    if (s.num_steps < T + P) throw std::invalid_argument("make_batch: scene too short");
    if (cfg.noise_channel && !s.has_noise()) {
      throw std::invalid_argument("make_batch: model expects a noise channel");
    }
    n += s.num_agents;
  }
  if (n == 0) throw std::invalid_argument("make_batch: empty batch");

  Batch b;
  b.n = n;
  const int F = cfg.input_dim();
  b.steps.assign(static_cast<std::size_t>(T), Matrix::Zero(n, F));
  b.pool = Matrix::Zero(n, n);
  b.recon_target.resize(n, 2 * T);
  b.future_disp.resize(n, 2 * P);
  b.future_pos.resize(n, 2 * P);
  b.last_pos.resize(n, 2);

  Eigen::Index row = 0;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const Scene& s = scenes[si];
    const Eigen::Index first = row;
    for (int a = 0; a < s.num_agents; ++a, ++row) {
      const double ox = cfg.coord_mode == CoordMode::kRelative ? s.x(a, 0) : 0.0;
      const double oy = cfg.coord_mode == CoordMode::kRelative ? s.y(a, 0) : 0.0;
      for (int t = 0; t < T; ++t) {
        Matrix& m = b.steps[static_cast<std::size_t>(t)];
        m(row, 0) = t > 0 ? s.x(a, t) - s.x(a, t - 1) : 0.0;
        m(row, 1) = t > 0 ? s.y(a, t) - s.y(a, t - 1) : 0.0;
        m(row, 2) = s.x(a, t) - ox;
        m(row, 3) = s.y(a, t) - oy;
        if (cfg.noise_channel) m(row, 4) = s.noise(a, t);
        b.recon_target(row, 2 * t) = s.x(a, t) - ox;
        b.recon_target(row, 2 * t + 1) = s.y(a, t) - oy;
      }
      for (int k = 0; k < P; ++k) {
        const int t = T + k;
        b.future_disp(row, 2 * k) = s.x(a, t) - s.x(a, t - 1);
        b.future_disp(row, 2 * k + 1) = s.y(a, t) - s.y(a, t - 1);
        b.future_pos(row, 2 * k) = s.x(a, t);
        b.future_pos(row, 2 * k + 1) = s.y(a, t);
      }
      b.last_pos(row, 0) = s.x(a, T - 1);
      b.last_pos(row, 1) = s.y(a, T - 1);
      b.env_id.push_back(s.env_id);
      b.scene_of.push_back(static_cast<int>(si));
    }
    if (s.num_agents > 1) {
      const double w = 1.0 / (s.num_agents - 1);
      for (Eigen::Index i = first; i < row; ++i)
        for (Eigen::Index j = first; j < row; ++j)
          if (i != j) b.pool(i, j) = w;
    }
  }
  return b;
}

Linear::Linear(Eigen::Index in, Eigen::Index out, const std::string& prefix, Rng& rng)
    : w{prefix + ".w", Tensor::parameter(fan_in_uniform(in, out, rng))},
      b{prefix + ".b", Tensor::parameter(Matrix::Zero(1, out))} {}

void Linear::zero() {
  w.tensor.mutable_value().setZero();
  b.tensor.mutable_value().setZero();
}

GcrlModel::GcrlModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), prior_s_([&] {
        cfg.validate();
        Rng r(derive_seed(seed, 7));
        return make_prior_s(cfg, r);
      }()) {
  Rng rng(seed);
  const int H = cfg.hidden, F = cfg.input_dim();
  auto param = [](const std::string& n, Matrix v) { return Param{n, Tensor::parameter(std::move(v))}; };
  gru_w_ih_ = param("encoder.gru.w_ih", fan_in_uniform(F, 3 * H, rng));
  gru_w_hh_ = param("encoder.gru.w_hh", fan_in_uniform(H, 3 * H, rng));
  gru_b_ih_ = param("encoder.gru.b_ih", Matrix::Zero(1, 3 * H));
  gru_b_hh_ = param("encoder.gru.b_hh", Matrix::Zero(1, 3 * H));

  head_s_ = Linear(2 * H, 2 * cfg.d_s, "head_s", rng);
  head_z_ = Linear(2 * H, 2 * cfg.d_z, "head_z", rng);

  const int latent_in = (cfg.uses_s() ? cfg.d_s : 0) + (cfg.uses_z() ? cfg.d_z : 0);
  decoder_.emplace_back(2 * H + latent_in, cfg.decoder_hidden, "decoder.l0", rng);
  decoder_.emplace_back(cfg.decoder_hidden, cfg.decoder_hidden, "decoder.l1", rng);
  decoder_.emplace_back(cfg.decoder_hidden, 4 * cfg.pred_len, "decoder.out", rng);
  recon_.emplace_back(latent_in, cfg.recon_hidden, "reconstructor.l0", rng);
  recon_.emplace_back(cfg.recon_hidden, cfg.recon_hidden, "reconstructor.l1", rng);
  recon_.emplace_back(cfg.recon_hidden, 4 * cfg.obs_len, "reconstructor.out", rng);

  Rng prior_rng(derive_seed(seed, 8));
  prior_z_ = make_prior_density(cfg, cfg.d_z, "prior_z", prior_rng, false);

  const int P2 = 2 * cfg.pred_len;
  cumsum_ = Matrix::Zero(P2, P2);
  for (int j = 0; j < cfg.pred_len; ++j)
    for (int k = j; k < cfg.pred_len; ++k)
      for (int c = 0; c < 2; ++c) cumsum_(2 * j + c, 2 * k + c) = 1.0;

  set_grad_scope(GradScope::kTrain);
}

std::vector<ParamRef> GcrlModel::params() {
  std::vector<ParamRef> out;
  auto add = [&](Param* p, ParamGroup g) { out.push_back({p, g}); };
  add(&gru_w_ih_, ParamGroup::kEncoder);
  add(&gru_w_hh_, ParamGroup::kEncoder);
  add(&gru_b_ih_, ParamGroup::kEncoder);
  add(&gru_b_hh_, ParamGroup::kEncoder);
  add(&head_s_.w, ParamGroup::kHeadS);
  add(&head_s_.b, ParamGroup::kHeadS);
  add(&head_z_.w, ParamGroup::kHeadZ);
  add(&head_z_.b, ParamGroup::kHeadZ);
  for (auto& l : decoder_) {
    add(&l.w, ParamGroup::kDecoder);
    add(&l.b, ParamGroup::kDecoder);
  }
  for (auto& l : recon_) {
    add(&l.w, ParamGroup::kReconstructor);
    add(&l.b, ParamGroup::kReconstructor);
  }
  for (Param* p : prior_s_.component_parameters()) add(p, ParamGroup::kPriorS);
  add(&prior_s_.logits(), ParamGroup::kPriorSWeights);
  for (Param* p : prior_z_->parameters()) add(p, ParamGroup::kPriorZ);
  return out;
}

std::vector<Tensor> GcrlModel::trainable(GradScope scope) {
  std::vector<Tensor> out;
  for (auto& [p, g] : params()) {
    if (scope_allows(scope, g)) out.push_back(p->tensor);
  }
  return out;
}

void GcrlModel::set_grad_scope(GradScope scope) {
  scope_ = scope;
  for (auto& [p, g] : params()) p->frozen = !scope_allows(scope, g);
}

std::map<std::string, Matrix> GcrlModel::state() {
  std::map<std::string, Matrix> out;
  for (auto& [p, g] : params()) out[p->name] = p->tensor.value();
  return out;
}

void GcrlModel::load_state(const std::map<std::string, Matrix>& state) {
  for (auto& [p, g] : params()) {
    auto it = state.find(p->name);
    if (it == state.end()) throw std::invalid_argument("load_state: missing tensor " + p->name);
    if (it->second.rows() != p->tensor.rows() || it->second.cols() != p->tensor.cols()) {
      throw ng::ShapeError("load_state: shape mismatch for " + p->name);
    }
    p->tensor.mutable_value() = it->second;
  }
}

Tensor GcrlModel::encode(const Batch& batch) const {
  const int H = cfg_.hidden;
  if (static_cast<int>(batch.steps.size()) < cfg_.obs_len) {
    throw std::invalid_argument("infer_posteriors: fewer than obs_len observed steps");
  }
  Tensor w_ih = gru_w_ih_.use(), w_hh = gru_w_hh_.use();
  Tensor b_ih = gru_b_ih_.use(), b_hh = gru_b_hh_.use();
  Tensor h = Tensor::zeros(batch.n, H);
  for (int t = 0; t < cfg_.obs_len; ++t) {
    const Matrix& xt = batch.steps[static_cast<std::size_t>(t)];
    if (xt.cols() != cfg_.input_dim()) throw ng::ShapeError("encoder: input width mismatch");
    Tensor gi = ng::affine(Tensor::constant(xt), w_ih, b_ih);
    Tensor gh = ng::affine(h, w_hh, b_hh);
    Tensor r = ng::sigmoid(ng::slice_cols(gi, 0, H) + ng::slice_cols(gh, 0, H));
    Tensor u = ng::sigmoid(ng::slice_cols(gi, H, H) + ng::slice_cols(gh, H, H));
    Tensor c = ng::tanh(ng::slice_cols(gi, 2 * H, H) + r * ng::slice_cols(gh, 2 * H, H));
    h = c + u * (h - c);
  }
  Tensor pooled = ng::matmul(Tensor::constant(batch.pool), h);
  std::vector<Tensor> parts{h, pooled};
  return ng::concat_cols(parts);
}

Posteriors GcrlModel::infer_posteriors(const Batch& batch) const {
  Tensor feat = encode(batch);
  Tensor s = head_s_(feat);
  Tensor z = head_z_(feat);
  return {feat,
          DiagGaussian::make(ng::slice_cols(s, 0, cfg_.d_s), ng::slice_cols(s, cfg_.d_s, cfg_.d_s)),
          DiagGaussian::make(ng::slice_cols(z, 0, cfg_.d_z), ng::slice_cols(z, cfg_.d_z, cfg_.d_z))};
}

Tensor GcrlModel::mlp(const std::vector<Linear>& layers, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ng::leaky_relu(h, cfg_.leaky_slope);
  }
  return h;
}

namespace {
std::vector<Tensor> latent_parts(const ModelConfig& cfg, const LatentSample& ls) {
  std::vector<Tensor> parts;
  if (cfg.uses_s()) {
    if (!ls.s.defined() || ls.s.cols() != cfg.d_s) throw ng::ShapeError("latent s dimension mismatch");
    parts.push_back(ls.s);
  }
  if (cfg.uses_z()) {
    if (!ls.z.defined() || ls.z.cols() != cfg.d_z) throw ng::ShapeError("latent z dimension mismatch");
    parts.push_back(ls.z);
  }
  return parts;
}

DiagGaussian split_gaussian(const Tensor& out, Eigen::Index half, bool learn_var) {
  Tensor mean = ng::slice_cols(out, 0, half);
  Tensor log_var = learn_var ? ng::slice_cols(out, half, half) : Tensor::zeros(out.rows(), half);
  return DiagGaussian::make(mean, log_var);
}
}  // namespace

DiagGaussian GcrlModel::decode_future(const Tensor& features, const LatentSample& ls) const {
  if (features.cols() != 2 * cfg_.hidden) throw ng::ShapeError("decode_future: feature width mismatch");
  std::vector<Tensor> parts{features};
  for (auto& p : latent_parts(cfg_, ls)) {
    if (p.rows() != features.rows()) throw ng::ShapeError("decode_future: row mismatch");
    parts.push_back(p);
  }
  Tensor out = mlp(decoder_, ng::concat_cols(parts));
  return split_gaussian(out, 2 * cfg_.pred_len, cfg_.learn_output_var);
}

DiagGaussian GcrlModel::reconstruct_past(const LatentSample& ls) const {
  auto parts = latent_parts(cfg_, ls);
  Tensor out = mlp(recon_, ng::concat_cols(parts));
  return split_gaussian(out, 2 * cfg_.obs_len, cfg_.learn_output_var);
}

std::pair<Matrix, Matrix> GcrlModel::draw_noise(Eigen::Index rows, Rng& rng) const {
  std::pair<Matrix, Matrix> eps;
  if (cfg_.uses_s()) eps.first = rng.normal_matrix(rows, cfg_.d_s);
  if (cfg_.uses_z()) eps.second = rng.normal_matrix(rows, cfg_.d_z);
  return eps;
}

LatentSample GcrlModel::latents_from_noise(const Posteriors& post,
                                           std::span<const Eigen::Index> agent,
                                           const Matrix& eps_s, const Matrix& eps_z) const {
  auto pick = [&](const DiagGaussian& q) {
    return DiagGaussian{ng::gather_rows(q.mu, agent), ng::gather_rows(q.log_var, agent)};
  };
  LatentSample ls;
  if (cfg_.uses_s()) ls.s = reparam_sample(pick(post.q_s), Tensor::constant(eps_s));
  if (cfg_.uses_z()) ls.z = reparam_sample(pick(post.q_z), Tensor::constant(eps_z));
  return ls;
}

LatentSample GcrlModel::sample_posteriors(const Posteriors& post, Eigen::Index times,
                                          Rng& rng) const {
  const Eigen::Index n = post.q_s.rows();
  auto [eps_s, eps_z] = draw_noise(n * times, rng);
  return latents_from_noise(post, repeat_index(n, times), eps_s, eps_z);
}

Tensor GcrlModel::displacements_to_positions(const Tensor& disp, const Matrix& last_pos) const {
  const Eigen::Index times = disp.rows() / last_pos.rows();
  Matrix offset(disp.rows(), disp.cols());
  for (Eigen::Index k = 0; k < times; ++k) {
    for (Eigen::Index i = 0; i < last_pos.rows(); ++i) {
      for (int j = 0; j < cfg_.pred_len; ++j) {
        offset(k * last_pos.rows() + i, 2 * j) = last_pos(i, 0);
        offset(k * last_pos.rows() + i, 2 * j + 1) = last_pos(i, 1);
      }
    }
  }
  return ng::matmul(disp, Tensor::constant(cumsum_)) + Tensor::constant(offset);
}

Matrix GcrlModel::ancestral_predict(const Batch& batch, int n_samples, Rng& rng,
                                    LatentSource source) const {
  if (n_samples < 1) throw std::invalid_argument("ancestral_predict: N must be >= 1");
  Posteriors post = infer_posteriors(batch);
  const Eigen::Index n = batch.n;
  LatentSample ls;
  if (source == LatentSource::kPosterior) {
    ls = sample_posteriors(post, n_samples, rng);
  } else {
    if (cfg_.uses_s()) ls.s = Tensor::constant(mixture_sample_rows(prior_s_, n * n_samples, rng));
    if (cfg_.uses_z()) ls.z = Tensor::constant(prior_z_->sample(n * n_samples, rng));
  }
  auto idx = repeat_index(n, n_samples);
  Tensor feat = ng::gather_rows(post.features, idx);
  DiagGaussian py = decode_future(feat, ls);
  return displacements_to_positions(py.mu, batch.last_pos).value();
}

Eigen::VectorXd GcrlModel::log_q_y_given_x(const Batch& batch, int n_samples, Rng& rng) const {
  if (n_samples < 1) throw std::invalid_argument("log_q_y_given_x: n_samples must be >= 1");
  Posteriors post = infer_posteriors(batch);
  const Eigen::Index n = batch.n;
  LatentSample ls = sample_posteriors(post, n_samples, rng);
  auto idx = repeat_index(n, n_samples);
  DiagGaussian py = decode_future(ng::gather_rows(post.features, idx), ls);
  Tensor y = Tensor::constant(batch.future_disp);
  Matrix lp = gaussian_log_prob(ng::gather_rows(y, idx), py).value();  // (N*n x 1)
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_samples; ++k) mx = std::max(mx, lp(k * n + i, 0));
    double acc = 0.0;
    for (int k = 0; k < n_samples; ++k) acc += std::exp(lp(k * n + i, 0) - mx);
    out(i) = mx + std::log(acc / n_samples);
  }
  return out;
}

}  // namespace gcrl
