#include "sned/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "sned/model/layout.hpp"
#include "sned/numerics/kernels.hpp"

namespace sned {

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (total_iterations < 0) p.push_back("total_iterations must be >= 0");
  if (!(learning_rate >= 0.0)) p.push_back("learning_rate must be >= 0");
  if (batch_size < 1) p.push_back("batch_size must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) p.push_back("ema_decay must be in [0,1]");
  if (warmup.step_length < 1) p.push_back("warmup.step_length must be >= 1");
  if (log_every < 1) p.push_back("log_every must be >= 1");
  if (checkpoint_every < 0) p.push_back("checkpoint_every must be >= 0");
  return p;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"total_iterations", c.total_iterations}, {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},             {"warmup", c.warmup},
                     {"ema_decay", c.ema_decay},               {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},             {"adam_eps", c.adam_eps},
                     {"seed", c.seed},                         {"checkpoint_every", c.checkpoint_every},
                     {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.total_iterations = j.value("total_iterations", d.total_iterations);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.warmup = j.value("warmup", d.warmup);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
}

OptimizerState OptimizerState::zeros_like(const Supernet& net) {
  OptimizerState s;
  for (const auto& w : net.weights) {
    s.m.emplace_back(w.shape());
    s.v.emplace_back(w.shape());
    s.steps.emplace_back(static_cast<std::size_t>(w.numel()), 0u);
  }
  return s;
}

EmaState EmaState::from(const Supernet& net, double decay) { return EmaState{net.weights, decay}; }

void ema_update(EmaState& ema, const Supernet& net, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema decay must be in [0,1]");
  if (ema.shadow.size() != net.weights.size()) throw std::invalid_argument("EMA state does not match the network");
  ema.decay = decay;
  const double keep = decay, take = 1.0 - decay;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    float* s = ema.shadow[i].data();
    const float* w = net.weights[i].data();
    const std::int64_t n = net.weights[i].numel();
#pragma omp parallel for simd schedule(static)
    for (std::int64_t k = 0; k < n; ++k) s[k] = static_cast<float>(keep * s[k] + take * w[k]);
  }
}

Supernet ema_network(const Supernet& net, const EmaState& ema) {
  if (ema.shadow.size() != net.weights.size()) throw std::invalid_argument("EMA state does not match the network");
  return Supernet{net.config, net.layout, ema.shadow};
}

TrainSession::TrainSession(const TrainContext& ctx, const Supernet& net)
    : ctx_(ctx),
      full_params_(param_count(net, native_spec(net.config, ctx.search.resolutions.front()))),
      spec_rng_(Rng(ctx.train.seed).fork(1)),
      noise_rng_(Rng(ctx.train.seed).fork(2)) {
  const auto p = ctx.train.problems();
  if (!p.empty()) throw std::invalid_argument("invalid train config: " + p.front());
  ctx.search.validate();
  const bool ssr = net.config.role == Role::SSR;
  Rng batch_root = Rng(ctx.train.seed).fork(3);
  for (int r : ctx.search.resolutions) {
    streams_.emplace(r, BatchStream(ctx.dataset, r, ctx.train.batch_size, batch_root.fork(static_cast<std::uint64_t>(r)).next_u64(), ssr));
  }
  const int probe_res = *std::min_element(ctx.search.resolutions.begin(), ctx.search.resolutions.end());
  probe_spec_ = full_spec(ctx.search, net.config, probe_res);
  std::vector<int> idx;
  for (int i = 0; i < std::min(ctx.train.batch_size, ctx.dataset.n); ++i) idx.push_back(i);
  probe_batch_ = gather_batch(ctx.dataset, probe_res, idx, ssr);
  if (ssr) probe_cond_ = upsample_video(*probe_batch_.low, probe_res);
  Rng probe_rng = Rng(ctx.train.seed).fork(4);
  probe_draw_ = draw_noise<float>(probe_rng, probe_batch_.videos.shape(), ctx.schedule);
}

double TrainSession::probe_loss(const Supernet& weights) const {
  Tape<float> tape;
  SubnetBinding<float> bind(weights, probe_spec_, false);
  const LossBatch<float> b{probe_batch_.videos, probe_batch_.captions, probe_cond_ ? &*probe_cond_ : nullptr};
  return static_cast<double>(tape.value(training_loss(tape, bind, b, probe_draw_, ctx_.schedule))[0]);
}

StepReport TrainSession::step(Supernet& net, OptimizerState& opt, EmaState& ema, std::int64_t iteration) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = ctx_.train;
  StepReport rep;
  rep.spec = sample_subnet(spec_rng_, ctx_.search, tc.warmup, iteration, net.config);
  rep.param_fraction = static_cast<double>(param_count(net, rep.spec)) / static_cast<double>(full_params_);
  const VideoBatch batch = streams_.at(rep.spec.resolution).next();
  std::optional<Tensor<float>> cond;
  if (batch.low) cond = upsample_video(*batch.low, rep.spec.resolution);
  const NoiseDraw<float> draw = draw_noise<float>(noise_rng_, batch.videos.shape(), ctx_.schedule);

  Tape<float> tape;
  SubnetBinding<float> bind(net, rep.spec, true);
  Var loss;
  try {
    loss = training_loss(tape, bind, LossBatch<float>{batch.videos, batch.captions, cond ? &*cond : nullptr}, draw, ctx_.schedule);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iteration) + " with spec " +
                       nlohmann::json(rep.spec).dump());
  }
  rep.loss = static_cast<double>(tape.value(loss)[0]);
  if (!std::isfinite(rep.loss)) {
    throw NumericError("non-finite loss at iteration " + std::to_string(iteration) + " with spec " + nlohmann::json(rep.spec).dump());
  }
  tape.backward(loss);

  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2, lr = tc.learning_rate, eps = tc.adam_eps;
  for (const auto& bound : bind.bound()) {
    const Tensor<float>* g = tape.grad(bound.var);
    if (!g) continue;
    const auto li = static_cast<std::size_t>(bound.layer);
    float* w = net.weights[li].data();
    float* m = opt.m[li].data();
    float* v = opt.v[li].data();
    std::uint32_t* st = opt.steps[li].data();
    const float* gd = g->data();
    for_each_slice_offset(net.layout.layers[li].shape, bound.active, [&](std::int64_t f, std::int64_t s) {
      const std::uint32_t k = ++st[f];
      if (k >= bc1_.size()) {
        for (std::size_t j = bc1_.size(); j <= k; ++j) {
          bc1_.push_back(1.0 - std::pow(b1, static_cast<double>(j)));
          bc2_.push_back(1.0 - std::pow(b2, static_cast<double>(j)));
        }
      }
      const double gi = gd[s];
      const double mi = b1 * m[f] + (1.0 - b1) * gi;
      const double vi = b2 * v[f] + (1.0 - b2) * gi * gi;
      m[f] = static_cast<float>(mi);
      v[f] = static_cast<float>(vi);
      const double step = lr * (mi / bc1_[k]) / (std::sqrt(vi / bc2_[k]) + eps);
      w[f] = static_cast<float>(w[f] - step);
    });
  }
  ema_update(ema, net, tc.ema_decay);
  rep.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

StepReport train_step(Supernet& net, OptimizerState& opt, EmaState& ema, TrainSession& session, std::int64_t iteration) {
  return session.step(net, opt, ema, iteration);
}

namespace {

SnwFile state_file(const Supernet& net, const std::string& kind) {
  SnwFile f;
  f.config = net.config;
  f.meta = {{"kind", kind}};
  return f;
}

}  // namespace

void save_training_state(const std::filesystem::path& dir, const Supernet& net, const OptimizerState& opt, const EmaState& ema) {
  std::filesystem::create_directories(dir);
  save_network(dir / "weights.snw", net);
  SnwFile o = state_file(net, "optimizer");
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    const auto& name = net.layout.layers[i].name;
    o.arrays.push_back({"m/" + name, opt.m[i]});
    o.arrays.push_back({"v/" + name, opt.v[i]});
    Tensor<float> st(net.weights[i].shape());
    for (std::size_t k = 0; k < opt.steps[i].size(); ++k) st[static_cast<std::int64_t>(k)] = static_cast<float>(opt.steps[i][k]);
    o.arrays.push_back({"step/" + name, std::move(st)});
  }
  write_snw(dir / "optimizer.snw", o);
  SnwFile e = state_file(net, "ema");
  e.meta["decay"] = ema.decay;
  for (std::size_t i = 0; i < net.weights.size(); ++i) e.arrays.push_back({net.layout.layers[i].name, ema.shadow[i]});
  write_snw(dir / "ema.snw", e);
}

void load_training_state(const std::filesystem::path& dir, Supernet& net, OptimizerState& opt, EmaState& ema) {
  net = load_network(dir / "weights.snw");
  opt = OptimizerState::zeros_like(net);
  const SnwFile o = read_snw(dir / "optimizer.snw");
  if (o.arrays.size() != 3 * net.weights.size()) throw CheckpointError("optimizer checkpoint does not match the weights manifest");
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    const auto& name = net.layout.layers[i].name;
    const auto& m = o.arrays[3 * i];
    const auto& v = o.arrays[3 * i + 1];
    const auto& s = o.arrays[3 * i + 2];
    if (m.name != "m/" + name || v.name != "v/" + name || s.name != "step/" + name) {
      throw CheckpointError("optimizer checkpoint manifest differs at " + name);
    }
    opt.m[i] = m.value;
    opt.v[i] = v.value;
    for (std::int64_t k = 0; k < s.value.numel(); ++k) opt.steps[i][static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(s.value[k]);
  }
  const SnwFile e = read_snw(dir / "ema.snw");
  if (e.arrays.size() != net.weights.size()) throw CheckpointError("EMA checkpoint does not match the weights manifest");
  ema.shadow.clear();
  for (std::size_t i = 0; i < e.arrays.size(); ++i) {
    if (e.arrays[i].name != net.layout.layers[i].name) throw CheckpointError("EMA checkpoint manifest differs at " + e.arrays[i].name);
    ema.shadow.push_back(e.arrays[i].value);
  }
  ema.decay = e.meta.value("decay", 0.999);
}

TrainResult train(Supernet& net, const TrainContext& ctx, const TrainOutputs& outputs) {
  kernels::init_threading();
  TrainResult res{OptimizerState::zeros_like(net), EmaState::from(net, ctx.train.ema_decay), {}, {}};
  TrainSession session(ctx, net);
  std::ofstream log_file;
  if (outputs.metrics_log) {
    if (outputs.metrics_log->has_parent_path()) std::filesystem::create_directories(outputs.metrics_log->parent_path());
    log_file.open(*outputs.metrics_log, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open metrics log " + outputs.metrics_log->string());
  }
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t it = 0; it < ctx.train.total_iterations; ++it) {
    const StepReport rep = train_step(net, res.optimizer, res.ema, session, it);
    res.losses.push_back(rep.loss);
    if (it % ctx.train.log_every == 0 || it + 1 == ctx.train.total_iterations) {
      const double probe = session.probe_loss(ema_network(net, res.ema));
      nlohmann::json line{{"iter", it},
                          {"res", rep.spec.resolution},
                          {"param_fraction", rep.param_fraction},
                          {"loss", rep.loss},
                          {"probe_ema_loss", probe},
                          {"wall_ms", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()}};
      if (log_file.is_open()) log_file << line.dump() << '\n' << std::flush;
      if (outputs.on_log) outputs.on_log(line);
      res.log.push_back(std::move(line));
    }
    if (outputs.checkpoint_dir && ctx.train.checkpoint_every > 0 && (it + 1) % ctx.train.checkpoint_every == 0) {
      save_training_state(*outputs.checkpoint_dir, net, res.optimizer, res.ema);
    }
  }
  if (outputs.checkpoint_dir) save_training_state(*outputs.checkpoint_dir, net, res.optimizer, res.ema);
  return res;
}

ExtractedSubnet extract_subnet(const Supernet& net, const SubnetSpec& spec, const SearchSpaceConfig* search) {
  check_spec_dims(net.config, spec);
  if (search) {
    const auto v = validate(spec, *search, net.config);
    if (!v.empty()) throw std::invalid_argument("invalid spec: " + v.front());
  }
  std::vector<NamedArray> arrays;
  for (std::size_t i = 0; i < net.layout.layers.size(); ++i) {
    const auto& d = net.layout.layers[i];
    if (!layer_active(d, spec)) continue;
    const Shape act = active_shape(d, spec, net.config.width_quantum);
    SliceView<float> view(const_cast<float*>(net.weights[i].data()), d.shape, act);
    arrays.push_back(NamedArray{d.name, view.gather()});
  }
  ExtractedSubnet out{network_from_arrays(net.config, std::move(arrays)), native_spec(net.config, spec.resolution)};
  out.native.drop_mask = spec.drop_mask;
  return out;
}

}  // namespace sned
