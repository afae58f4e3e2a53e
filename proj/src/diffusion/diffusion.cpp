#include "sned/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sned/numerics/ops.hpp"
#include "sned/numerics/resize.hpp"

namespace sned {

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
  return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.betas.push_back(b);
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  return s;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, double alpha_bar, const Tensor<T>& eps) {
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " + shape_str(x0.shape()));
  const T a = static_cast<T>(std::sqrt(alpha_bar));
  const T b = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  Tensor<T> out(x0.shape());
  for (std::int64_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " + shape_str(x0.shape()));
  if (x0.rank() == 0 || static_cast<std::int64_t>(t.size()) != x0.dim(0)) throw ShapeError("q_sample: one timestep per item required");
  const std::int64_t per = x0.numel() / x0.dim(0);
  Tensor<T> out(x0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (t[b] < 1 || t[b] > schedule.T) throw std::out_of_range("q_sample: timestep outside [1,T]");
    const double ab = schedule.alpha_bar(t[b]);
    const T a = static_cast<T>(std::sqrt(ab));
    const T s = static_cast<T>(std::sqrt(1.0 - ab));
    const std::int64_t o = static_cast<std::int64_t>(b) * per;
    for (std::int64_t i = 0; i < per; ++i) out[o + i] = a * x0[o + i] + s * eps[o + i];
  }
  return out;
}

template <typename T>
NoiseDraw<T> draw_noise(Rng& rng, const Shape& shape, const NoiseSchedule& schedule) {
  NoiseDraw<T> d{{}, Tensor<T>(shape)};
  for (std::int64_t b = 0; b < shape.at(0); ++b) d.t.push_back(static_cast<int>(rng.uniform_int(1, schedule.T)));
  rng.fill_normal(d.eps.values());
  return d;
}

template <typename T>
Var training_loss(Tape<T>& tape, SubnetBinding<T>& bind, const LossBatch<T>& batch, const NoiseDraw<T>& draw,
                  const NoiseSchedule& schedule) {
  const Var xt = tape.constant(q_sample(batch.x0, draw.t, draw.eps, schedule));
  std::optional<Var> cond;
  if (batch.cond) cond = tape.constant(*batch.cond);
  const Var pred = forward(tape, bind, xt, draw.t, batch.captions, cond);
  return ops::mse(tape, pred, tape.constant(draw.eps));
}

template <typename T>
double training_loss(const Network<T>& net, const SubnetSpec& spec, const LossBatch<T>& batch,
                     const NoiseSchedule& schedule, Rng& rng) {
  const NoiseDraw<T> draw = draw_noise<T>(rng, batch.x0.shape(), schedule);
  Tape<T> tape;
  SubnetBinding<T> bind(net, spec, false);
  return static_cast<double>(tape.value(training_loss(tape, bind, batch, draw, schedule))[0]);
}

template <typename T>
double training_loss(const Denoiser<T>& model, const LossBatch<T>& batch, const NoiseSchedule& schedule, Rng& rng) {
  const NoiseDraw<T> draw = draw_noise<T>(rng, batch.x0.shape(), schedule);
  const Tensor<T> pred = model(q_sample(batch.x0, draw.t, draw.eps, schedule), draw.t, batch.cond);
  if (pred.shape() != draw.eps.shape()) throw ShapeError("denoiser output shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(draw.eps[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

std::vector<int> ddim_timesteps(int T, int num_steps) {
  if (num_steps < 1 || num_steps > T) {
    throw std::invalid_argument("ddim steps " + std::to_string(num_steps) + " must be in [1, T=" + std::to_string(T) + "]");
  }
  if (num_steps == 1) return {T};
  std::vector<int> ts;
  const long long n = num_steps - 1;
  for (long long i = n; i >= 0; --i) ts.push_back(static_cast<int>(1 + (i * (T - 1) + n / 2) / n));
  return ts;
}

template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& model, const Shape& shape, std::type_identity_t<const Tensor<T>*> cond, const NoiseSchedule& schedule,
                      int num_steps, Rng& rng, double eta, Tensor<T>* pre_clamp) {
  if (eta < 0.0) throw std::invalid_argument("eta must be >= 0");
  const std::vector<int> ts = ddim_timesteps(schedule.T, num_steps);
  Tensor<T> x(shape);
  rng.fill_normal(x.values());
  const auto n = static_cast<std::size_t>(shape.at(0));
  std::vector<double> xd(x.storage().begin(), x.storage().end());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(t_prev);
    const std::vector<int> tv(n, t);
    for (std::int64_t k = 0; k < x.numel(); ++k) x[k] = static_cast<T>(xd[static_cast<std::size_t>(k)]);
    const Tensor<T> e = model(x, tv, cond);
    if (e.shape() != shape) throw ShapeError("denoiser output shape " + shape_str(e.shape()) + " != " + shape_str(shape));
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    for (std::int64_t k = 0; k < x.numel(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const double x0 = (xd[kk] - std::sqrt(1.0 - ab) * e[k]) / std::sqrt(ab);
      xd[kk] = std::sqrt(ab_prev) * x0 + dir * e[k];
      if (sigma > 0.0) xd[kk] += sigma * rng.normal();
      if (!std::isfinite(xd[kk])) {
        throw NumericError("ddim: non-finite value at step " + std::to_string(i) + " (t=" + std::to_string(t) +
                           ", element " + std::to_string(k) + ")");
      }
    }
  }
  Tensor<T> out(shape);
  for (std::int64_t k = 0; k < out.numel(); ++k) out[k] = static_cast<T>(xd[static_cast<std::size_t>(k)]);
  if (pre_clamp) *pre_clamp = out;
  for (auto& v : out.values()) v = std::clamp(v, T{0}, T{1});
  return out;
}

template <typename T>
Denoiser<T> make_denoiser(const Network<T>& net, const SubnetSpec& spec, std::vector<int> captions) {
  return [&net, spec, captions = std::move(captions)](const Tensor<T>& x, std::span<const int> t, const Tensor<T>* cond) {
    return forward(net, spec, x, t, captions, cond);
  };
}

template <typename T>
Tensor<T> ddim_sample(const Network<T>& net, const SubnetSpec& spec, int n, std::span<const int> captions,
                      const NoiseSchedule& schedule, int num_steps, Rng& rng, double eta, Tensor<T>* pre_clamp) {
  if (net.config.role != Role::Base) throw std::invalid_argument("unconditional ddim_sample needs a base-role network");
  const Shape shape{n, net.config.frames, net.config.in_channels, spec.resolution, spec.resolution};
  const Denoiser<T> d = make_denoiser(net, spec, std::vector<int>(captions.begin(), captions.end()));
  return ddim_sample(d, shape, static_cast<const Tensor<T>*>(nullptr), schedule, num_steps, rng, eta, pre_clamp);
}

Tensor<float> upsample_video(const Tensor<float>& low, int resolution) {
  if (low.rank() != 5) throw ShapeError("upsample_video expects [B,F,C,H,W]");
  return resize_bilinear_antialiased(low, resolution, resolution);
}

CascadeResult cascade_sample(const Supernet& base_net, const Supernet& ssr_net, const SubnetSpec& base_spec,
                             const std::vector<SubnetSpec>& ssr_specs, std::span<const int> captions, int n,
                             const NoiseSchedule& schedule, int num_steps, Rng& rng) {
  if (ssr_net.config.role != Role::SSR) throw std::invalid_argument("cascade needs an SSR-role network");
  int res = base_spec.resolution;
  for (const auto& s : ssr_specs) {
    if (s.resolution != 2 * res) {
      throw std::invalid_argument("resolution chain mismatch: " + std::to_string(s.resolution) + " does not double " +
                                  std::to_string(res));
    }
    res = s.resolution;
  }
  CascadeResult out;
  out.video = ddim_sample(base_net, base_spec, n, captions, schedule, num_steps, rng);
  out.stages.push_back(out.video);
  const std::vector<int> caps(captions.begin(), captions.end());
  for (const auto& s : ssr_specs) {
    const Tensor<float> cond = upsample_video(out.video, s.resolution);
    const Denoiser<float> d = make_denoiser(ssr_net, s, caps);
    const Shape shape{n, ssr_net.config.frames, ssr_net.config.in_channels, s.resolution, s.resolution};
    out.video = ddim_sample(d, shape, &cond, schedule, num_steps, rng);
    out.stages.push_back(out.video);
    ++out.ssr_applications;
  }
  return out;
}

#define SNED_INST(T)                                                                                               \
  template Tensor<T> q_sample<T>(const Tensor<T>&, double, const Tensor<T>&);                                      \
  template Tensor<T> q_sample<T>(const Tensor<T>&, std::span<const int>, const Tensor<T>&, const NoiseSchedule&);  \
  template NoiseDraw<T> draw_noise<T>(Rng&, const Shape&, const NoiseSchedule&);                                  \
  template Var training_loss<T>(Tape<T>&, SubnetBinding<T>&, const LossBatch<T>&, const NoiseDraw<T>&,            \
                                const NoiseSchedule&);                                                             \
  template double training_loss<T>(const Network<T>&, const SubnetSpec&, const LossBatch<T>&,                     \
                                   const NoiseSchedule&, Rng&);                                                    \
  template double training_loss<T>(const Denoiser<T>&, const LossBatch<T>&, const NoiseSchedule&, Rng&);          \
  template Tensor<T> ddim_sample<T>(const Denoiser<T>&, const Shape&, std::type_identity_t<const Tensor<T>*>, const NoiseSchedule&, int, \
                                    Rng&, double, Tensor<T>*);                                                     \
  template Denoiser<T> make_denoiser<T>(const Network<T>&, const SubnetSpec&, std::vector<int>);                  \
  template Tensor<T> ddim_sample<T>(const Network<T>&, const SubnetSpec&, int, std::span<const int>,               \
                                    const NoiseSchedule&, int, Rng&, double, Tensor<T>*);
SNED_INST(float)
SNED_INST(double)
#undef SNED_INST

}  // namespace sned
