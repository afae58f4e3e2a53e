#pragma once

#include <functional>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "sned/model/forward.hpp"
#include "sned/numerics/rng.hpp"

namespace sned {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // index t-1
  std::vector<double> alphas;      // index t-1
  std::vector<double> alpha_bars;  // index t-1

  /// alpha_bar at t in [0, T]; t = 0 is the clean end (1.0).
  double alpha_bar(int t) const;
};

/// Betas linearly spaced over [beta_start, beta_end] inclusive.
NoiseSchedule linear_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, double alpha_bar, const Tensor<T>& eps);
/// Per-item timesteps; x0 [B,...].
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps, const NoiseSchedule& schedule);

/// Predicts eps from (x_t, t) for a batch; `cond` is the SSR conditioning video or null.
template <typename T>
using Denoiser = std::function<Tensor<T>(const Tensor<T>& x_t, std::span<const int> t, const Tensor<T>* cond)>;

/// One batch for the loss: clean videos, captions [B*L], optional SSR conditioning.
template <typename T>
struct LossBatch {
  const Tensor<T>& x0;
  std::span<const int> captions;
  const Tensor<T>* cond = nullptr;
};

/// (t, eps) draws: t uniform in [1, T] per item, then eps ~ N(0,1).
template <typename T>
struct NoiseDraw {
  std::vector<int> t;
  Tensor<T> eps;
};
template <typename T>
NoiseDraw<T> draw_noise(Rng& rng, const Shape& shape, const NoiseSchedule& schedule);

/// Differentiable eps-MSE for one subnet.
template <typename T>
Var training_loss(Tape<T>& tape, SubnetBinding<T>& bind, const LossBatch<T>& batch, const NoiseDraw<T>& draw,
                  const NoiseSchedule& schedule);
template <typename T>
double training_loss(const Network<T>& net, const SubnetSpec& spec, const LossBatch<T>& batch,
                     const NoiseSchedule& schedule, Rng& rng);
/// Same loss for any predictor.
template <typename T>
double training_loss(const Denoiser<T>& model, const LossBatch<T>& batch, const NoiseSchedule& schedule, Rng& rng);

/// Evenly spaced descending subsequence containing T and 1.
std::vector<int> ddim_timesteps(int T, int num_steps);

/// Deterministic DDIM (eta = 0) from seeded x_T ~ N(0,1) of `shape`; output
/// clamped to [0,1]. `pre_clamp` receives the unclamped final state.
template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& model, const Shape& shape, std::type_identity_t<const Tensor<T>*> cond, const NoiseSchedule& schedule,
                      int num_steps, Rng& rng, double eta = 0.0, Tensor<T>* pre_clamp = nullptr);

/// Adapter from a network and spec; captions are fixed for the whole sampling.
template <typename T>
Denoiser<T> make_denoiser(const Network<T>& net, const SubnetSpec& spec, std::vector<int> captions);

template <typename T>
Tensor<T> ddim_sample(const Network<T>& net, const SubnetSpec& spec, int n, std::span<const int> captions,
                      const NoiseSchedule& schedule, int num_steps, Rng& rng, double eta = 0.0,
                      Tensor<T>* pre_clamp = nullptr);

struct CascadeResult {
  Tensor<float> video;                // at the last chain resolution
  std::vector<Tensor<float>> stages;  // base sample then each SSR output
  int ssr_applications = 0;
};

/// Base sample, then per SSR spec: antialiased x2 upsample, condition, sample.
/// The same ssr_net serves every stage.
CascadeResult cascade_sample(const Supernet& base_net, const Supernet& ssr_net, const SubnetSpec& base_spec,
                             const std::vector<SubnetSpec>& ssr_specs, std::span<const int> captions, int n,
                             const NoiseSchedule& schedule, int num_steps, Rng& rng);

/// Upsamples a [B,F,C,h,w] video to [B,F,C,res,res] with antialiased bilinear resizing.
Tensor<float> upsample_video(const Tensor<float>& low, int resolution);

}  // namespace sned
