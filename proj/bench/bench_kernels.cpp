// Serial reference kernels vs the OpenMP/BLAS ones on toy-sized shapes.
// Prints median milliseconds per call and the max abs difference of outputs.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "sned/numerics/kernels.hpp"
#include "sned/numerics/rng.hpp"

using namespace sned;
using namespace sned::kernels;

namespace {

std::vector<float> randn(Rng& rng, std::int64_t n, float scale = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * static_cast<float>(rng.normal());
  return v;
}

double median_ms(const std::function<void()>& f, int reps) {
  f();  // warm
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto a = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[static_cast<std::size_t>(reps / 2)];
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

void row(const char* name, double ref, double par, double diff) {
  std::printf("%-26s %10.3f %10.3f %8.2fx %10.2e\n", name, ref, par, ref / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference vs parallel kernel timings"};
  int reps = 5;
  int res = 32;
  app.add_option("--reps", reps, "Timed repetitions per kernel");
  app.add_option("--resolution", res, "Spatial size of the feature maps");
  CLI11_PARSE(app, argc, argv);

  init_threading();
  Rng rng(0);
  std::printf("threads %d, resolution %d\n", omp_get_max_threads(), res);
  std::printf("%-26s %10s %10s %9s %10s\n", "kernel", "ref ms", "par ms", "speedup", "max|diff|");

  {
    const Conv2dDims d{32, 16, 16, res, res, 3, 1, 1};
    const auto x = randn(rng, d.batch * d.in_channels * d.height * d.width);
    const auto w = randn(rng, d.out_channels * d.in_channels * 9, 0.1f);
    const auto b = randn(rng, d.out_channels);
    const auto ny = d.batch * d.out_channels * d.out_height() * d.out_width();
    std::vector<float> y0(ny), y1(ny);
    const double r = median_ms([&] { reference::conv2d_forward(d, x.data(), w.data(), b.data(), y0.data()); }, reps);
    const double p = median_ms([&] { parallel::conv2d_forward(d, x.data(), w.data(), b.data(), y1.data()); }, reps);
    row("conv2d_forward 3x3", r, p, max_diff(y0, y1));

    const auto dy = randn(rng, ny);
    std::vector<float> dx0(x.size()), dw0(w.size()), db0(b.size()), dx1(x.size()), dw1(w.size()), db1(b.size());
    const auto zero = [](auto&... v) { (std::fill(v.begin(), v.end(), 0.0f), ...); };
    const double rb = median_ms(
        [&] {
          zero(dx0, dw0, db0);
          reference::conv2d_backward(d, x.data(), w.data(), dy.data(), dx0.data(), dw0.data(), db0.data());
        },
        reps);
    const double pb = median_ms(
        [&] {
          zero(dx1, dw1, db1);
          parallel::conv2d_backward(d, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
        },
        reps);
    row("conv2d_backward 3x3", rb, pb, std::max(max_diff(dx0, dx1), max_diff(dw0, dw1) / 100));
  }
  {
    const LinearDims d{32 * res * res, 32, 64};
    const auto x = randn(rng, d.rows * d.in_features);
    const auto w = randn(rng, d.out_features * d.in_features, 0.1f);
    const auto b = randn(rng, d.out_features);
    std::vector<float> y0(static_cast<std::size_t>(d.rows * d.out_features)), y1(y0.size());
    const double r = median_ms([&] { reference::linear_forward(d, x.data(), w.data(), b.data(), y0.data()); }, reps);
    const double p = median_ms([&] { parallel::linear_forward(d, x.data(), w.data(), b.data(), y1.data()); }, reps);
    row("linear_forward", r, p, max_diff(y0, y1));
  }
  {
    const GroupNormDims d{32, 32, res * res, 4};
    const auto x = randn(rng, d.batch * d.channels * d.spatial);
    const auto g = randn(rng, d.channels), be = randn(rng, d.channels);
    std::vector<float> y0(x.size()), y1(x.size()), m(static_cast<std::size_t>(d.batch * d.groups)), s(m.size());
    const double r =
        median_ms([&] { reference::group_norm_forward(d, x.data(), g.data(), be.data(), 1e-5f, y0.data(), m.data(), s.data()); }, reps);
    const double p =
        median_ms([&] { parallel::group_norm_forward(d, x.data(), g.data(), be.data(), 1e-5f, y1.data(), m.data(), s.data()); }, reps);
    row("group_norm_forward", r, p, max_diff(y0, y1));
  }
  {
    // spatial self-attention: 8 videos x 4 frames, res*res tokens
    const AttentionDims d{32, res * res, res * res, 16, 2};
    const auto n = d.batch * d.queries * d.dim;
    const auto q = randn(rng, n), k = randn(rng, n), v = randn(rng, n);
    std::vector<float> o0(static_cast<std::size_t>(n)), o1(o0.size());
    std::vector<float> p0(static_cast<std::size_t>(d.batch * d.heads * d.queries * d.keys)), p1(p0.size());
    const double r = median_ms([&] { reference::attention_forward(d, q.data(), k.data(), v.data(), o0.data(), p0.data()); }, reps);
    const double p = median_ms([&] { parallel::attention_forward(d, q.data(), k.data(), v.data(), o1.data(), p1.data()); }, reps);
    row("attention_forward", r, p, max_diff(o0, o1));

    const auto dout = randn(rng, n);
    std::vector<float> dq0(o0.size()), dk0(o0.size()), dv0(o0.size()), dq1(o0.size()), dk1(o0.size()), dv1(o0.size());
    const auto zero = [](auto&... t) { (std::fill(t.begin(), t.end(), 0.0f), ...); };
    const double rb = median_ms(
        [&] {
          zero(dq0, dk0, dv0);
          reference::attention_backward(d, q.data(), k.data(), v.data(), p0.data(), dout.data(), dq0.data(), dk0.data(), dv0.data());
        },
        reps);
    const double pb = median_ms(
        [&] {
          zero(dq1, dk1, dv1);
          parallel::attention_backward(d, q.data(), k.data(), v.data(), p1.data(), dout.data(), dq1.data(), dk1.data(), dv1.data());
        },
        reps);
    row("attention_backward", rb, pb, std::max({max_diff(dq0, dq1), max_diff(dk0, dk1), max_diff(dv0, dv1)}));
  }
  {
    const std::int64_t n = 32 * 32 * res * res;
    const auto x = randn(rng, n, 3.0f);
    std::vector<float> y0(x.size()), y1(x.size());
    const double r = median_ms([&] { reference::silu_forward(n, x.data(), y0.data()); }, reps);
    const double p = median_ms([&] { parallel::silu_forward(n, x.data(), y1.data()); }, reps);
    row("silu_forward", r, p, max_diff(y0, y1));
  }
  return 0;
}
