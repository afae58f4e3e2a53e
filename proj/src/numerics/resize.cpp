#include "sned/numerics/resize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sned {
namespace {

struct Taps {
  std::vector<std::int64_t> first;  // per output index
  std::vector<std::vector<double>> weights;
};

Taps make_taps(std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double support = std::max(1.0, scale);
  Taps taps;
  taps.first.resize(static_cast<std::size_t>(out));
  taps.weights.resize(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * scale;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(center - support)));
    const auto hi = std::min<std::int64_t>(in - 1, static_cast<std::int64_t>(std::ceil(center + support)));
    std::vector<double> w;
    double total = 0.0;
    for (std::int64_t j = lo; j <= hi; ++j) {
      const double u = (static_cast<double>(j) + 0.5 - center) / support;
      const double v = std::max(0.0, 1.0 - std::abs(u));
      w.push_back(v);
      total += v;
    }
    for (auto& v : w) v /= total;
    taps.first[static_cast<std::size_t>(i)] = lo;
    taps.weights[static_cast<std::size_t>(i)] = std::move(w);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear_antialiased(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize: output size must be >= 1");
  if (input.rank() < 2) throw ShapeError("resize: input needs at least 2 axes, got " + shape_str(input.shape()));
  const auto in_h = input.shape()[input.rank() - 2];
  const auto in_w = input.shape()[input.rank() - 1];
  if (in_h == out_h && in_w == out_w) return input;

  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor<T> out(out_shape);
  const auto planes = input.numel() / (in_h * in_w);
  const Taps th = make_taps(in_h, out_h);
  const Taps tw = make_taps(in_w, out_w);

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = input.data() + p * in_h * in_w;
    std::vector<double> tmp(static_cast<std::size_t>(in_h * out_w));
    for (std::int64_t y = 0; y < in_h; ++y)
      for (std::int64_t x = 0; x < out_w; ++x) {
        const auto& w = tw.weights[static_cast<std::size_t>(x)];
        const auto f = tw.first[static_cast<std::size_t>(x)];
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * static_cast<double>(src[y * in_w + f + static_cast<std::int64_t>(k)]);
        tmp[static_cast<std::size_t>(y * out_w + x)] = acc;
      }
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const auto& w = th.weights[static_cast<std::size_t>(y)];
      const auto f = th.first[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k)
          acc += w[k] * tmp[static_cast<std::size_t>((f + static_cast<std::int64_t>(k)) * out_w + x)];
        dst[y * out_w + x] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template Tensor<float> resize_bilinear_antialiased<float>(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> resize_bilinear_antialiased<double>(const Tensor<double>&, std::int64_t, std::int64_t);

}  // namespace sned
