#include "sned/numerics/ops.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "sned/numerics/kernels.hpp"

namespace sned::ops {
namespace {

namespace kp = kernels::parallel;

[[noreturn]] void mismatch(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

void expect_rank(const std::string& op, const char* name, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    mismatch(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename T>
T* grad_ptr(Tape<T>& tape, Var v) {
  Tensor<T>* g = tape.accumulator(v);
  return g ? g->data() : nullptr;
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride, int padding) {
  const std::string op = "conv2d";
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(w).shape();
  expect_rank(op, "input", xs, 4);
  expect_rank(op, "weight", ws, 4);
  if (ws[2] != ws[3] || ws[2] % 2 == 0) mismatch(op, "kernel must be square with odd size, got " + shape_str(ws));
  if (stride < 1 || padding < 0) mismatch(op, "stride must be >= 1 and padding >= 0");
  if (xs[1] != ws[1]) {
    mismatch(op, "input channels (dim 1) " + std::to_string(xs[1]) + " != weight in_channels (dim 1) " +
                     std::to_string(ws[1]));
  }
  if (b.valid() && tape.value(b).shape() != Shape{ws[0]}) {
    mismatch(op, "bias shape " + shape_str(tape.value(b).shape()) + " != [out_channels=" + std::to_string(ws[0]) + "]");
  }
  const kernels::Conv2dDims d{xs[0], xs[1], ws[0], xs[2], xs[3], ws[2], stride, padding};
  if (d.out_height() < 1 || d.out_width() < 1) mismatch(op, "input height/width smaller than kernel");
  Tensor<T> y(Shape{d.batch, d.out_channels, d.out_height(), d.out_width()});
  kp::conv2d_forward<T>(d, tape.value(x).data(), tape.value(w).data(), b.valid() ? tape.value(b).data() : nullptr,
                        y.data());
  return tape.record(op, std::move(y), {x, w, b}, [x, w, b, d](Tape<T>& t, const Tensor<T>& g) {
    kp::conv2d_backward<T>(d, t.value(x).data(), t.value(w).data(), g.data(), grad_ptr(t, x), grad_ptr(t, w),
                           grad_ptr(t, b));
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const std::string op = "linear";
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(w).shape();
  expect_rank(op, "weight", ws, 2);
  if (xs.empty() || xs.back() != ws[1]) {
    mismatch(op, "trailing input dim of " + shape_str(xs) + " != weight d_in (dim 1) " + std::to_string(ws[1]));
  }
  if (b.valid() && tape.value(b).shape() != Shape{ws[0]}) {
    mismatch(op, "bias shape " + shape_str(tape.value(b).shape()) + " != [d_out=" + std::to_string(ws[0]) + "]");
  }
  const kernels::LinearDims d{tape.value(x).numel() / ws[1], ws[1], ws[0]};
  Shape ys = xs;
  ys.back() = ws[0];
  Tensor<T> y(ys);
  kp::linear_forward<T>(d, tape.value(x).data(), tape.value(w).data(), b.valid() ? tape.value(b).data() : nullptr,
                        y.data());
  return tape.record(op, std::move(y), {x, w, b}, [x, w, b, d](Tape<T>& t, const Tensor<T>& g) {
    kp::linear_backward<T>(d, t.value(x).data(), t.value(w).data(), g.data(), grad_ptr(t, x), grad_ptr(t, w),
                           grad_ptr(t, b));
  });
}

template <typename T>
Var group_norm(Tape<T>& tape, Var x, int groups, Var gamma, Var beta, double eps) {
  const std::string op = "group_norm";
  const auto& xs = tape.value(x).shape();
  if (xs.size() < 2) mismatch(op, "input must be [B,C,...], got " + shape_str(xs));
  if (groups < 1 || xs[1] % groups != 0) {
    mismatch(op, "groups " + std::to_string(groups) + " does not divide channels (dim 1) " + std::to_string(xs[1]));
  }
  if (!(eps > 0)) mismatch(op, "eps must be positive");
  if (tape.value(gamma).shape() != Shape{xs[1]} || tape.value(beta).shape() != Shape{xs[1]}) {
    mismatch(op, "gamma/beta must have shape [" + std::to_string(xs[1]) + "]");
  }
  const kernels::GroupNormDims d{xs[0], xs[1], tape.value(x).numel() / (xs[0] * xs[1]), groups};
  Tensor<T> y(xs);
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(2 * d.batch * d.groups));
  T* mean = stats->data();
  T* rstd = mean + d.batch * d.groups;
  kp::group_norm_forward<T>(d, tape.value(x).data(), tape.value(gamma).data(), tape.value(beta).data(),
                            static_cast<T>(eps), y.data(), mean, rstd);
  return tape.record(op, std::move(y), {x, gamma, beta}, [x, gamma, beta, d, stats](Tape<T>& t, const Tensor<T>& g) {
    const T* mean = stats->data();
    kp::group_norm_backward<T>(d, t.value(x).data(), t.value(gamma).data(), mean, mean + d.batch * d.groups,
                               g.data(), grad_ptr(t, x), grad_ptr(t, gamma), grad_ptr(t, beta));
  });
}

template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q, Var k, Var v, int heads) {
  const std::string op = "multi_head_attention";
  const auto& qs = tape.value(q).shape();
  const auto& ks = tape.value(k).shape();
  const auto& vs = tape.value(v).shape();
  expect_rank(op, "q", qs, 3);
  expect_rank(op, "k", ks, 3);
  expect_rank(op, "v", vs, 3);
  if (ks != vs) mismatch(op, "k shape " + shape_str(ks) + " != v shape " + shape_str(vs));
  if (qs[0] != ks[0]) mismatch(op, "batch (dim 0) of q and k differ");
  if (qs[2] != ks[2]) mismatch(op, "feature dim (dim 2) of q and k differ");
  if (heads < 1 || qs[2] % heads != 0) {
    mismatch(op, "heads " + std::to_string(heads) + " does not divide d " + std::to_string(qs[2]));
  }
  const kernels::AttentionDims d{qs[0], qs[1], ks[1], qs[2], heads};
  Tensor<T> out(qs);
  if (!tape.requires_grad(q) && !tape.requires_grad(k) && !tape.requires_grad(v)) {
    // inference: probabilities are not kept, so process one item at a time
    const kernels::AttentionDims one{1, qs[1], ks[1], qs[2], heads};
    std::vector<T> scratch(static_cast<std::size_t>(one.heads * one.queries * one.keys));
    for (std::int64_t b = 0; b < d.batch; ++b) {
      kp::attention_forward<T>(one, tape.value(q).data() + b * d.queries * d.dim, tape.value(k).data() + b * d.keys * d.dim,
                               tape.value(v).data() + b * d.keys * d.dim, out.data() + b * d.queries * d.dim,
                               scratch.data());
    }
    return tape.record(op, std::move(out), {q, k, v}, nullptr);
  }
  // fully overwritten by the kernel, so skip zero-filling a potentially huge buffer
  std::shared_ptr<T[]> probs(new T[static_cast<std::size_t>(d.batch * d.heads * d.queries * d.keys)]);
  kp::attention_forward<T>(d, tape.value(q).data(), tape.value(k).data(), tape.value(v).data(), out.data(),
                           probs.get());
  return tape.record(op, std::move(out), {q, k, v}, [q, k, v, d, probs](Tape<T>& t, const Tensor<T>& g) {
    kp::attention_backward<T>(d, t.value(q).data(), t.value(k).data(), t.value(v).data(), probs.get(), g.data(),
                              grad_ptr(t, q), grad_ptr(t, k), grad_ptr(t, v));
  });
}

template <typename T>
Var silu(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  kp::silu_forward<T>(xv.numel(), xv.data(), y.data());
  return tape.record("silu", std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    if (T* dx = grad_ptr(t, x)) kp::silu_backward<T>(g.numel(), t.value(x).data(), g.data(), dx);
  });
}

template <typename T>
Var softmax(Tape<T>& tape, Var x, int axis) {
  const auto& xv = tape.value(x);
  const auto& s = xv.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) mismatch("softmax", "axis out of range for " + shape_str(s));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= s[static_cast<std::size_t>(i)];
  const std::int64_t len = s[static_cast<std::size_t>(axis)];
  Tensor<T> y(s);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const auto base = o * len * inner + in;
      T mx = xv[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T z = 0;
      for (std::int64_t j = 0; j < len; ++j) {
        y[base + j * inner] = std::exp(xv[base + j * inner] - mx);
        z += y[base + j * inner];
      }
      for (std::int64_t j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  auto self = std::make_shared<Var>();
  const Var out = tape.record("softmax", std::move(y), {x},
                              [x, self, outer, inner, len](Tape<T>& t, const Tensor<T>& g) {
                                T* dx = grad_ptr(t, x);
                                if (!dx) return;
                                const auto& y = t.value(*self);
                                for (std::int64_t o = 0; o < outer; ++o)
                                  for (std::int64_t in = 0; in < inner; ++in) {
                                    const auto base = o * len * inner + in;
                                    T dot = 0;
                                    for (std::int64_t j = 0; j < len; ++j)
                                      dot += g[base + j * inner] * y[base + j * inner];
                                    for (std::int64_t j = 0; j < len; ++j)
                                      dx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
                                  }
                              });
  *self = out;
  return out;
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) mismatch("add", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> y(av.shape());
  const auto n = av.numel();
  const T* pa = av.data();
  const T* pb = bv.data();
  T* py = y.data();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
  return tape.record("add", std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (Var v : {a, b})
      if (T* d = grad_ptr(t, v)) {
        const T* pg = g.data();
        const auto n = g.numel();
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; ++i) d[i] += pg[i];
      }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) mismatch("mul", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> y(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] * bv[i];
  return tape.record("mul", std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (T* da = grad_ptr(t, a))
      for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * t.value(b)[i];
    if (T* db = grad_ptr(t, b))
      for (std::int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * t.value(a)[i];
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> y = tape.value(a);
  for (auto& e : y.values()) e *= factor;
  return tape.record("scale", std::move(y), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, a))
      for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += factor * g[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  T s = 0;
  for (T e : tape.value(a).values()) s += e;
  return tape.record("sum", Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, a))
      for (std::int64_t i = 0; i < t.value(a).numel(); ++i) d[i] += g[0];
  });
}

template <typename T>
Var mse(Tape<T>& tape, Var pred, Var target) {
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  if (p.shape() != q.shape()) mismatch("mse", shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  double acc = 0;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    const double e = static_cast<double>(p[i]) - static_cast<double>(q[i]);
    acc += e * e;
  }
  const auto n = p.numel();
  return tape.record("mse", Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {pred, target},
                     [pred, target, n](Tape<T>& t, const Tensor<T>& g) {
                       const T c = T{2} * g[0] / static_cast<T>(n);
                       const auto& p = t.value(pred);
                       const auto& q = t.value(target);
                       if (T* dp = grad_ptr(t, pred))
                         for (std::int64_t i = 0; i < n; ++i) dp[i] += c * (p[i] - q[i]);
                       if (T* dq = grad_ptr(t, target))
                         for (std::int64_t i = 0; i < n; ++i) dq[i] -= c * (p[i] - q[i]);
                     });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> y = tape.value(a).reshaped(std::move(shape));
  return tape.record("reshape", std::move(y), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, a))
      for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

template <typename T>
Var add_frame_bias(Tape<T>& tape, Var x, Var bias, int frames) {
  const auto& xs = tape.value(x).shape();
  const auto& bs = tape.value(bias).shape();
  expect_rank("add_frame_bias", "input", xs, 4);
  expect_rank("add_frame_bias", "bias", bs, 2);
  if (bs[1] != xs[1] || bs[0] * frames != xs[0]) {
    mismatch("add_frame_bias", "bias " + shape_str(bs) + " incompatible with input " + shape_str(xs));
  }
  const auto nf = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> y = tape.value(x);
  const auto& bv = tape.value(bias);
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < nf; ++n)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T add = bv[(n / frames) * c + ch];
      T* row = y.data() + (n * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) row[i] += add;
    }
  return tape.record("add_frame_bias", std::move(y), {x, bias}, [x, bias, nf, c, hw, frames](Tape<T>& t, const Tensor<T>& g) {
    if (T* dx = grad_ptr(t, x))
      for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    if (T* db = grad_ptr(t, bias))
      for (std::int64_t n = 0; n < nf; ++n)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T* row = g.data() + (n * c + ch) * hw;
          T s = 0;
          for (std::int64_t i = 0; i < hw; ++i) s += row[i];
          db[(n / frames) * c + ch] += s;
        }
  });
}

namespace {

// Copies between [N,C,S] and [N,S,C] layouts.
template <typename T>
void transpose_cs(std::int64_t n, std::int64_t c, std::int64_t s, const T* src, T* dst, bool to_tokens, bool add) {
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < s; ++i) {
        const auto cs = (b * c + ch) * s + i;
        const auto sc = (b * s + i) * c + ch;
        const auto from = to_tokens ? cs : sc;
        const auto to = to_tokens ? sc : cs;
        if (add) {
          dst[to] += src[from];
        } else {
          dst[to] = src[from];
        }
      }
}

// [B*F,C,HW] <-> [B*HW,F,C]
template <typename T>
void transpose_temporal(std::int64_t batch, std::int64_t frames, std::int64_t c, std::int64_t hw, const T* src, T* dst,
                        bool to_tokens, bool add) {
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t f = 0; f < frames; ++f)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < hw; ++i) {
          const auto video = ((b * frames + f) * c + ch) * hw + i;
          const auto token = ((b * hw + i) * frames + f) * c + ch;
          const auto from = to_tokens ? video : token;
          const auto to = to_tokens ? token : video;
          if (add) {
            dst[to] += src[from];
          } else {
            dst[to] = src[from];
          }
        }
}

}  // namespace

template <typename T>
Var to_spatial_tokens(Tape<T>& tape, Var x) {
  const auto xs = tape.value(x).shape();
  expect_rank("to_spatial_tokens", "input", xs, 4);
  const auto n = xs[0], c = xs[1], s = xs[2] * xs[3];
  Tensor<T> y(Shape{n, s, c});
  transpose_cs(n, c, s, tape.value(x).data(), y.data(), true, false);
  return tape.record("to_spatial_tokens", std::move(y), {x}, [x, n, c, s](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, x)) transpose_cs(n, c, s, g.data(), d, false, true);
  });
}

template <typename T>
Var from_spatial_tokens(Tape<T>& tape, Var tok, int height, int width) {
  const auto ts = tape.value(tok).shape();
  expect_rank("from_spatial_tokens", "tokens", ts, 3);
  if (ts[1] != static_cast<std::int64_t>(height) * width) mismatch("from_spatial_tokens", "token count != H*W");
  const auto n = ts[0], s = ts[1], c = ts[2];
  Tensor<T> y(Shape{n, c, height, width});
  transpose_cs(n, c, s, tape.value(tok).data(), y.data(), false, false);
  return tape.record("from_spatial_tokens", std::move(y), {tok}, [tok, n, c, s](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, tok)) transpose_cs(n, c, s, g.data(), d, true, true);
  });
}

template <typename T>
Var to_temporal_tokens(Tape<T>& tape, Var x, int frames) {
  const auto xs = tape.value(x).shape();
  expect_rank("to_temporal_tokens", "input", xs, 4);
  if (xs[0] % frames != 0) mismatch("to_temporal_tokens", "batch*frames (dim 0) not divisible by frames");
  const auto b = xs[0] / frames, c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> y(Shape{b * hw, frames, c});
  transpose_temporal(b, frames, c, hw, tape.value(x).data(), y.data(), true, false);
  return tape.record("to_temporal_tokens", std::move(y), {x}, [x, b, frames, c, hw](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, x)) transpose_temporal(b, static_cast<std::int64_t>(frames), c, hw, g.data(), d, false, true);
  });
}

template <typename T>
Var from_temporal_tokens(Tape<T>& tape, Var tok, int frames, int height, int width) {
  const auto ts = tape.value(tok).shape();
  expect_rank("from_temporal_tokens", "tokens", ts, 3);
  const std::int64_t hw = static_cast<std::int64_t>(height) * width;
  if (ts[1] != frames || ts[0] % hw != 0) mismatch("from_temporal_tokens", "token layout mismatch " + shape_str(ts));
  const auto b = ts[0] / hw, c = ts[2];
  Tensor<T> y(Shape{b * frames, c, height, width});
  transpose_temporal(b, static_cast<std::int64_t>(frames), c, hw, tape.value(tok).data(), y.data(), false, false);
  return tape.record("from_temporal_tokens", std::move(y), {tok}, [tok, b, frames, c, hw](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, tok)) transpose_temporal(b, static_cast<std::int64_t>(frames), c, hw, g.data(), d, true, true);
  });
}

template <typename T>
Var repeat_batch(Tape<T>& tape, Var x, int times) {
  const auto& xv = tape.value(x);
  Shape s = xv.shape();
  const auto item = xv.numel() / s[0];
  const auto batch = s[0];
  s[0] *= times;
  Tensor<T> y(s);
  for (std::int64_t b = 0; b < batch; ++b)
    for (int r = 0; r < times; ++r)
      std::copy(xv.data() + b * item, xv.data() + (b + 1) * item, y.data() + (b * times + r) * item);
  return tape.record("repeat_batch", std::move(y), {x}, [x, batch, item, times](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, x))
      for (std::int64_t b = 0; b < batch; ++b)
        for (int r = 0; r < times; ++r)
          for (std::int64_t i = 0; i < item; ++i) d[b * item + i] += g[(b * times + r) * item + i];
  });
}

template <typename T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
  const auto xs = tape.value(x).shape();
  expect_rank("upsample_nearest2x", "input", xs, 4);
  const auto planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor<T> y(Shape{xs[0], xs[1], 2 * h, 2 * w});
  const T* src = tape.value(x).data();
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = src[(p * h + i / 2) * w + j / 2];
  return tape.record("upsample_nearest2x", std::move(y), {x}, [x, planes, h, w](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, x))
#pragma omp parallel for schedule(static)
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < 2 * h; ++i)
          for (std::int64_t j = 0; j < 2 * w; ++j) d[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const auto as = tape.value(a).shape();
  const auto bs = tape.value(b).shape();
  expect_rank("concat_channels", "a", as, 4);
  expect_rank("concat_channels", "b", bs, 4);
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    mismatch("concat_channels", shape_str(as) + " vs " + shape_str(bs));
  }
  const auto n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor<T> y(Shape{n, ca + cb, as[2], as[3]});
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(av.data() + i * ca * hw, av.data() + (i + 1) * ca * hw, y.data() + i * (ca + cb) * hw);
    std::copy(bv.data() + i * cb * hw, bv.data() + (i + 1) * cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
  }
  return tape.record("concat_channels", std::move(y), {a, b}, [a, b, n, ca, cb, hw](Tape<T>& t, const Tensor<T>& g) {
    T* da = grad_ptr(t, a);
    T* db = grad_ptr(t, b);
    for (std::int64_t i = 0; i < n; ++i) {
      if (da)
        for (std::int64_t j = 0; j < ca * hw; ++j) da[i * ca * hw + j] += g[i * (ca + cb) * hw + j];
      if (db)
        for (std::int64_t j = 0; j < cb * hw; ++j) db[i * cb * hw + j] += g[(i * (ca + cb) + ca) * hw + j];
    }
  });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids, Shape prefix) {
  const auto ts = tape.value(table).shape();
  expect_rank("embedding", "table", ts, 2);
  if (shape_numel(prefix) != static_cast<std::int64_t>(ids.size())) mismatch("embedding", "ids do not fill prefix");
  const auto vocab = ts[0], dim = ts[1];
  std::vector<int> idv(ids.begin(), ids.end());
  for (int id : idv)
    if (id < 0 || id >= vocab) mismatch("embedding", "token id " + std::to_string(id) + " outside vocabulary");
  Shape s = std::move(prefix);
  s.push_back(dim);
  Tensor<T> y(s);
  const auto& tv = tape.value(table);
  for (std::size_t i = 0; i < idv.size(); ++i)
    std::copy(tv.data() + idv[i] * dim, tv.data() + (idv[i] + 1) * dim, y.data() + static_cast<std::int64_t>(i) * dim);
  return tape.record("embedding", std::move(y), {table}, [table, idv, dim](Tape<T>& t, const Tensor<T>& g) {
    if (T* d = grad_ptr(t, table))
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::int64_t j = 0; j < dim; ++j) d[idv[i] * dim + j] += g[static_cast<std::int64_t>(i) * dim + j];
  });
}

#define SNED_INSTANTIATE(T)                                                         \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                        \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                  \
  template Var group_norm<T>(Tape<T>&, Var, int, Var, Var, double);                 \
  template Var multi_head_attention<T>(Tape<T>&, Var, Var, Var, int);               \
  template Var silu<T>(Tape<T>&, Var);                                              \
  template Var softmax<T>(Tape<T>&, Var, int);                                      \
  template Var add<T>(Tape<T>&, Var, Var);                                          \
  template Var mul<T>(Tape<T>&, Var, Var);                                          \
  template Var scale<T>(Tape<T>&, Var, T);                                          \
  template Var sum<T>(Tape<T>&, Var);                                               \
  template Var mse<T>(Tape<T>&, Var, Var);                                          \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                    \
  template Var add_frame_bias<T>(Tape<T>&, Var, Var, int);                          \
  template Var to_spatial_tokens<T>(Tape<T>&, Var);                                 \
  template Var from_spatial_tokens<T>(Tape<T>&, Var, int, int);                     \
  template Var to_temporal_tokens<T>(Tape<T>&, Var, int);                           \
  template Var from_temporal_tokens<T>(Tape<T>&, Var, int, int, int);               \
  template Var repeat_batch<T>(Tape<T>&, Var, int);                                 \
  template Var upsample_nearest2x<T>(Tape<T>&, Var);                                \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                              \
  template Var embedding<T>(Tape<T>&, Var, std::span<const int>, Shape);

SNED_INSTANTIATE(float)
SNED_INSTANTIATE(double)
#undef SNED_INSTANTIATE

}  // namespace sned::ops
