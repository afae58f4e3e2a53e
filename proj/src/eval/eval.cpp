#include "sned/eval/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <Eigen/Dense>

#include "sned/model/cost.hpp"
#include "sned/model/forward.hpp"
#include "sned/numerics/kernels.hpp"
#include "sned/numerics/linalg.hpp"

namespace sned {

FeatureExtractor FeatureExtractor::make(std::uint64_t seed, int in_channels) {
  if (in_channels < 1) throw std::invalid_argument("feature extractor needs at least one input channel");
  FeatureExtractor fx;
  fx.seed = seed;
  fx.in_channels = in_channels;
  Rng root(seed);
  int cin = in_channels;
  for (int l = 0; l < 3; ++l) {
    const int cout = kWidths[l];
    Tensor<float> w(Shape{cout, cin, 3, 3});
    Tensor<float> b(Shape{cout});
    Rng r = root.fork(static_cast<std::uint64_t>(l));
    // He-normal keeps activations O(1) through the SiLU stack
    r.fill_normal(std::span<float>(w.data(), w.numel()), std::sqrt(2.0 / (9.0 * cin)));
    r.fill_uniform(std::span<float>(b.data(), b.numel()), -0.1, 0.1);
    fx.weights.push_back(std::move(w));
    fx.biases.push_back(std::move(b));
    cin = cout;
  }
  return fx;
}

Tensor<double> extract_features(const Tensor<float>& videos, const FeatureExtractor& fx) {
  const Shape& s = videos.shape();
  if (s.size() != 5) throw ShapeError("extract_features expects [n,F,C,H,W]");
  if (s[2] != fx.in_channels) throw ShapeError("extract_features: channel count does not match the extractor");
  for (std::int64_t i = 0; i < videos.numel(); ++i) {
    const float v = videos[i];
    if (!std::isfinite(v)) throw NumericError("extract_features: non-finite input");
    if (v < -1e-6f || v > 1.0f + 1e-6f) throw std::invalid_argument("extract_features: videos must lie in [0,1]");
  }
  const std::int64_t n = s[0], F = s[1];
  std::int64_t C = s[2], H = s[3], W = s[4];
  std::vector<float> cur(videos.data(), videos.data() + videos.numel());
  for (int l = 0; l < 3; ++l) {
    const kernels::Conv2dDims d{n * F, C, FeatureExtractor::kWidths[l], H, W, 3, 2, 1};
    const std::int64_t Ho = d.out_height(), Wo = d.out_width(), Co = d.out_channels;
    std::vector<float> y(static_cast<std::size_t>(n * F * Co * Ho * Wo));
    kernels::parallel::conv2d_forward(d, cur.data(), fx.weights[l].data(), fx.biases[l].data(), y.data());
    // centered 3-frame mean, window clipped at the clip ends
    const std::int64_t frame = Co * Ho * Wo;
    std::vector<float> z(y.size());
    for (std::int64_t v = 0; v < n; ++v)
      for (std::int64_t f = 0; f < F; ++f) {
        const std::int64_t lo = std::max<std::int64_t>(0, f - 1), hi = std::min<std::int64_t>(F - 1, f + 1);
        const float inv = 1.0f / static_cast<float>(hi - lo + 1);
        float* out = z.data() + (v * F + f) * frame;
        for (std::int64_t g = lo; g <= hi; ++g) {
          const float* in = y.data() + (v * F + g) * frame;
          for (std::int64_t k = 0; k < frame; ++k) out[k] += in[k];
        }
        for (std::int64_t k = 0; k < frame; ++k) {
          const float a = out[k] * inv;
          out[k] = a / (1.0f + std::exp(-a));
        }
      }
    cur.swap(z);
    C = Co;
    H = Ho;
    W = Wo;
  }
  Tensor<double> feats(Shape{n, FeatureExtractor::kDim});
  const std::int64_t plane = H * W;
  for (std::int64_t v = 0; v < n; ++v)
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (std::int64_t f = 0; f < F; ++f) {
        const float* p = cur.data() + ((v * F + f) * C + c) * plane;
        for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
      }
      const double m = acc / static_cast<double>(F * plane);
      if (!std::isfinite(m)) throw NumericError("extract_features: non-finite activation");
      feats[v * FeatureExtractor::kDim + c] = m;
    }
  return feats;
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat as_matrix(const Tensor<double>& t) {
  if (t.shape().size() != 2) throw ShapeError("feature sets must be [n, d]");
  return Eigen::Map<const Mat>(t.data(), t.shape()[0], t.shape()[1]);
}

Tensor<double> as_tensor(const Mat& m) {
  Tensor<double> t(Shape{m.rows(), m.cols()});
  Eigen::Map<Mat>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

Mat from_tensor(const Tensor<double>& t) { return Eigen::Map<const Mat>(t.data(), t.shape()[0], t.shape()[1]); }

void moments(const Mat& x, Eigen::VectorXd& mu, Mat& cov) {
  if (x.rows() < 2) throw std::invalid_argument("frechet_distance needs at least 2 samples per set");
  mu = x.colwise().mean().transpose();
  const Mat c = x.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
}

bool degenerate(const Mat& cov) {
  const Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  const double hi = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  return es.eigenvalues().minCoeff() <= 1e-12 * hi;
}

}  // namespace

double frechet_distance(const Tensor<double>& a, const Tensor<double>& b, bool* regularized) {
  const Mat xa = as_matrix(a), xb = as_matrix(b);
  if (xa.cols() != xb.cols()) throw ShapeError("frechet_distance: feature dimensions differ");
  const auto d = xa.cols();
  if (xa.rows() < 2 * d || xb.rows() < 2 * d) {
    std::cerr << "warning: frechet_distance with fewer than 2*d samples per set (" << xa.rows() << ", " << xb.rows()
              << " for d=" << d << ")\n";
  }
  Eigen::VectorXd ma, mb;
  Mat sa, sb;
  moments(xa, ma, sa);
  moments(xb, mb, sb);
  const bool reg = degenerate(sa) || degenerate(sb);
  if (reg) {
    std::cerr << "warning: singular covariance in frechet_distance; adding 1e-6*I\n";
    sa += 1e-6 * Mat::Identity(d, d);
    sb += 1e-6 * Mat::Identity(d, d);
  }
  if (regularized) *regularized = reg;
  const Mat ra = from_tensor(sym_psd_sqrt(as_tensor(sa)));
  Mat inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  const Mat cross = from_tensor(sym_psd_sqrt(as_tensor(inner)));
  const double fd = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, fd);
}

namespace {

// Lexicographic order on (rows, cols, data) so both argument orders reduce
// in the same sequence.
bool precedes(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return a.shape() < b.shape();
  return std::lexicographical_compare(a.data(), a.data() + a.numel(), b.data(), b.data() + b.numel());
}

double mean_kernel(const Mat& x, const Mat& y) {
  const double d = static_cast<double>(x.cols());
  const Mat g = (x * y.transpose()).array() / d + 1.0;
  return g.array().cube().sum() / static_cast<double>(x.rows() * y.rows());
}

}  // namespace

double kernel_distance(const Tensor<double>& a, const Tensor<double>& b) {
  if (precedes(b, a)) return kernel_distance(b, a);
  const Mat xa = as_matrix(a), xb = as_matrix(b);
  if (xa.cols() != xb.cols()) throw ShapeError("kernel_distance: feature dimensions differ");
  if (xa.rows() < 1 || xb.rows() < 1) throw std::invalid_argument("kernel_distance needs non-empty sets");
  return mean_kernel(xa, xa) + mean_kernel(xb, xb) - 2.0 * mean_kernel(xa, xb);
}

std::vector<ValBatch> val_batches(const VideoDataset& val, int resolution, int n_batches, std::uint64_t seed,
                                  const NoiseSchedule& schedule, bool ssr, int batch_size) {
  if (n_batches < 1 || batch_size < 1) throw std::invalid_argument("val_batches needs n_batches, batch_size >= 1");
  if (val.n < 1) throw std::invalid_argument("validation set is empty");
  val.tier(resolution);
  Rng root(seed);
  std::vector<ValBatch> out;
  for (int b = 0; b < n_batches; ++b) {
    std::vector<int> idx;
    for (int i = 0; i < batch_size; ++i) idx.push_back(static_cast<int>((static_cast<std::int64_t>(b) * batch_size + i) % val.n));
    ValBatch vb{gather_batch(val, resolution, idx, ssr), std::nullopt, {}};
    if (vb.batch.low) vb.cond = upsample_video(*vb.batch.low, resolution);
    Rng r = root.fork(static_cast<std::uint64_t>(b));
    vb.draw = draw_noise<float>(r, vb.batch.videos.shape(), schedule);
    out.push_back(std::move(vb));
  }
  return out;
}

double subnet_val_loss(const Supernet& net, const SubnetSpec& spec, const std::vector<ValBatch>& batches,
                       const NoiseSchedule& schedule) {
  if (batches.empty()) throw std::invalid_argument("subnet_val_loss needs at least one batch");
  double total = 0;
  for (const auto& vb : batches) {
    Tape<float> tape;
    SubnetBinding<float> bind(net, spec, false);
    const LossBatch<float> lb{vb.batch.videos, vb.batch.captions, vb.cond ? &*vb.cond : nullptr};
    total += static_cast<double>(tape.value(training_loss(tape, bind, lb, vb.draw, schedule))[0]);
  }
  return total / static_cast<double>(batches.size());
}

double subnet_val_loss(const Supernet& net, const SubnetSpec& spec, const VideoDataset& val, int n_batches,
                       std::uint64_t seed, const NoiseSchedule& schedule, int batch_size) {
  const bool ssr = net.config.role == Role::SSR;
  return subnet_val_loss(net, spec, val_batches(val, spec.resolution, n_batches, seed, schedule, ssr, batch_size), schedule);
}

void to_json(nlohmann::json& j, const Timing& t) {
  j = nlohmann::json{{"median_ms", t.median_ms}, {"p10_ms", t.p10_ms}, {"p90_ms", t.p90_ms}};
}

void to_json(nlohmann::json& j, const BenchResult& r) {
  j = nlohmann::json{{"params", r.params}, {"flops", r.flops}, {"sampling_flops", r.sampling_flops},
                     {"forward", r.forward}, {"sampling", r.sampling}};
}

Timing summarize_times(std::vector<double> ms) {
  if (ms.empty()) throw std::invalid_argument("no timings to summarize");
  std::sort(ms.begin(), ms.end());
  const auto rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(ms.size())));
    return ms[std::clamp<std::size_t>(k, 1, ms.size()) - 1];
  };
  return Timing{rank(0.5), rank(0.1), rank(0.9)};
}

BenchResult bench(const Supernet& net, const SubnetSpec& spec, const NoiseSchedule& schedule, const BenchOptions& opt) {
  if (opt.reps < 3) throw std::invalid_argument("bench needs reps >= 3");
  if (opt.warm < 0 || opt.batch < 1 || opt.ddim_steps < 2) throw std::invalid_argument("bad bench options");
  check_spec_dims(net.config, spec);
  const ModelConfig& c = net.config;
  BenchResult res;
  res.params = param_count(net, spec);
  res.flops = static_cast<double>(flop_count(net, spec));
  res.sampling_flops = res.flops * opt.ddim_steps;

  Rng rng(opt.seed);
  const Shape shape{opt.batch, c.frames, c.in_channels, spec.resolution, spec.resolution};
  Tensor<float> x(shape);
  rng.fill_normal(std::span<float>(x.data(), x.numel()));
  std::optional<Tensor<float>> cond;
  if (c.role == Role::SSR) {
    cond.emplace(shape);
    rng.fill_uniform(std::span<float>(cond->data(), cond->numel()), 0.0, 1.0);
  }
  const std::vector<int> t(static_cast<std::size_t>(opt.batch), schedule.T / 2 + 1);
  const std::vector<int> caps(static_cast<std::size_t>(opt.batch * kCaptionLength), 0);

  using clock = std::chrono::steady_clock;
  const auto time_runs = [&](auto&& fn) {
    std::vector<double> ms;
    for (int i = 0; i < opt.warm + opt.reps; ++i) {
      const auto t0 = clock::now();
      fn();
      const double dt = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      if (i >= opt.warm) ms.push_back(dt);
    }
    return summarize_times(std::move(ms));
  };
  res.forward = time_runs([&] { (void)forward(net, spec, x, t, caps, cond ? &*cond : nullptr); });
  const Denoiser<float> model = make_denoiser(net, spec, caps);
  res.sampling = time_runs([&] {
    Rng r(opt.seed);
    (void)ddim_sample<float>(model, shape, cond ? &*cond : nullptr, schedule, opt.ddim_steps, r);
  });
  return res;
}

void to_json(nlohmann::json& j, const ReportEntry& e) {
  j = nlohmann::json{{"model", e.model},       {"params", e.params},     {"proxy_fd", e.proxy_fd},
                     {"proxy_kd", e.proxy_kd}, {"val_loss", e.val_loss}, {"time_s", e.time_s}};
}

namespace {

std::string g4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

}  // namespace

Report report_table(std::vector<ReportEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("report_table needs at least one entry");
  std::stable_sort(entries.begin(), entries.end(), [](const ReportEntry& a, const ReportEntry& b) {
    if (a.params != b.params) return a.params > b.params;
    return a.model < b.model;
  });
  const std::vector<std::string> header{"Model", "Params", "Proxy-FD", "Proxy-KD", "ValLoss", "Time"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& e : entries) {
    cells.push_back({e.model, g4(static_cast<double>(e.params)), g4(e.proxy_fd), g4(e.proxy_kd), g4(e.val_loss), g4(e.time_s)});
  }
  Report r;
  r.rows = entries;
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      r.csv += (c ? "," : "") + csv_cell(row[c]);
      std::string cell = row[c];
      const std::string pad(width[c] - cell.size(), ' ');
      r.text += c == 0 ? cell + pad : "  " + pad + cell;  // text left, numbers right
    }
    r.csv += "\r\n";
    r.text += '\n';
  }
  r.json = nlohmann::json{{"columns", header}, {"rows", entries}};
  return r;
}

void write_report(const Report& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto put = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << body;
  };
  put("table.csv", report.csv);
  put("table.txt", report.text);
  put("table.json", report.json.dump(2) + "\n");
}

}  // namespace sned
