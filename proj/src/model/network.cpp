#include "sned/model/network.hpp"

#include <cmath>
#include <stdexcept>

#include "sned/numerics/rng.hpp"

namespace sned {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_norm_param(const std::string& name) {
  return name.find(".gn") != std::string::npos;
}

template <typename T>
void init_layer(const LayerDesc& d, Tensor<T>& w, Rng rng) {
  const std::string& n = d.name;
  if (is_norm_param(n)) {
    w.fill(ends_with(n, ".g") ? T{1} : T{0});
    return;
  }
  if (n == "caption.embed") {
    rng.fill_normal(w.values());
    return;
  }
  if (d.shape.size() == 1) {  // bias
    w.fill(T{0});
    return;
  }
  double fan_in = 1.0;
  for (std::size_t a = 1; a < d.shape.size(); ++a) fan_in *= static_cast<double>(d.shape[a]);
  if (ends_with(n, ".wh") || ends_with(n, ".ws")) fan_in *= 2.0;  // two inputs summed
  double bound = 1.0 / std::sqrt(fan_in);
  if (n == "out.w") bound *= 0.1;
  rng.fill_uniform(w.values(), -bound, bound);
}

}  // namespace

template <typename T>
std::int64_t Network<T>::total_elements() const {
  std::int64_t n = 0;
  for (const auto& w : weights) n += w.numel();
  return n;
}

template <typename T>
Network<T> build_network(const ModelConfig& config, std::uint64_t seed) {
  Network<T> net{config, build_layout(config), {}};
  Rng root(seed);
  net.weights.reserve(net.layout.layers.size());
  for (std::size_t i = 0; i < net.layout.layers.size(); ++i) {
    const auto& d = net.layout.layers[i];
    Tensor<T> w(d.shape);
    init_layer(d, w, root.fork(i));
    net.weights.push_back(std::move(w));
  }
  return net;
}

void for_each_slice_offset(const Shape& full, const Shape& active,
                           const std::function<void(std::int64_t, std::int64_t)>& f) {
  const std::size_t r = full.size();
  if (active.size() != r) throw ShapeError("slice rank differs from array rank");
  for (std::size_t a = 0; a < r; ++a) {
    if (active[a] < 0 || active[a] > full[a]) throw ShapeError("slice exceeds array on dim " + std::to_string(a));
  }
  if (shape_numel(active) == 0) return;
  std::vector<std::int64_t> stride(r, 1);
  for (std::size_t a = r; a-- > 1;) stride[a - 1] = stride[a] * full[a];
  std::vector<std::int64_t> idx(r, 0);
  const std::int64_t inner = active[r - 1];
  std::int64_t s = 0;
  while (true) {
    std::int64_t base = 0;
    for (std::size_t a = 0; a + 1 < r; ++a) base += idx[a] * stride[a];
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, s++);
    // advance the outer multi-index
    std::size_t a = r - 1;
    while (a > 0) {
      --a;
      if (++idx[a] < active[a]) break;
      idx[a] = 0;
      if (a == 0) return;
    }
    if (r == 1) return;
  }
}

template <typename T>
SliceView<T>::SliceView(T* base, Shape full, Shape active) : base_(base), full_(std::move(full)), active_(std::move(active)) {
  if (full_.size() != active_.size()) throw ShapeError("slice rank differs from array rank");
  for (std::size_t a = 0; a < full_.size(); ++a) {
    if (active_[a] < 1 || active_[a] > full_[a]) throw ShapeError("slice exceeds array on dim " + std::to_string(a));
  }
}

template <typename T>
T& SliceView<T>::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != full_.size()) throw ShapeError("index rank mismatch");
  std::int64_t off = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= active_[a]) throw std::out_of_range("slice index out of range on dim " + std::to_string(a));
    off = off * full_[a] + i;
    ++a;
  }
  return base_[off];
}

template <typename T>
Tensor<T> SliceView<T>::gather() const {
  Tensor<T> out(active_);
  T* o = out.data();
  for_each_offset([&](std::int64_t f, std::int64_t s) { o[s] = base_[f]; });
  return out;
}

template <typename T>
void SliceView<T>::scatter(const Tensor<T>& values) const {
  if (values.shape() != active_) throw ShapeError("scatter shape " + shape_str(values.shape()) + " != slice " + shape_str(active_));
  const T* v = values.data();
  for_each_offset([&](std::int64_t f, std::int64_t s) { base_[f] = v[s]; });
}

template <typename T>
void SliceView<T>::for_each_offset(const std::function<void(std::int64_t, std::int64_t)>& f) const {
  for_each_slice_offset(full_, active_, f);
}

template <typename T>
SliceView<T> slice_weights(Network<T>& net, int layer, double r_in, double r_out) {
  const auto& d = net.layout.layers.at(static_cast<std::size_t>(layer));
  Shape act = d.shape;
  const int q = net.config.width_quantum;
  if (!act.empty() && d.axes[0].elastic()) act[0] = active_width(static_cast<int>(act[0]), r_out, q);
  if (act.size() > 1 && d.axes[1].elastic()) act[1] = active_width(static_cast<int>(act[1]), r_in, q);
  return SliceView<T>(net.weights[static_cast<std::size_t>(layer)].data(), d.shape, act);
}

template <typename T>
SliceView<T> slice_for_spec(Network<T>& net, int layer, const SubnetSpec& spec) {
  const auto& d = net.layout.layers.at(static_cast<std::size_t>(layer));
  return SliceView<T>(net.weights[static_cast<std::size_t>(layer)].data(), d.shape,
                      active_shape(d, spec, net.config.width_quantum));
}

std::int64_t param_count(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec) {
  check_spec_dims(config, spec);
  std::int64_t n = 0;
  for (const auto& d : layout.layers) {
    if (layer_active(d, spec)) n += shape_numel(active_shape(d, spec, config.width_quantum));
  }
  return n;
}

SubnetSpec native_spec(const ModelConfig& config, int resolution) {
  return SubnetSpec::full(config.levels(), config.num_blocks(), resolution);
}

Supernet inflate_image_checkpoint(const Supernet& image, const ModelConfig& config, std::uint64_t seed) {
  if (!config.temporal) throw std::invalid_argument("inflation target must have temporal attention enabled");
  ModelConfig as_image = config;
  as_image.temporal = false;
  if (!(image.config == as_image)) throw std::invalid_argument("layout mismatch: image model config differs from the video config");
  Supernet video = build_supernet(config, seed);
  std::size_t copied = 0;
  for (std::size_t i = 0; i < video.layout.layers.size(); ++i) {
    const auto& d = video.layout.layers[i];
    if (d.name.find(".tattn.") != std::string::npos) {
      if (ends_with(d.name, ".o.w") || ends_with(d.name, ".o.b")) video.weights[i].fill(0.0f);
      continue;
    }
    const auto j = image.layout.find(d.name);
    if (!j || image.weights[static_cast<std::size_t>(*j)].shape() != d.shape) {
      throw std::invalid_argument("layout mismatch at layer " + d.name);
    }
    video.weights[i] = image.weights[static_cast<std::size_t>(*j)];
    ++copied;
  }
  if (copied != image.layout.layers.size()) throw std::invalid_argument("layout mismatch: image model has extra layers");
  return video;
}

#define SNED_INST(T)                                                                  \
  template struct Network<T>;                                                         \
  template class SliceView<T>;                                                        \
  template Network<T> build_network<T>(const ModelConfig&, std::uint64_t);            \
  template SliceView<T> slice_weights<T>(Network<T>&, int, double, double);           \
  template SliceView<T> slice_for_spec<T>(Network<T>&, int, const SubnetSpec&);
SNED_INST(float)
SNED_INST(double)
#undef SNED_INST

}  // namespace sned
