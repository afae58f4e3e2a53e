#include "sned/searchspace/searchspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sned/model/cost.hpp"
#include "sned/model/layout.hpp"

namespace sned {

namespace {

constexpr double kTol = 1e-9;

bool in_set(double r, const std::vector<double>& set) {
  return std::any_of(set.begin(), set.end(), [&](double s) { return std::abs(s - r) < kTol; });
}

std::string slot_name(DropSlot s) {
  switch (s) {
    case DropSlot::TemporalAttention:
      return "temporal";
    case DropSlot::CrossAttention:
      return "cross";
    case DropSlot::SpatialAttention:
      return "spatial";
    case DropSlot::FeedForward:
      return "feed_forward";
  }
  return "?";
}

DropSlot parse_slot(const std::string& s) {
  if (s == "temporal") return DropSlot::TemporalAttention;
  if (s == "cross") return DropSlot::CrossAttention;
  if (s == "spatial") return DropSlot::SpatialAttention;
  throw std::invalid_argument("unknown droppable component '" + s + "' (expected temporal, cross or spatial)");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

bool ff_should_drop(const BlockMask& m, bool has_temporal) {
  const bool t = has_temporal ? m[0] : true;
  return t && m[1] && m[2];
}

}  // namespace

double SearchSpaceConfig::cap(int resolution) const {
  auto it = resolution_caps.find(resolution);
  return it == resolution_caps.end() ? 1.0 : it->second;
}

std::vector<std::string> SearchSpaceConfig::problems() const {
  std::vector<std::string> p;
  if (ratio_set.empty()) p.push_back("ratio_set must not be empty");
  for (double r : ratio_set)
    if (!(r > 0.0 && r <= 1.0)) p.push_back("ratio " + fmt(r) + " outside (0,1]");
  if (resolutions.empty()) p.push_back("resolutions must not be empty");
  const int base = resolutions.empty() ? 1 : *std::min_element(resolutions.begin(), resolutions.end());
  for (int r : resolutions) {
    if (r < 1 || r % base != 0 || ((r / base) & (r / base - 1)) != 0) {
      p.push_back("resolution " + std::to_string(r) + " is not a power-of-two multiple of " + std::to_string(base));
    }
  }
  for (const auto& [res, c] : resolution_caps) {
    if (!in_set(c, ratio_set)) p.push_back("cap " + fmt(c) + " for resolution " + std::to_string(res) + " is not in the ratio set");
  }
  for (DropSlot s : droppable)
    if (s == DropSlot::FeedForward) p.push_back("feed-forward is tied to the attentions and cannot be listed as droppable");
  return p;
}

void SearchSpaceConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid search space config:";
  for (const auto& s : p) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

void to_json(nlohmann::json& j, const SearchSpaceConfig& c) {
  nlohmann::json caps = nlohmann::json::object();
  for (const auto& [r, v] : c.resolution_caps) caps[std::to_string(r)] = v;
  std::vector<std::string> drops;
  for (DropSlot s : c.droppable) drops.push_back(slot_name(s));
  j = nlohmann::json{{"ratio_set", c.ratio_set}, {"resolutions", c.resolutions}, {"resolution_caps", caps}, {"droppable", drops}};
}

void from_json(const nlohmann::json& j, SearchSpaceConfig& c) {
  const SearchSpaceConfig d;
  c.ratio_set = j.value("ratio_set", d.ratio_set);
  c.resolutions = j.value("resolutions", d.resolutions);
  if (j.contains("resolution_caps")) {
    c.resolution_caps.clear();
    for (const auto& [k, v] : j.at("resolution_caps").items()) c.resolution_caps[std::stoi(k)] = v.get<double>();
  } else {
    c.resolution_caps = d.resolution_caps;
  }
  if (j.contains("droppable")) {
    c.droppable.clear();
    for (const auto& s : j.at("droppable")) c.droppable.push_back(parse_slot(s.get<std::string>()));
  } else {
    c.droppable = d.droppable;
  }
}

void to_json(nlohmann::json& j, const WarmupSchedule& w) {
  j = nlohmann::json{{"total_warmup_iterations", w.total_warmup_iterations},
                     {"step_length", w.step_length},
                     {"start_fraction", w.start_fraction},
                     {"end_fraction", w.end_fraction}};
}

void from_json(const nlohmann::json& j, WarmupSchedule& w) {
  const WarmupSchedule d;
  w.total_warmup_iterations = j.value("total_warmup_iterations", d.total_warmup_iterations);
  w.step_length = j.value("step_length", d.step_length);
  w.start_fraction = j.value("start_fraction", d.start_fraction);
  w.end_fraction = j.value("end_fraction", d.end_fraction);
}

double min_fraction(const WarmupSchedule& s, std::int64_t iteration) {
  if (iteration < 0) throw std::invalid_argument("iteration must be >= 0");
  if (s.step_length < 1) throw std::invalid_argument("step_length must be >= 1");
  // counted in tenths so plateau values are the exact decimal literals
  const std::int64_t start = std::llround(s.start_fraction * 10.0);
  const std::int64_t end = std::llround(s.end_fraction * 10.0);
  if (iteration >= s.total_warmup_iterations) return static_cast<double>(end) / 10.0;
  const std::int64_t tenths = std::max(end, start - iteration / s.step_length);
  return static_cast<double>(tenths) / 10.0;
}

SpaceShape space_shape(const ModelConfig& model) {
  return SpaceShape{model.levels(), model.num_blocks(), kComponentsPerBlock, model.temporal};
}

std::vector<DropSlot> droppable_slots(const SearchSpaceConfig& config, const SpaceShape& shape) {
  std::vector<DropSlot> out;
  for (DropSlot s : config.droppable) {
    if (s == DropSlot::TemporalAttention && !shape.has_temporal) continue;
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SubnetSpec full_spec(const SearchSpaceConfig& config, const ModelConfig& model, int resolution) {
  SubnetSpec s = SubnetSpec::full(model.levels(), model.num_blocks(), resolution);
  for (auto& r : s.stage_ratios) r = std::min(r, config.cap(resolution));
  return s;
}

SubnetSpec sample_subnet(Rng& rng, const SearchSpaceConfig& config, const WarmupSchedule& schedule,
                         std::int64_t iteration, const ModelConfig& model) {
  const SpaceShape shape = space_shape(model);
  const double floor_frac = min_fraction(schedule, iteration);
  std::vector<double> admissible;
  for (double r : config.ratio_set)
    if (r >= floor_frac - kTol) admissible.push_back(r);
  if (admissible.empty()) throw std::invalid_argument("no ratio in the ratio set reaches the warmup floor");
  auto draw = [&] { return admissible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(admissible.size()) - 1))]; };

  SubnetSpec s;
  s.resolution = config.resolutions[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(config.resolutions.size()) - 1))];
  const double cap = config.cap(s.resolution);
  for (int l = 0; l < shape.stages; ++l) s.stage_ratios.push_back(std::min(draw(), cap));
  for (int b = 0; b < shape.blocks; ++b) {
    BlockRatios r;
    for (auto& v : r) v = draw();
    s.component_ratios.push_back(r);
  }
  s.drop_mask.assign(static_cast<std::size_t>(shape.blocks), BlockMask{false, false, false, false});

  const auto slots = droppable_slots(config, shape);
  std::vector<std::pair<int, DropSlot>> items;
  for (int b = 0; b < shape.blocks; ++b)
    for (DropSlot sl : slots) items.emplace_back(b, sl);
  const double keep = rng.uniform(floor_frac, 1.0);
  const auto k = static_cast<std::size_t>(std::floor((1.0 - keep) * static_cast<double>(items.size())));
  for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(items.size()) - 1));
    std::swap(items[i], items[j]);
    s.drop_mask[static_cast<std::size_t>(items[i].first)][static_cast<std::size_t>(items[i].second)] = true;
  }
  for (auto& m : s.drop_mask) m[static_cast<std::size_t>(DropSlot::FeedForward)] = ff_should_drop(m, shape.has_temporal);
  return s;
}

std::vector<std::string> validate(const SubnetSpec& spec, const SearchSpaceConfig& config, const SpaceShape& shape) {
  std::vector<std::string> v;
  if (static_cast<int>(spec.stage_ratios.size()) != shape.stages) {
    v.push_back("dimension mismatch: " + std::to_string(spec.stage_ratios.size()) + " stage ratios, expected " +
                std::to_string(shape.stages));
  }
  if (static_cast<int>(spec.component_ratios.size()) != shape.blocks ||
      static_cast<int>(spec.drop_mask.size()) != shape.blocks) {
    v.push_back("dimension mismatch: expected " + std::to_string(shape.blocks) + " blocks");
  }
  if (!v.empty()) return v;

  for (std::size_t l = 0; l < spec.stage_ratios.size(); ++l) {
    if (!in_set(spec.stage_ratios[l], config.ratio_set)) {
      v.push_back("ratio not in ratio set: stage " + std::to_string(l) + " = " + fmt(spec.stage_ratios[l]));
    }
  }
  for (std::size_t b = 0; b < spec.component_ratios.size(); ++b) {
    for (int c = 0; c < kComponentsPerBlock; ++c) {
      const double r = spec.component_ratios[b][static_cast<std::size_t>(c)];
      if (c >= shape.ratio_slots) {
        if (r != 1.0) v.push_back("unused ratio slot must be 1.0: block " + std::to_string(b) + " slot " + std::to_string(c));
      } else if (!in_set(r, config.ratio_set)) {
        v.push_back("ratio not in ratio set: block " + std::to_string(b) + " component " + std::to_string(c) + " = " + fmt(r));
      }
    }
  }
  if (std::find(config.resolutions.begin(), config.resolutions.end(), spec.resolution) == config.resolutions.end()) {
    v.push_back("resolution not in resolution set: " + std::to_string(spec.resolution));
  } else {
    const double cap = config.cap(spec.resolution);
    for (std::size_t l = 0; l < spec.stage_ratios.size(); ++l) {
      if (spec.stage_ratios[l] > cap + kTol) {
        v.push_back("resolution cap: stage " + std::to_string(l) + " ratio " + fmt(spec.stage_ratios[l]) + " exceeds " +
                    fmt(cap) + " at resolution " + std::to_string(spec.resolution));
      }
    }
  }
  const auto slots = droppable_slots(config, shape);
  for (std::size_t b = 0; b < spec.drop_mask.size(); ++b) {
    const BlockMask& m = spec.drop_mask[b];
    for (int s = 0; s < kDroppableAttentions; ++s) {
      if (m[static_cast<std::size_t>(s)] && std::find(slots.begin(), slots.end(), static_cast<DropSlot>(s)) == slots.end()) {
        v.push_back("component not droppable: block " + std::to_string(b) + " " + slot_name(static_cast<DropSlot>(s)));
      }
    }
    if (m[static_cast<std::size_t>(DropSlot::FeedForward)] != ff_should_drop(m, shape.has_temporal)) {
      v.push_back("feed-forward rule: block " + std::to_string(b));
    }
  }
  return v;
}

std::vector<std::string> validate(const SubnetSpec& spec, const SearchSpaceConfig& config, const ModelConfig& model) {
  auto v = validate(spec, config, space_shape(model));
  if (v.empty() && spec.resolution % (1 << (model.levels() - 1)) != 0) {
    v.push_back("resolution " + std::to_string(spec.resolution) + " not divisible by the U-Net downsampling factor");
  }
  return v;
}

BigInt enumerate_count(const SearchSpaceConfig& config, const SpaceShape& shape) {
  const auto n_ratios = static_cast<unsigned>(config.ratio_set.size());
  const auto n_slots = static_cast<unsigned>(droppable_slots(config, shape).size());
  const BigInt ratio_factor = boost::multiprecision::pow(BigInt(n_ratios), static_cast<unsigned>(shape.blocks * shape.ratio_slots));
  const BigInt mask_factor = boost::multiprecision::pow(BigInt(1) << n_slots, static_cast<unsigned>(shape.blocks));
  BigInt total = 0;
  for (int res : config.resolutions) {
    const double cap = config.cap(res);
    const auto allowed = static_cast<unsigned>(std::count_if(config.ratio_set.begin(), config.ratio_set.end(),
                                                             [&](double r) { return r <= cap + kTol; }));
    total += boost::multiprecision::pow(BigInt(allowed), static_cast<unsigned>(shape.stages)) * ratio_factor * mask_factor;
  }
  return total;
}

BigInt enumerate_count(const SearchSpaceConfig& config, const ModelConfig& model) {
  return enumerate_count(config, space_shape(model));
}

namespace {

CostStats stats_of(std::vector<double> v) {
  CostStats s;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (int d = 1; d <= 9; ++d) {
    const auto rank = static_cast<std::size_t>(std::ceil(d * static_cast<double>(v.size()) / 10.0));
    s.deciles.push_back(v[std::max<std::size_t>(rank, 1) - 1]);
  }
  return s;
}

}  // namespace

CostSummary cost_histogram(const SearchSpaceConfig& config, const ModelConfig& model, int n_samples, std::uint64_t seed,
                           const WarmupSchedule& schedule, std::int64_t iteration) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const Layout layout = build_layout(model);
  Rng rng(seed);
  CostSummary out;
  out.samples = n_samples;
  out.full_params = param_count(model, layout, SubnetSpec::full(model.levels(), model.num_blocks(), config.resolutions.front()));
  std::vector<double> params, flops, frac;
  for (int i = 0; i < n_samples; ++i) {
    const SubnetSpec s = sample_subnet(rng, config, schedule, iteration, model);
    const auto v = validate(s, config, model);
    if (!v.empty()) throw std::logic_error("sampled spec failed validation: " + v.front());
    const auto p = param_count(model, layout, s);
    params.push_back(static_cast<double>(p));
    flops.push_back(static_cast<double>(flop_count(model, layout, s)));
    frac.push_back(static_cast<double>(p) / static_cast<double>(out.full_params));
  }
  out.params = stats_of(std::move(params));
  out.flops = stats_of(std::move(flops));
  out.param_fraction = stats_of(std::move(frac));
  return out;
}

void to_json(nlohmann::json& j, const CostStats& s) {
  j = nlohmann::json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"deciles", s.deciles}};
}

void to_json(nlohmann::json& j, const CostSummary& s) {
  j = nlohmann::json{{"samples", s.samples},
                     {"full_params", s.full_params},
                     {"params", s.params},
                     {"flops", s.flops},
                     {"param_fraction", s.param_fraction}};
}

}  // namespace sned
