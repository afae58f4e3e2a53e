#include "sned/cli/run_config.hpp"

#include <algorithm>
#include <fstream>

#include "sned/model/network.hpp"

namespace sned {

RunConfig RunConfig::toy() {
  RunConfig c;
  c.model.base_width = 16;
  c.model.frames = 4;
  c.search.resolutions = {16, 32};
  c.train.warmup = WarmupSchedule{600, 100, 1.0, 0.4};
  c.train.total_iterations = 2000;
  c.train.batch_size = 8;
  c.data.frames = 4;
  return c;
}

std::vector<int> RunConfig::data_tiers() const {
  std::vector<int> tiers;
  if (search.resolutions.empty()) return tiers;
  const int lo = std::max(1, *std::min_element(search.resolutions.begin(), search.resolutions.end()) / 2);
  for (int r = data.max_resolution; r >= lo && r >= 1; r /= 2) {
    tiers.push_back(r);
    if (r % 2) break;
  }
  std::sort(tiers.begin(), tiers.end());
  return tiers;
}

NoiseSchedule RunConfig::schedule() const { return linear_schedule(diffusion.T, diffusion.beta_start, diffusion.beta_end); }

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> p;
  const auto add = [&](const std::string& where, const std::vector<std::string>& v) {
    for (const auto& s : v) p.push_back(where + ": " + s);
  };
  add("model", model.problems());
  add("search", search.problems());
  add("train", train.problems());
  if (diffusion.T < 1) p.push_back("diffusion: T must be >= 1");
  if (!(diffusion.beta_start > 0 && diffusion.beta_start < diffusion.beta_end && diffusion.beta_end < 1)) {
    p.push_back("diffusion: need 0 < beta_start < beta_end < 1");
  }
  if (diffusion.ddim_steps < 2 || diffusion.ddim_steps > diffusion.T) p.push_back("diffusion: ddim_steps must be in [2, T]");
  if (data.n < 1) p.push_back("data: n must be >= 1");
  if (data.frames != model.frames) p.push_back("data: frames must equal model.frames");
  if (eval.n_eval < 2) p.push_back("eval: n_eval must be >= 2");
  if (eval.reps < 3) p.push_back("eval: reps must be >= 3");
  const auto tiers = data_tiers();
  for (int r : search.resolutions) {
    if (std::find(tiers.begin(), tiers.end(), r) == tiers.end()) {
      p.push_back("search: resolution " + std::to_string(r) + " is not a data tier (max_resolution " +
                  std::to_string(data.max_resolution) + " halved)");
    } else if (r / 2 < 1 || std::find(tiers.begin(), tiers.end(), r / 2) == tiers.end()) {
      p.push_back("search: SSR conditioning tier " + std::to_string(r / 2) + " missing");
    }
    if (model.problems().empty() && r % (1 << (model.levels() - 1)) != 0) {
      p.push_back("search: resolution " + std::to_string(r) + " not divisible by the model's downsampling factor");
    }
  }
  return p;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ValidationError(msg);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"model", c.model},
      {"search", c.search},
      {"train", c.train},
      {"diffusion",
       {{"T", c.diffusion.T}, {"beta_start", c.diffusion.beta_start}, {"beta_end", c.diffusion.beta_end},
        {"ddim_steps", c.diffusion.ddim_steps}}},
      {"data", {{"n", c.data.n}, {"frames", c.data.frames}, {"max_resolution", c.data.max_resolution}, {"seed", c.data.seed}}},
      {"eval", {{"feature_seed", c.eval.feature_seed}, {"n_eval", c.eval.n_eval}, {"reps", c.eval.reps}}},
      {"paths", {{"dataset", c.paths.dataset}, {"checkpoints", c.paths.checkpoints}, {"reports", c.paths.reports}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d = RunConfig::toy();
  c = d;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("search")) c.search = j.at("search").get<SearchSpaceConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  const auto sub = [&](const char* k) { return j.value(k, nlohmann::json::object()); };
  const auto df = sub("diffusion");
  c.diffusion.T = df.value("T", d.diffusion.T);
  c.diffusion.beta_start = df.value("beta_start", d.diffusion.beta_start);
  c.diffusion.beta_end = df.value("beta_end", d.diffusion.beta_end);
  c.diffusion.ddim_steps = df.value("ddim_steps", d.diffusion.ddim_steps);
  const auto da = sub("data");
  c.data.n = da.value("n", d.data.n);
  c.data.frames = da.value("frames", d.data.frames);
  c.data.max_resolution = da.value("max_resolution", d.data.max_resolution);
  c.data.seed = da.value("seed", d.data.seed);
  const auto ev = sub("eval");
  c.eval.feature_seed = ev.value("feature_seed", d.eval.feature_seed);
  c.eval.n_eval = ev.value("n_eval", d.eval.n_eval);
  c.eval.reps = ev.value("reps", d.eval.reps);
  const auto pa = sub("paths");
  c.paths.dataset = pa.value("dataset", d.paths.dataset);
  c.paths.checkpoints = pa.value("checkpoints", d.paths.checkpoints);
  c.paths.reports = pa.value("reports", d.paths.reports);
}

namespace {

// Every key of `given` must exist in `schema`; caps are keyed by resolution.
void check_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& path) {
  if (!given.is_object() || !schema.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const std::string here = path.empty() ? k : path + "." + k;
    if (!schema.contains(k)) throw ValidationError("unknown configuration key '" + here + "'");
    if (here != "search.resolution_caps") check_keys(v, schema.at(k), here);
  }
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;  // bare strings such as paths
  }
}

}  // namespace

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  const nlohmann::json schema = RunConfig::toy();
  nlohmann::json merged = schema;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("cannot read config file " + file->string());
    nlohmann::json given;
    try {
      given = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    if (!given.is_object()) throw ValidationError("config file must hold a JSON object");
    check_keys(given, schema, "");
    merged.merge_patch(given);
    // arrays and caps replace wholesale rather than merge
    if (given.contains("search") && given["search"].contains("resolution_caps")) {
      merged["search"]["resolution_caps"] = given["search"]["resolution_caps"];
    }
  }
  for (const auto& [key, value] : overrides) {
    std::string ptr;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      ptr += "/" + key.substr(start, dot - start);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const nlohmann::json::json_pointer jp(ptr);
    const bool caps = key.rfind("search.resolution_caps.", 0) == 0;
    if (!caps && !schema.contains(jp)) throw ValidationError("unknown configuration key '" + key + "'");
    merged[jp] = parse_value(value);
  }
  RunConfig c;
  try {
    c = merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad configuration value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("bad configuration value: ") + e.what());
  }
  c.validate();
  return c;
}

SubnetSpec preset_spec(char name, const SearchSpaceConfig& search, const ModelConfig& model, int resolution) {
  const Preset* preset = nullptr;
  for (const auto& p : kPresets)
    if (p.name == name) preset = &p;
  if (!preset) throw ValidationError(std::string("unknown preset '") + name + "' (expected S, M, L or B)");
  const SubnetSpec top = full_spec(search, model, resolution);
  if (preset->target >= 1.0) return top;
  const Layout layout = build_layout(model);
  const double full = static_cast<double>(param_count(model, layout, SubnetSpec::full(model.levels(), model.num_blocks(), resolution)));
  std::vector<double> ratios;
  for (double r : search.ratio_set)
    if (r <= search.cap(resolution) + 1e-12) ratios.push_back(r);
  std::sort(ratios.begin(), ratios.end());
  if (ratios.empty()) throw ValidationError("no ratio in the ratio set fits the resolution cap");
  const auto fraction = [&](std::size_t i) {
    SubnetSpec s = top;
    std::fill(s.stage_ratios.begin(), s.stage_ratios.end(), ratios[i]);
    return static_cast<double>(param_count(model, layout, s)) / full;
  };
  // smallest index reaching the target; fraction is monotone in the ratio
  std::size_t lo = 0, hi = ratios.size() - 1;
  if (fraction(hi) < preset->target) {
    lo = hi;
  } else {
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (fraction(mid) >= preset->target) hi = mid;
      else lo = mid + 1;
    }
  }
  std::size_t best = lo;
  if (lo > 0 && preset->target - fraction(lo - 1) < fraction(lo) - preset->target) best = lo - 1;
  SubnetSpec s = top;
  std::fill(s.stage_ratios.begin(), s.stage_ratios.end(), ratios[best]);
  return s;
}

}  // namespace sned
