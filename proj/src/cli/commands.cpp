#include "sned/cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "sned/data/data.hpp"
#include "sned/diffusion/diffusion.hpp"
#include "sned/eval/eval.hpp"
#include "sned/model/checkpoint.hpp"
#include "sned/model/cost.hpp"
#include "sned/numerics/kernels.hpp"
#include "sned/searchspace/searchspace.hpp"
#include "sned/trainer/trainer.hpp"

namespace sned {

namespace fs = std::filesystem;

std::filesystem::path role_checkpoint_dir(const RunConfig& cfg, Role role) {
  return fs::path(cfg.paths.checkpoints) / role_name(role);
}

namespace {

ModelConfig model_for(const RunConfig& cfg, Role role) {
  ModelConfig m = cfg.model;
  m.role = role;
  return m;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

SubnetSpec read_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read spec file " + path.string());
  try {
    return nlohmann::json::parse(in).get<SubnetSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("spec file " + path.string() + " is malformed: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError("spec file " + path.string() + " is malformed: " + e.what());
  }
}

char preset_name(const std::string& s) {
  if (s.size() != 1) throw ValidationError("preset must be one of S, M, L, B");
  return static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
}

void require_valid(const SubnetSpec& spec, const RunConfig& cfg, const ModelConfig& model) {
  const auto v = validate(spec, cfg.search, model);
  if (v.empty()) return;
  std::string msg = "invalid subnet spec:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ValidationError(msg);
}

int min_resolution(const RunConfig& cfg) {
  return *std::min_element(cfg.search.resolutions.begin(), cfg.search.resolutions.end());
}

// Captions for generated samples: the first n of the dataset, cycled.
std::vector<int> sample_captions(const RunConfig& cfg, int n) {
  const int lo = cfg.data_tiers().front();
  const VideoDataset ds = read_tiers(cfg.paths.dataset, {lo});
  std::vector<int> caps;
  for (int i = 0; i < n; ++i) {
    const auto off = static_cast<std::size_t>((i % ds.n) * kCaptionLength);
    caps.insert(caps.end(), ds.captions.begin() + static_cast<std::ptrdiff_t>(off),
                ds.captions.begin() + static_cast<std::ptrdiff_t>(off + kCaptionLength));
  }
  return caps;
}

nlohmann::json range_of(const Tensor<float>& v) {
  const auto [lo, hi] = std::minmax_element(v.data(), v.data() + v.numel());
  return nlohmann::json{{"finite", v.all_finite()}, {"min", *lo}, {"max", *hi}};
}

}  // namespace

LoadedModel load_ema_model(const RunConfig& cfg, Role role) {
  const fs::path dir = role_checkpoint_dir(cfg, role);
  if (!fs::exists(dir / "ema.snw")) {
    throw std::runtime_error("no trained " + role_name(role) + " checkpoint in " + dir.string() +
                             " (run `sned train --role " + role_name(role) + "` first)");
  }
  Supernet net = build_supernet(model_for(cfg, role), cfg.train.seed);
  OptimizerState opt = OptimizerState::zeros_like(net);
  EmaState ema = EmaState::from(net, cfg.train.ema_decay);
  load_training_state(dir, net, opt, ema);
  return {ema_network(net, ema), file_digest(dir / "ema.snw")};
}

namespace {

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  VideoDataset ds = gen_synthetic(cfg.data.n, cfg.data.frames, cfg.data.max_resolution, cfg.data.seed);
  build_tiers(ds, cfg.data_tiers());
  write_tiers(ds, cfg.paths.dataset);
  nlohmann::json tiers = nlohmann::json::array();
  for (int r : cfg.data_tiers()) tiers.push_back(tier_path(cfg.paths.dataset, r).string());
  out << nlohmann::json{{"videos", ds.n}, {"frames", ds.frames}, {"tiers", tiers}}.dump() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, Role role, bool quiet, std::ostream& out) {
  const VideoDataset ds = read_tiers(cfg.paths.dataset, cfg.data_tiers());
  const ModelConfig model = model_for(cfg, role);
  const NoiseSchedule schedule = cfg.schedule();
  Supernet net = build_supernet(model, cfg.train.seed);
  const TrainContext ctx{ds, cfg.search, cfg.train, schedule};
  TrainOutputs outputs;
  outputs.checkpoint_dir = role_checkpoint_dir(cfg, role);
  outputs.metrics_log = fs::path(cfg.paths.reports) / ("metrics_" + role_name(role) + ".jsonl");
  if (!quiet) outputs.on_log = [&out](const nlohmann::json& j) { out << j.dump() << '\n' << std::flush; };
  const TrainResult r = train(net, ctx, outputs);
  nlohmann::json summary{{"role", role_name(role)},
                         {"iterations", r.losses.size()},
                         {"checkpoint", outputs.checkpoint_dir->string()},
                         {"metrics", outputs.metrics_log->string()}};
  if (!r.losses.empty()) summary["final_loss"] = r.losses.back();
  out << summary.dump() << '\n';
  return 0;
}

struct SampleArgs {
  std::optional<std::string> spec;
  std::string preset = "B";
  std::optional<int> resolution;
  int n = 4;
  bool cascade = false;
  std::uint64_t seed = 0;
  std::optional<std::string> out;
};

int cmd_sample(const RunConfig& cfg, const SampleArgs& a, std::ostream& out) {
  const ModelConfig base_model = model_for(cfg, Role::Base);
  if (a.n < 1) throw ValidationError("--n must be >= 1");
  SubnetSpec spec;
  if (a.spec) {
    spec = read_spec(*a.spec);
    if (a.resolution && *a.resolution != spec.resolution) throw ValidationError("--resolution disagrees with the spec file");
  } else {
    const int res = a.resolution.value_or(min_resolution(cfg));
    if (std::find(cfg.search.resolutions.begin(), cfg.search.resolutions.end(), res) == cfg.search.resolutions.end()) {
      throw ValidationError("resolution " + std::to_string(res) + " is not a search resolution");
    }
    spec = preset_spec(preset_name(a.preset), cfg.search, base_model, res);
  }
  require_valid(spec, cfg, base_model);

  const LoadedModel base = load_ema_model(cfg, Role::Base);
  const std::vector<int> captions = sample_captions(cfg, a.n);
  const NoiseSchedule schedule = cfg.schedule();
  Rng rng(a.seed);
  SnwFile file;
  file.config = nlohmann::json(cfg);
  file.meta = {{"kind", "samples"}, {"spec", spec}, {"n", a.n}, {"base_digest", base.digest}};
  nlohmann::json summary{{"base_digest", base.digest}};
  if (a.cascade) {
    const LoadedModel ssr = load_ema_model(cfg, Role::SSR);
    const ModelConfig ssr_model = model_for(cfg, Role::SSR);
    std::vector<SubnetSpec> chain;
    for (int r = spec.resolution * 2; r <= cfg.data.max_resolution; r *= 2) chain.push_back(full_spec(cfg.search, ssr_model, r));
    if (chain.empty()) throw ValidationError("cascade needs data.max_resolution above the base resolution");
    const CascadeResult c =
        cascade_sample(base.network, ssr.network, spec, chain, captions, a.n, schedule, cfg.diffusion.ddim_steps, rng);
    nlohmann::json stages = nlohmann::json::array();
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
      file.arrays.push_back({"stage/" + std::to_string(i), c.stages[i]});
      nlohmann::json s = range_of(c.stages[i]);
      s["shape"] = c.stages[i].shape();
      stages.push_back(s);
    }
    file.arrays.push_back({"video", c.video});
    file.meta["ssr_digest"] = ssr.digest;
    summary["ssr_digest"] = ssr.digest;
    summary["ssr_applications"] = c.ssr_applications;
    summary["stages"] = stages;
    summary["shape"] = c.video.shape();
  } else {
    Tensor<float> v = ddim_sample(base.network, spec, a.n, captions, schedule, cfg.diffusion.ddim_steps, rng);
    summary["shape"] = v.shape();
    summary.update(range_of(v));
    file.arrays.push_back({"video", std::move(v)});
  }
  const fs::path path = a.out ? fs::path(*a.out) : fs::path(cfg.paths.reports) / "samples.snw";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_snw(path, file);
  summary["out"] = path.string();
  out << summary.dump() << '\n';
  return 0;
}

int cmd_extract(const RunConfig& cfg, const std::string& spec_file, const std::optional<std::string>& out_file,
                std::ostream& out) {
  const SubnetSpec spec = read_spec(spec_file);
  require_valid(spec, cfg, cfg.model);
  const LoadedModel m = load_ema_model(cfg, cfg.model.role);
  const ExtractedSubnet sub = extract_subnet(m.network, spec, &cfg.search);
  const fs::path path = out_file ? fs::path(*out_file) : fs::path(cfg.paths.reports) / "subnet.snw";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_network(path, sub.network, sub.native);
  out << nlohmann::json{{"out", path.string()}, {"elements", sub.network.total_elements()}}.dump() << '\n';
  return 0;
}

int cmd_analyze(const RunConfig& cfg, int samples, std::uint64_t seed, std::ostream& out) {
  if (samples < 1) throw ValidationError("--samples must be >= 1");
  const BigInt count = enumerate_count(cfg.search, cfg.model);
  const CostSummary hist = cost_histogram(cfg.search, cfg.model, samples, seed);
  const std::string digits = count.str();
  // log10 from the leading digits; the count itself overflows a double in large spaces
  const std::size_t lead = std::min<std::size_t>(15, digits.size());
  const double log10_count =
      std::log10(std::stod(digits.substr(0, lead))) + static_cast<double>(digits.size() - lead);
  nlohmann::json j{{"search_space_size", digits}, {"search_space_log10", log10_count}, {"cost", hist}};
  write_json(fs::path(cfg.paths.reports) / "hist.json", j);
  out << j.dump() << '\n';
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::vector<std::string>& spec_files, std::vector<std::string> presets,
              std::optional<int> resolution, std::ostream& out) {
  const int res = resolution.value_or(min_resolution(cfg));
  std::vector<std::pair<std::string, SubnetSpec>> specs;
  for (const auto& f : spec_files) specs.emplace_back(fs::path(f).stem().string(), read_spec(f));
  if (specs.empty() && presets.empty()) presets = {"S", "M", "L", "B"};
  for (const auto& p : presets) {
    const char c = preset_name(p);
    specs.emplace_back(std::string("SNED-") + c, preset_spec(c, cfg.search, cfg.model, res));
  }
  for (const auto& [name, spec] : specs) require_valid(spec, cfg, cfg.model);
  // timing does not depend on weight values
  const Supernet net = build_supernet(cfg.model, cfg.train.seed);
  const NoiseSchedule schedule = cfg.schedule();
  BenchOptions opt;
  opt.reps = cfg.eval.reps;
  opt.ddim_steps = cfg.diffusion.ddim_steps;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [name, spec] : specs) {
    nlohmann::json r = bench(net, spec, schedule, opt);
    r["model"] = name;
    r["spec"] = spec;
    rows.push_back(r);
    out << nlohmann::json{{"model", name}, {"params", r["params"]}, {"sampling_ms", r["sampling"]["median_ms"]}}.dump()
        << '\n';
  }
  write_json(fs::path(cfg.paths.reports) / "bench.json", rows);
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::optional<int> resolution, std::uint64_t seed, std::ostream& out) {
  const int res = resolution.value_or(min_resolution(cfg));
  if (std::find(cfg.search.resolutions.begin(), cfg.search.resolutions.end(), res) == cfg.search.resolutions.end()) {
    throw ValidationError("resolution " + std::to_string(res) + " is not a search resolution");
  }
  const LoadedModel m = load_ema_model(cfg, Role::Base);
  const NoiseSchedule schedule = cfg.schedule();
  const int n = cfg.eval.n_eval;

  // real features from the training tier, val loss and captions from a held-out draw
  const VideoDataset train_ds = read_tiers(cfg.paths.dataset, {res});
  const Tensor<float>& tier = train_ds.tiers.at(res);
  const std::int64_t per = tier.numel() / tier.shape()[0];
  const int n_real = std::min(n, train_ds.n);
  Shape real_shape = tier.shape();
  real_shape[0] = n_real;
  Tensor<float> real(real_shape);
  std::copy_n(tier.data(), n_real * per, real.data());

  VideoDataset held = gen_synthetic(n, cfg.data.frames, cfg.data.max_resolution, cfg.data.seed + 1);
  build_tiers(held, {res});
  const auto batches = val_batches(held, res, std::max(1, (n + 7) / 8), seed, schedule, false);
  std::vector<int> captions(held.captions.begin(), held.captions.begin() + static_cast<std::ptrdiff_t>(n * kCaptionLength));

  const FeatureExtractor fx = FeatureExtractor::make(cfg.eval.feature_seed);
  const Tensor<double> real_f = extract_features(real, fx);
  BenchOptions opt;
  opt.reps = cfg.eval.reps;
  opt.ddim_steps = cfg.diffusion.ddim_steps;

  std::vector<ReportEntry> entries;
  for (const auto& p : kPresets) {
    const SubnetSpec spec = preset_spec(p.name, cfg.search, cfg.model, res);
    Rng rng(seed);
    const Tensor<float> gen = ddim_sample(m.network, spec, n, captions, schedule, cfg.diffusion.ddim_steps, rng);
    const Tensor<double> gen_f = extract_features(gen, fx);
    ReportEntry e;
    e.model = std::string("SNED-") + p.name;
    e.params = param_count(m.network, spec);
    e.proxy_fd = frechet_distance(real_f, gen_f);
    e.proxy_kd = kernel_distance(real_f, gen_f);
    e.val_loss = subnet_val_loss(m.network, spec, batches, schedule);
    e.time_s = bench(m.network, spec, schedule, opt).sampling.median_ms / 1000.0;
    out << nlohmann::json(e).dump() << '\n' << std::flush;
    entries.push_back(e);
  }
  const Report report = report_table(entries);
  write_report(report, cfg.paths.reports);
  out << report.text;
  return 0;
}

int cmd_validate_spec(const RunConfig& cfg, const std::string& spec_file, std::ostream& out, std::ostream& err) {
  const SubnetSpec spec = read_spec(spec_file);
  const auto v = validate(spec, cfg.search, cfg.model);
  if (v.empty()) {
    out << "ok\n";
    return 0;
  }
  for (const auto& s : v) err << s << '\n';
  return 1;
}

// `--a.b=value` tokens are config overrides; everything else goes to CLI11.
std::vector<std::pair<std::string, std::string>> take_overrides(std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> rest;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (a.rfind("--", 0) == 0 && eq != std::string::npos && dot != std::string::npos && dot < eq) {
      overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      rest.push_back(a);
    }
  }
  args = std::move(rest);
  return overrides;
}

}  // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args = argv;
  const auto overrides = take_overrides(args);

  CLI::App app{"Superposition-trained video diffusion supernets: data, training, sampling, search and evaluation."};
  app.name("sned");
  app.require_subcommand(1);
  std::optional<std::string> config;
  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON run configuration (defaults: toy setup)");
    sub->footer("Any configuration key can be overridden with --section.key=value.");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic video dataset tiers");
  add_config(gen);

  auto* tr = app.add_subcommand("train", "Train a supernet with masked subnet updates");
  add_config(tr);
  std::string role = "base";
  bool quiet = false;
  tr->add_option("--role", role, "base or ssr")->check(CLI::IsMember({"base", "ssr"}));
  tr->add_flag("--quiet", quiet, "Do not echo metrics lines");

  auto* sm = app.add_subcommand("sample", "Sample videos from trained EMA weights");
  add_config(sm);
  SampleArgs sa;
  sm->add_option("--spec", sa.spec, "Subnet spec JSON");
  sm->add_option("--preset", sa.preset, "S, M, L or B (default B)");
  sm->add_option("--resolution", sa.resolution, "Base resolution (default: smallest search resolution)");
  sm->add_option("--n", sa.n, "Number of videos");
  sm->add_flag("--cascade", sa.cascade, "Apply the SSR model repeatedly up to data.max_resolution");
  sm->add_option("--seed", sa.seed, "Sampling seed");
  sm->add_option("--out", sa.out, "Output SNW file (default <reports>/samples.snw)");

  auto* ex = app.add_subcommand("extract", "Export a subnet as a standalone network");
  add_config(ex);
  std::string ex_spec;
  std::optional<std::string> ex_out;
  ex->add_option("--spec", ex_spec, "Subnet spec JSON")->required();
  ex->add_option("--out", ex_out, "Output SNW file (default <reports>/subnet.snw)");

  auto* an = app.add_subcommand("analyze", "Search-space size and cost histogram");
  add_config(an);
  int an_samples = 10000;
  std::uint64_t an_seed = 0;
  an->add_option("--samples", an_samples, "Sampled subnets for the cost histogram");
  an->add_option("--seed", an_seed, "Sampling seed");

  auto* be = app.add_subcommand("bench", "Time forward passes and DDIM sampling");
  add_config(be);
  std::vector<std::string> be_specs, be_presets;
  std::optional<int> be_res;
  be->add_option("--spec", be_specs, "Subnet spec JSON files");
  be->add_option("--preset", be_presets, "Presets (default: all)");
  be->add_option("--resolution", be_res, "Resolution for presets");

  auto* ev = app.add_subcommand("eval", "Validation loss, proxy distances and timing for S/M/L/B");
  add_config(ev);
  std::optional<int> ev_res;
  std::uint64_t ev_seed = 0;
  ev->add_option("--resolution", ev_res, "Evaluation resolution");
  ev->add_option("--seed", ev_seed, "Noise and sampling seed");

  auto* vs = app.add_subcommand("validate-spec", "Check a subnet spec against the search space");
  add_config(vs);
  std::string vs_spec;
  vs->add_option("--spec", vs_spec, "Subnet spec JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    std::optional<fs::path> cfg_file;
    if (config) cfg_file = fs::path(*config);
    const RunConfig cfg = resolve_config(cfg_file, overrides);
    write_json(fs::path(cfg.paths.reports) / "run.json", cfg);
    kernels::init_threading();

    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (tr->parsed()) return cmd_train(cfg, parse_role(role), quiet, out);
    if (sm->parsed()) return cmd_sample(cfg, sa, out);
    if (ex->parsed()) return cmd_extract(cfg, ex_spec, ex_out, out);
    if (an->parsed()) return cmd_analyze(cfg, an_samples, an_seed, out);
    if (be->parsed()) return cmd_bench(cfg, be_specs, be_presets, be_res, out);
    if (ev->parsed()) return cmd_eval(cfg, ev_res, ev_seed, out);
    if (vs->parsed()) return cmd_validate_spec(cfg, vs_spec, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace sned
