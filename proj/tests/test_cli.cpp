#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sned/cli/cli.hpp"
#include "sned/model/checkpoint.hpp"
#include "sned/searchspace/searchspace.hpp"

using namespace sned;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// micro setup so whole pipelines run in seconds
const char* kTiny = R"({
  "model": {"base_width": 8, "time_embed_dim": 16, "cond_embed_dim": 8, "frames": 2},
  "data": {"n": 12, "frames": 2, "max_resolution": 32},
  "search": {"resolutions": [8, 16], "resolution_caps": {"8": 1.0, "16": 0.8}},
  "train": {"total_iterations": 4, "batch_size": 2, "log_every": 2,
            "warmup": {"total_warmup_iterations": 4, "step_length": 2, "start_fraction": 1.0, "end_fraction": 0.4}},
  "diffusion": {"ddim_steps": 3},
  "eval": {"n_eval": 4}
})";

class CliDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("sned_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg = (dir / "tiny.json").string();
    write_file(cfg, kTiny);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::vector<std::string> with_paths(std::vector<std::string> args) const {
    args.push_back("--config=" + cfg);
    args.push_back("--paths.dataset=" + (dir / "data").string());
    args.push_back("--paths.checkpoints=" + (dir / "ckpt").string());
    args.push_back("--paths.reports=" + (dir / "reports").string());
    return args;
  }

  fs::path dir;
  std::string cfg;
};

}  // namespace

TEST(RunConfig, DefaultsAreTheToySetup) {
  const RunConfig c = resolve_config(std::nullopt, {});
  EXPECT_EQ(c.model.base_width, 16);
  EXPECT_EQ(c.model.frames, 4);
  EXPECT_EQ(c.search.resolutions, (std::vector<int>{16, 32}));
  EXPECT_EQ(c.train.total_iterations, 2000);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_EQ(c.train.warmup.total_warmup_iterations, 600);
  EXPECT_EQ(c.train.warmup.step_length, 100);
  EXPECT_EQ(c.data.n, 512);
  EXPECT_EQ(c.data_tiers(), (std::vector<int>{8, 16, 32, 64}));
}

TEST(RunConfig, OverridesParseJsonOrFallBackToStrings) {
  const RunConfig c = resolve_config(std::nullopt, {{"train.learning_rate", "0.0005"},
                                                    {"paths.reports", "out/x"},
                                                    {"search.resolution_caps.32", "0.9"}});
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 5e-4);
  EXPECT_EQ(c.paths.reports, "out/x");
  EXPECT_DOUBLE_EQ(c.search.cap(32), 0.9);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(resolve_config(std::nullopt, {{"train.nope", "1"}}), ValidationError);
  EXPECT_THROW(resolve_config(std::nullopt, {{"train.batch_size", "0"}}), ValidationError);
  EXPECT_THROW(resolve_config(std::nullopt, {{"train.batch_size", "\"eight\""}}), ValidationError);
  // 64 is not a data tier once max_resolution drops to 32
  EXPECT_THROW(resolve_config(std::nullopt, {{"search.resolutions", "[16, 64]"}, {"data.max_resolution", "32"}}),
               ValidationError);
  EXPECT_THROW(resolve_config(std::nullopt, {{"data.frames", "3"}}), ValidationError);
  EXPECT_THROW(resolve_config(fs::path("/nonexistent/cfg.json"), {}), ValidationError);
}

TEST(RunConfig, CapsInFileReplaceDefaults) {
  const fs::path p = fs::temp_directory_path() / "sned_caps.json";
  write_file(p, R"({"search": {"resolution_caps": {"16": 0.8}}})");
  const RunConfig c = resolve_config(p, {});
  EXPECT_EQ(c.search.resolution_caps.size(), 1u);
  EXPECT_DOUBLE_EQ(c.search.cap(16), 0.8);
  fs::remove(p);
}

TEST(RunConfig, JsonRoundTrip) {
  const RunConfig a = resolve_config(std::nullopt, {{"train.seed", "7"}, {"eval.n_eval", "16"}});
  const nlohmann::json j = a;
  const RunConfig b = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(b), j);
}

TEST(Presets, NearestAchievableFractionAndOrdered) {
  const RunConfig c = RunConfig::toy();
  const Layout layout = build_layout(c.model);
  const auto full = static_cast<double>(param_count(c.model, layout, full_spec(c.search, c.model, 16)));
  std::int64_t prev = 0;
  for (const auto& p : kPresets) {
    const SubnetSpec s = preset_spec(p.name, c.search, c.model, 16);
    EXPECT_TRUE(validate(s, c.search, c.model).empty()) << p.name;
    const auto params = param_count(c.model, layout, s);
    EXPECT_GT(params, prev) << p.name;
    prev = params;
    // brute force: no admissible uniform ratio lands nearer the target
    double best = 1e9;
    for (double r : c.search.ratio_set) {
      if (r > c.search.cap(16)) continue;
      SubnetSpec u = full_spec(c.search, c.model, 16);
      std::fill(u.stage_ratios.begin(), u.stage_ratios.end(), r);
      best = std::min(best, std::abs(static_cast<double>(param_count(c.model, layout, u)) / full - p.target));
    }
    EXPECT_DOUBLE_EQ(std::abs(static_cast<double>(params) / full - p.target), best) << p.name;
  }
  EXPECT_EQ(preset_spec('B', c.search, c.model, 16), full_spec(c.search, c.model, 16));
  EXPECT_THROW(preset_spec('X', c.search, c.model, 16), ValidationError);
}

TEST_F(CliDir, UsageErrorsExitOne) {
  auto r = run({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = run({"bogus"});
  EXPECT_EQ(r.code, 1);
  r = run({"train", "--nope"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--nope"), std::string::npos);
  r = run(with_paths({"train", "--role", "middle"}));
  EXPECT_EQ(r.code, 1);
  r = run(with_paths({"train", "--train.bogus=3"}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train.bogus"), std::string::npos);
  r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("validate-spec"), std::string::npos);
}

TEST_F(CliDir, MissingArtifactsAreRuntimeErrors) {
  EXPECT_EQ(run(with_paths({"train"})).code, 2);  // no dataset yet
  EXPECT_EQ(run(with_paths({"sample"})).code, 2);  // no checkpoint
}

TEST_F(CliDir, ValidateSpecExitCodeFollowsValidate) {
  const RunConfig c = resolve_config(fs::path(cfg), {});
  SubnetSpec s = full_spec(c.search, c.model, 16);
  write_file(dir / "ok.json", nlohmann::json(s).dump());
  s.stage_ratios[0] = 0.33;
  write_file(dir / "bad.json", nlohmann::json(s).dump());
  write_file(dir / "junk.json", "{");

  auto r = run(with_paths({"validate-spec", "--spec", (dir / "ok.json").string()}));
  EXPECT_EQ(r.code, 0);
  r = run(with_paths({"validate-spec", "--spec", (dir / "bad.json").string()}));
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run(with_paths({"validate-spec", "--spec", (dir / "junk.json").string()})).code, 1);
}

TEST_F(CliDir, RunJsonEchoesResolvedConfigAndReproduces) {
  ASSERT_EQ(run(with_paths({"gen-data"})).code, 0);
  ASSERT_EQ(run(with_paths({"train", "--quiet", "--train.seed=3"})).code, 0);
  const fs::path run_json = dir / "reports" / "run.json";
  const RunConfig echoed = read_json(run_json).get<RunConfig>();
  EXPECT_EQ(echoed.train.seed, 3u);
  EXPECT_EQ(echoed.paths.reports, (dir / "reports").string());
  const std::string weights = slurp(dir / "ckpt" / "base" / "weights.snw");

  // re-fed verbatim into a second run: identical checkpoint bytes
  fs::copy_file(run_json, dir / "again.json");
  ASSERT_EQ(run({"train", "--quiet", "--config", (dir / "again.json").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "ckpt" / "base" / "weights.snw"), weights);
}

TEST_F(CliDir, FullPipeline) {
  ASSERT_EQ(run(with_paths({"gen-data"})).code, 0);
  for (int r : {4, 8, 16, 32}) EXPECT_TRUE(fs::exists(tier_path(dir / "data", r)));
  auto r = run(with_paths({"train", "--role", "base"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"iter\":0"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "reports" / "metrics_base.jsonl"));
  ASSERT_EQ(run(with_paths({"train", "--role", "ssr", "--quiet"})).code, 0);

  // cascade: 8 -> 16 -> 32 with one SSR checkpoint
  r = run(with_paths({"sample", "--n", "2", "--cascade", "--resolution", "8"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = nlohmann::json::parse(r.out);
  EXPECT_EQ(s["ssr_applications"], 2);
  EXPECT_EQ(s["shape"], (std::vector<int>{2, 2, 3, 32, 32}));
  EXPECT_EQ(s["ssr_digest"], file_digest(dir / "ckpt" / "ssr" / "ema.snw"));
  for (const auto& st : s["stages"]) {
    EXPECT_TRUE(st["finite"].get<bool>());
    EXPECT_GE(st["min"].get<double>(), 0.0);
    EXPECT_LE(st["max"].get<double>(), 1.0);
  }
  const SnwFile samples = read_snw(dir / "reports" / "samples.snw");
  EXPECT_EQ(samples.arrays.size(), 4u);

  const RunConfig c = resolve_config(fs::path(cfg), {});
  write_file(dir / "s.json", nlohmann::json(preset_spec('S', c.search, c.model, 16)).dump());
  r = run(with_paths({"extract", "--spec", (dir / "s.json").string(), "--out", (dir / "s.snw").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  std::optional<SubnetSpec> native;
  const Supernet small = load_network(dir / "s.snw", &native);
  EXPECT_EQ(small.total_elements(), nlohmann::json::parse(r.out)["elements"].get<std::int64_t>());
  ASSERT_TRUE(native.has_value());
  EXPECT_EQ(native->resolution, 16);

  r = run(with_paths({"analyze", "--samples", "50"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto hist = read_json(dir / "reports" / "hist.json");
  EXPECT_EQ(hist["search_space_size"], enumerate_count(c.search, c.model).str());
  EXPECT_EQ(hist["cost"]["samples"], 50);

  r = run(with_paths({"bench", "--preset", "S", "--preset", "B", "--spec", (dir / "s.json").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "reports" / "bench.json").size(), 3u);

  r = run(with_paths({"eval"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "reports" / "table.csv");
  EXPECT_EQ(csv.rfind("Model,Params,Proxy-FD,Proxy-KD,ValLoss,Time\r\nSNED-B,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "reports" / "table.txt"));
  EXPECT_TRUE(fs::exists(dir / "reports" / "table.json"));
}
