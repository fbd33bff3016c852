// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any hard criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "pave/alignment.hpp"
#include "pave/config.hpp"
#include "pave/costing.hpp"
#include "pave/errors.hpp"
#include "pave/harness.hpp"
#include "pave/patch_file.hpp"
#include "pave/rng.hpp"
#include "pave/rope.hpp"

namespace fs = std::filesystem;
using namespace pave;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kZeroInitConfigs = 20;
constexpr double kZeroInitSeconds = 10.0;
constexpr double kGradTolerance = 1e-5;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kAlignmentPairs = 1000;
constexpr double kAlignmentSeconds = 5.0;
constexpr std::size_t kRopeTrials = 1000;
constexpr double kRopeNormTol = 1e-12;
constexpr double kRopeShiftTol = 1e-9;
constexpr double kRopeSeconds = 10.0;
constexpr double kParamBand = 0.30;
constexpr double kFlopsBand = 0.50;
constexpr double kOverheadLoPct = 0.05;
constexpr double kOverheadHiPct = 0.3;
constexpr int kSideCopySeeds = 5;
constexpr double kPaveMinAcc = 0.95;
constexpr double kFtMargin = 0.05;
constexpr double kLearnableMargin = 0.02;
constexpr double kSideCopySeconds = 15.0 * 60.0;
constexpr int kStackSeeds = 3;
constexpr double kStackMargin = 0.02;
constexpr double kReloadTol = 1e-5;
constexpr double kSizeRatioBand = 0.10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int g_failures = 0;
bool g_base_unchanged = true;
std::vector<std::string> g_base_log;

std::FILE* g_log = nullptr;

void emit(const std::string& line) {
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  if (g_log) {
    std::fputs(line.c_str(), g_log);
    std::fflush(g_log);
  }
}

void report(int id, const char* name, bool pass, const std::string& detail) {
  emit("criterion " + std::to_string(id) + " " + name + ": " + (pass ? "PASS" : "FAIL") + "  " + detail + "\n");
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note_base(const char* run, std::uint64_t before, std::uint64_t after) {
  if (before != after) {
    g_base_unchanged = false;
    g_base_log.push_back(run);
  }
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ExperimentSpec default_spec(TaskKind kind, std::uint64_t seed) {
  auto spec = experiment_from(default_run_config());
  spec.task.kind = kind;
  spec.task.seed = seed;
  spec.train.seed = seed;
  spec.seed = seed;
  return spec;
}

// 1

void zero_init() {
  const auto t0 = Clock::now();
  Rng rng(20260101);
  const TaskKind kinds[] = {TaskKind::SideCopy, TaskKind::DenseEvent, TaskKind::ConflictAV, TaskKind::MultiView};
  std::size_t done = 0, identical = 0, attempts = 0;
  while (done < kZeroInitConfigs && attempts < 50 * kZeroInitConfigs) {
    ++attempts;
    RunConfig rc = default_run_config();
    rc.model.d = 8 * (2 + rng.below(3));
    rc.model.n_lm_heads = 2;
    rc.model.n_lm_layers = 1 + rng.below(2);
    rc.model.d_ff = 2 * rc.model.d;
    rc.model.vocab_size = 16;
    rc.model.n_frames = 2 + rng.below(3);
    rc.model.tokens_per_frame = 2 + 2 * rng.below(3);
    rc.model.raw_video_dim = 4;
    rc.model.raw_side_dim = 4;
    rc.model.side_dim = 4 * (1 + rng.below(3));
    rc.model.seed = rng.next_u64();
    rc.patch.n_layers = 1 + rng.below(3);
    rc.patch.n_heads = 2;
    rc.patch.hidden_dim = 16 * (1 + rng.below(2));
    rc.patch.rope.mode = rng.below(2) ? RopeMode::Temporal1D : RopeMode::Spatiotemporal3D;
    rc.patch.query_mode = rng.below(2) ? QueryMode::Visual : QueryMode::Learnable;
    rc.lora.rank = 1 + rng.below(4);
    rc.task.kind = kinds[rng.below(4)];
    rc.task.n_side = rc.model.n_frames * (1 + rng.below(4)) + rng.below(3);
    rc.task.dense_rate = 1 + rng.below(4);
    rc.task.seed = rng.next_u64();
    rc.train.seed = rng.next_u64();
    try {
      validate_task(rc.task, rc.model);
      const auto base = init_model(rc.model);
      const auto spec = experiment_from(rc);
      AdaptedModel plain{&base, {}};
      AdaptedModel patched{&base, {make_stage(AblationMode::PaveVisual, base, spec)}};
      const auto episodes = gen_episodes(base, rc.task, 3);
      const auto batch = collate(episodes);
      const auto a = forward_batch(plain, batch).logits;
      const auto b = forward_batch(patched, batch).logits;
      ++done;
      if (bit_equal(a.data(), b.data())) ++identical;
    } catch (const ConfigError&) {
      continue;
    }
  }
  const double secs = seconds_since(t0);
  report(1, "zero-init", done == kZeroInitConfigs && identical == done && secs < kZeroInitSeconds,
         fmt("identical=%zu/%zu time=%.2fs", identical, done, secs));
}

// 2

void gradients() {
  const auto t0 = Clock::now();
  const auto r = check_pipeline_gradients(grad_check_config());
  const double secs = seconds_since(t0);
  report(2, "grad-check", r.max_rel_error <= kGradTolerance && secs < kGradSeconds,
         fmt("max_rel_error=%.3e checked=%zu time=%.2fs", r.max_rel_error, r.checked, secs));
}

// 3

void alignment() {
  const auto t0 = Clock::now();
  bool ok = true;
  const std::pair<std::size_t, std::size_t> fixed[] = {{120, 4}, {960, 30}, {18432, 576}, {25088, 784}};
  std::string sizes;
  for (const auto& [n, g] : fixed) {
    const auto plan = plan_alignment(n, 32);
    sizes += fmt("%zu->%zu ", n, plan.group_size);
    ok = ok && plan.group_size == g;
  }
  Rng rng(3);
  std::size_t bad = 0;
  for (std::size_t trial = 0; trial < kAlignmentPairs; ++trial) {
    const std::size_t k = 1 + rng.below(64);
    const std::size_t n = rng.below(2000);
    const auto plan = plan_alignment(n, k);
    std::vector<int> hits(n, 0);
    bool good = plan.boundaries.size() == k;
    for (std::size_t f = 0; good && f < k; ++f) {
      const auto [lo, hi] = plan.boundaries[f];
      good = lo <= hi && hi <= n && plan.group_length(f) <= plan.group_size;
      if (f > 0) good = good && lo >= plan.boundaries[f - 1].second && lo >= plan.boundaries[f - 1].first;
      for (std::size_t i = lo; good && i < hi; ++i) ++hits[i];
    }
    for (int h : hits) good = good && h == 1;
    if (!good) ++bad;
  }
  const double secs = seconds_since(t0);
  ok = ok && bad == 0 && secs < kAlignmentSeconds;
  report(3, "alignment", ok, fmt("sizes %sviolations=%zu/%zu time=%.2fs", sizes.c_str(), bad, kAlignmentPairs, secs));
}

// 4

double row_norm(const Tensor& x, std::size_t r) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.dim(1); ++j) s += x.at({r, j}) * x.at({r, j});
  return std::sqrt(s);
}

void rope() {
  const auto t0 = Clock::now();
  Rng rng(4);
  double worst_norm = 0.0, worst_shift = 0.0;
  for (auto mode : {RopeMode::Temporal1D, RopeMode::Spatiotemporal3D}) {
    for (std::size_t trial = 0; trial < kRopeTrials; ++trial) {
      const std::size_t d = 4 * (2 + rng.below(7));
      const auto spec = mode == RopeMode::Temporal1D ? RopeSpec::temporal(d) : RopeSpec::spatiotemporal(d);
      std::vector<TokenPosition> qp, kp;
      for (int i = 0; i < 3; ++i) qp.push_back({rng.uniform(-50, 50), rng.uniform(0, 14), rng.uniform(0, 14)});
      for (int i = 0; i < 5; ++i) kp.push_back({rng.uniform(-50, 50), rng.uniform(0, 14), rng.uniform(0, 14)});
      const auto q = Tensor::normal({3, d}, 1.0, rng), k = Tensor::normal({5, d}, 1.0, rng);
      const auto rq = apply_rope(q, qp, spec);
      for (std::size_t r = 0; r < 3; ++r) worst_norm = std::max(worst_norm, std::abs(row_norm(rq, r) - row_norm(q, r)));
      worst_shift = std::max(worst_shift, rope_score_shift_check(q, k, qp, kp, spec, rng.uniform(-100, 100)));
    }
  }
  const double secs = seconds_since(t0);
  report(4, "rope", worst_norm <= kRopeNormTol && worst_shift <= kRopeShiftTol && secs < kRopeSeconds,
         fmt("norm_err=%.2e shift_err=%.2e trials=%zux2 time=%.2fs", worst_norm, worst_shift, kRopeTrials, secs));
}

// 5

void token_counts() {
  bool ok = true;
  std::string detail;
  const auto base = init_model(default_run_config().model);
  const auto km = base.config.n_frames * base.config.tokens_per_frame;
  for (std::size_t n_side : {8, 16, 33, 64}) {
    auto spec = default_spec(TaskKind::SideCopy, 1);
    spec.task.n_side = n_side;
    const auto batch = collate(gen_episodes(base, spec.task, 2));
    const auto pave_stage = make_stage(AblationMode::PaveVisual, base, spec);
    const auto inter_stage = make_stage(AblationMode::Interleave, base, spec);
    const auto n_text = toy_cost_query(base, spec.task, pave_stage).n_text;
    const auto plain = forward_batch(AdaptedModel{&base, {}}, batch).llm_tokens;
    const auto pave = forward_batch(AdaptedModel{&base, {pave_stage}}, batch).llm_tokens;
    const auto inter = forward_batch(AdaptedModel{&base, {inter_stage}}, batch).llm_tokens;
    ok = ok && plain == km + n_text && pave == km + n_text && inter == pave + n_side;
  }
  detail += fmt("toy K*M=%zu ", km);
  for (const char* setting : {"audio", "3d", "dense", "multiview"}) {
    for (const char* llm : {"qwen2-0.5b", "qwen2-7b"}) {
      auto q = make_cost_query(llm_preset(llm), cost_setting(setting));
      const auto pave = llm_input_tokens(q);
      q.variant = FusionVariant::Interleave;
      ok = ok && pave == q.n_visual + q.n_text && llm_input_tokens(q) == pave + q.n_side;
    }
  }
  auto q = make_cost_query(llm_preset("qwen2-0.5b"), cost_setting("3d"));
  const auto pave = cost_report(q);
  q.variant = FusionVariant::Interleave;
  const auto inter = cost_report(q);
  ok = ok && inter.flops_total > pave.flops_total;
  detail += fmt("0.5b/3d tokens pave=%zu interleave=%zu tflops pave=%.3f interleave=%.3f", pave.llm_tokens,
                inter.llm_tokens, pave.flops_total * 1e-12, inter.flops_total * 1e-12);
  report(5, "token-counts", ok, detail);
}

// 6

bool within(double value, double target, double band) { return std::abs(value - target) <= band * target; }

void costing() {
  bool ok = true;
  std::string detail;
  const auto p7 = count_params(make_cost_query(llm_preset("qwen2-7b"), cost_setting("audio"))).patch;
  const auto p05 = count_params(make_cost_query(llm_preset("qwen2-0.5b"), cost_setting("audio"))).patch;
  ok = ok && within(static_cast<double>(p7), 9.0e6, kParamBand) && within(static_cast<double>(p05), 6.2e6, kParamBand);
  detail += fmt("params 7b=%.2fM 0.5b=%.2fM; tflops", p7 * 1e-6, p05 * 1e-6);
  struct Target {
    const char* setting;
    double small, large;
  };
  const Target targets[] = {{"audio", 0.07, 0.10}, {"3d", 0.12, 0.15}, {"dense", 0.07, 0.10}, {"multiview", 0.14, 0.17}};
  for (const auto& t : targets) {
    const double s = count_patch_flops(make_cost_query(llm_preset("qwen2-0.5b"), cost_setting(t.setting))) * 1e-12;
    const double l = count_patch_flops(make_cost_query(llm_preset("qwen2-7b"), cost_setting(t.setting))) * 1e-12;
    ok = ok && within(s, t.small, kFlopsBand) && within(l, t.large, kFlopsBand);
    detail += fmt(" %s=%.3f/%.3f", t.setting, s, l);
  }
  const auto overhead = overhead_ratio(make_cost_query(llm_preset("qwen2-7b"), cost_setting("audio")));
  const bool overhead_ok = overhead.first >= kOverheadLoPct && overhead.first <= kOverheadHiPct &&
                           overhead.second >= kOverheadLoPct && overhead.second <= kOverheadHiPct;
  ok = ok && overhead_ok;
  detail += fmt("; 7b audio overhead params=%.3f%% flops=%.3f%%", overhead.first, overhead.second);

  // Formula versus instrumented multiply-accumulates on toy models.
  bool exact = true;
  Rng rng(6);
  for (auto mode : {QueryMode::Visual, QueryMode::Learnable}) {
    for (std::size_t n_side : {0, 5, 16, 37}) {
      auto rc = default_run_config();
      rc.model.d = 16;
      rc.model.n_frames = 4;
      rc.model.tokens_per_frame = 4;
      PatchConfig c = rc.patch;
      c.model_dim = 16;
      c.side_dim = 8;
      c.hidden_dim = 16;
      c.query_mode = mode;
      c.n_query_tokens = 16;
      const auto patch = init_patch(c);
      const auto video = Tensor::normal({4, 4, 16}, 1.0, rng);
      const auto side = Tensor::normal({n_side, 8}, 1.0, rng);
      MacCounter counter;
      fuse(video, side, patch);
      CostQuery q;
      q.patch = c;
      q.n_side = n_side;
      q.n_frames = 4;
      q.queries_per_frame = 4;
      q.n_visual = 16;
      exact = exact && count_patch_flops(q) == 2 * counter.count();
    }
  }
  {
    const auto base = init_model(default_run_config().model);
    const auto x = Tensor::normal({70, base.config.d}, 1.0, rng);
    CostQuery q;
    q.llm = llm_dims(base.config);
    q.n_visual = 70;
    q.n_text = 0;
    q.variant = FusionVariant::None;
    MacCounter counter;
    forward_logits(base, x);
    exact = exact && count_llm_prefill_flops(q) == 2 * counter.count();
  }
  ok = ok && exact;
  detail += fmt("; toy formula==instrumented %s", exact ? "yes" : "no");
  report(6, "cost-model", ok, detail);
}

// 7, 9

struct TrainedPave {
  ExperimentSpec spec;
  Stage stage;
};

TrainedPave sidecopy(const ToyVideoLLM& base) {
  const auto t0 = Clock::now();
  const double chance = 1.0 / static_cast<double>(default_run_config().task.n_classes);
  bool ok = true;
  double min_pave = 1.0, max_ft = 0.0;
  std::string detail = "pave/ft";
  TrainedPave keep;
  for (int seed = 1; seed <= kSideCopySeeds; ++seed) {
    const auto spec = default_spec(TaskKind::SideCopy, static_cast<std::uint64_t>(seed));
    AdaptedModel model{&base, {make_stage(AblationMode::PaveVisual, base, spec)}};
    const auto pave = train(model, spec.task, spec.train);
    note_base("sidecopy pave-visual", pave.base_checksum_before, pave.base_checksum_after);
    const auto ft = run_ablation(AblationMode::FT, base, spec);
    if (!ft.base_unchanged) note_base("sidecopy ft", 0, 1);
    const double a = pave.final_eval.accuracy, f = ft.eval.accuracy;
    min_pave = std::min(min_pave, a);
    max_ft = std::max(max_ft, f);
    ok = ok && a >= kPaveMinAcc && f <= chance + kFtMargin;
    detail += fmt(" s%d=%.3f/%.3f", seed, a, f);
    if (seed == 1) keep = {spec, std::move(model.stages.front())};
  }
  const auto learn = run_ablation(AblationMode::PaveLearnable, base, keep.spec);
  if (!learn.base_unchanged) note_base("sidecopy pave-learnable", 0, 1);
  const auto first = AdaptedModel{&base, {keep.stage}};
  const double visual_s1 = evaluate(first, eval_episodes(base, keep.spec.task, keep.spec.train),
                                    keep.spec.train.batch_size).accuracy;
  const bool soft = visual_s1 >= learn.eval.accuracy - kLearnableMargin;
  const double secs = seconds_since(t0);
  ok = ok && secs <= kSideCopySeconds;
  detail += fmt(" chance=%.3f time=%.0fs; soft visual>=learnable-%.2f: %s (%.3f vs %.3f)", chance, secs,
                kLearnableMargin, soft ? "yes" : "no", visual_s1, learn.eval.accuracy);
  report(7, "sidecopy", ok, detail);
  return keep;
}

void save_load(const ToyVideoLLM& base, const TrainedPave& trained) {
  const auto dir = fs::temp_directory_path() / fmt("pave_acceptance_%d", static_cast<int>(::getpid()));
  fs::create_directories(dir);
  bool ok = true;
  std::string detail;
  try {
    save_patch(dir / "patch.pave", trained.stage, base);
    save_checkpoint(dir / "full.ckpt", base, trained.stage);
    const auto loaded = load_patch(dir / "patch.pave", base);
    const auto batch = collate(gen_episodes(base, trained.spec.task, 16, std::size_t{1} << 41));
    const auto a = forward_batch(AdaptedModel{&base, {trained.stage}}, batch).logits;
    const auto b = forward_batch(AdaptedModel{&base, {loaded}}, batch).logits;
    const double diff = max_abs_diff(a.data(), b.data());
    const double size_ratio = static_cast<double>(fs::file_size(dir / "patch.pave")) /
                              static_cast<double>(fs::file_size(dir / "full.ckpt"));
    const auto cost = count_params(toy_cost_query(base, trained.spec.task, trained.stage));
    const double param_ratio = static_cast<double>(cost.trainable) / static_cast<double>(cost.total);
    ok = diff <= kReloadTol && within(size_ratio, param_ratio, kSizeRatioBand);
    detail = fmt("max_logit_diff=%.2e file_ratio=%.4f param_ratio=%.4f (trainable=%llu total=%llu)", diff, size_ratio,
                 param_ratio, static_cast<unsigned long long>(cost.trainable),
                 static_cast<unsigned long long>(cost.total));
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  fs::remove_all(dir);
  report(9, "save-load", ok, detail);
}

// 8

void stacking(const ToyVideoLLM& base) {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail = "combined/best-single";
  const StackBudget budget;
  for (int seed = 1; seed <= kStackSeeds; ++seed) {
    const auto dense = budget.patch_a(default_spec(TaskKind::DenseEvent, static_cast<std::uint64_t>(seed)));
    AdaptedModel a{&base, {make_stage(AblationMode::PaveVisual, base, dense, 0, "a")}};
    const auto ra = train(a, dense.task, dense.train);
    note_base("stack patch a", ra.base_checksum_before, ra.base_checksum_after);

    const auto joint = budget.patch_b(default_spec(TaskKind::Joint, static_cast<std::uint64_t>(seed)));
    const auto r = stack_patch(base, a.stages.front(), joint, 1);
    note_base("stack patch b", r.base_hash_before, r.base_hash_after);

    AdaptedModel alone{&base, {make_stage(AblationMode::PaveVisual, base, joint, 1, "b")}};
    const auto rb = train(alone, joint.task, joint.train);
    note_base("stack b alone", rb.base_checksum_before, rb.base_checksum_after);

    const double best = std::max({r.a_only_accuracy, r.b_only_accuracy, rb.final_eval.accuracy});
    const bool a_kept = r.a_hash_before == r.a_hash_after;
    ok = ok && a_kept && r.combined_accuracy >= best - kStackMargin;
    detail += fmt(" s%d=%.3f/%.3f(a=%.3f b=%.3f b_alone=%.3f dense=%.3f a_hash=%s)", seed, r.combined_accuracy, best,
                  r.a_only_accuracy, r.b_only_accuracy, rb.final_eval.accuracy, ra.final_eval.accuracy,
                  a_kept ? "same" : "changed");
  }
  detail += fmt(" time=%.0fs", seconds_since(t0));
  report(8, "stacking", ok, detail);
}

bool selected(const std::vector<int>& only, int id) {
  return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
}

}  // namespace

// Arguments, if any, select a subset of criteria by number. Result lines are
// also written to acceptance.txt in the working directory.
int main(int argc, char** argv) {
  g_log = std::fopen("acceptance.txt", "w");
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const auto t0 = Clock::now();
  if (selected(only, 1)) zero_init();
  if (selected(only, 2)) gradients();
  if (selected(only, 3)) alignment();
  if (selected(only, 4)) rope();
  if (selected(only, 5)) token_counts();
  if (selected(only, 6)) costing();

  const auto base = init_model(default_run_config().model);
  const auto base_hash = base.fingerprint();
  TrainedPave trained;
  if (selected(only, 7)) {
    trained = sidecopy(base);
  } else if (selected(only, 9)) {
    trained.spec = default_spec(TaskKind::SideCopy, 1);
    AdaptedModel model{&base, {make_stage(AblationMode::PaveVisual, base, trained.spec)}};
    const auto r = train(model, trained.spec.task, trained.spec.train);
    note_base("save-load training", r.base_checksum_before, r.base_checksum_after);
    trained.stage = std::move(model.stages.front());
  }
  if (selected(only, 8)) stacking(base);
  if (selected(only, 9)) save_load(base, trained);

  if (selected(only, 10)) {
    note_base("whole run", base_hash, base.fingerprint());
    std::string where;
    for (const auto& s : g_base_log) where += " " + s;
    report(10, "base-unchanged", g_base_unchanged,
           g_base_unchanged ? fmt("fingerprint=0x%016llx", static_cast<unsigned long long>(base_hash))
                            : "changed in:" + where);
  }
  emit(fmt("total time %.0fs, %d failing\n", seconds_since(t0), g_failures));
  if (g_log) std::fclose(g_log);
  return g_failures == 0 ? 0 : 1;
}
