// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, eval, ablate, cost, gradcheck, stack and
// dump-attn. Every subcommand reads the same flat config file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pave/config.hpp"
#include "pave/costing.hpp"
#include "pave/errors.hpp"
#include "pave/harness.hpp"
#include "pave/patch_file.hpp"

namespace fs = std::filesystem;
using namespace pave;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Overrides train.seed and task.seed");
  cmd->add_option("--out", c.out_dir, "Directory for metrics, reports and patch files");
  cmd->add_option("--set", c.overrides, "Extra key=value overrides applied after the config file");
}

RunConfig resolve(const Common& c, RunConfig base = default_run_config()) {
  RunConfig rc = c.config_path.empty() ? base : load_config(c.config_path, base);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) {
    rc.train.seed = *c.seed;
    rc.task.seed = *c.seed;
  }
  return rc;
}

std::optional<fs::path> out_dir(const Common& c) {
  if (c.out_dir.empty()) return std::nullopt;
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir);
}

void write_text(const std::optional<fs::path>& dir, const std::string& name, const std::string& text) {
  if (!dir) return;
  std::ofstream out(*dir / name);
  if (!out) throw std::runtime_error("cannot write " + (*dir / name).string());
  out << text;
}

std::string history_text(const std::vector<MetricRecord>& history) {
  std::string s;
  for (const auto& r : history) s += r.to_line() + "\n";
  return s;
}

int cmd_train(const Common& c, const std::string& mode_name) {
  const auto rc = resolve(c);
  const auto dir = out_dir(c);
  const auto base = init_model(rc.model);
  const auto spec = experiment_from(rc);
  AdaptedModel model;
  model.base = &base;
  model.stages.push_back(make_stage(parse_ablation_mode(mode_name), base, spec));
  const auto result = train(model, spec.task, spec.train);
  const auto text = history_text(result.history);
  std::cout << text;
  write_text(dir, "metrics.txt", text);
  write_text(dir, "config.txt", rc.to_text());
  if (dir && !model.stages.front().interleave) save_patch(*dir / "patch.pave", model.stages.front(), base);
  return result.base_checksum_before == result.base_checksum_after ? 0 : 3;
}

int cmd_eval(const Common& c, const std::string& patch_path) {
  const auto rc = resolve(c);
  const auto base = init_model(rc.model);
  AdaptedModel model;
  model.base = &base;
  model.stages.push_back(load_patch(patch_path, base));
  const auto held_out = eval_episodes(base, rc.task, rc.train);
  const auto r = evaluate(model, held_out, rc.train.batch_size);
  const auto line = MetricRecord{"eval", 0, r.loss, r.accuracy}.to_line() + "\n";
  std::cout << line;
  write_text(out_dir(c), "eval.txt", line);
  return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& mode_names) {
  const auto rc = resolve(c);
  const auto base = init_model(rc.model);
  std::vector<AblationMode> modes;
  for (const auto& n : mode_names) modes.push_back(parse_ablation_mode(n));
  if (modes.empty()) modes.assign(std::begin(kAllAblationModes), std::end(kAllAblationModes));
  const auto report = run_ablation(modes, base, experiment_from(rc));
  std::cout << report.to_text();
  write_text(out_dir(c), "ablation.txt", report.to_text());
  for (const auto& row : report.rows)
    if (!row.base_unchanged) return 3;
  return 0;
}

int cmd_cost(const Common& c, const std::string& llm, const std::string& setting, const std::string& variant,
             std::size_t lora_rank, bool unmerged) {
  CostQuery q;
  if (llm == "toy") {
    const auto rc = resolve(c);
    const auto base = init_model(rc.model);
    const auto spec = experiment_from(rc);
    q = toy_cost_query(base, spec.task, make_stage(AblationMode::PaveVisual, base, spec));
  } else {
    q = make_cost_query(llm_preset(llm), cost_setting(setting));
    if (lora_rank > 0) {
      LoraSpec ls;
      ls.rank = lora_rank;
      q.lora = ls;
    }
  }
  if (variant == "interleave") {
    q.variant = FusionVariant::Interleave;
  } else if (variant == "none") {
    q.variant = FusionVariant::None;
  } else if (variant != "pave") {
    throw ConfigError("unknown variant '" + variant + "' (expected pave, interleave or none)");
  }
  q.lora_merged = !unmerged;
  const auto text = cost_report(q).to_text();
  std::cout << text;
  write_text(out_dir(c), "cost.txt", text);
  return 0;
}

int cmd_gradcheck(const Common& c, double tolerance) {
  const auto rc = resolve(c, grad_check_config());
  const auto r = check_pipeline_gradients(rc);
  char buf[200];
  std::snprintf(buf, sizeof buf, "checked=%zu max_rel_error=%.3e tolerance=%.1e status=%s\n", r.checked,
                r.max_rel_error, tolerance, r.max_rel_error <= tolerance ? "ok" : "fail");
  std::cout << buf;
  write_text(out_dir(c), "gradcheck.txt", buf);
  return r.max_rel_error <= tolerance ? 0 : 1;
}

int cmd_stack(const Common& c, const std::string& patch_a_path, const StackBudget& budget) {
  const auto rc = resolve(c);
  const auto dir = out_dir(c);
  const auto base = init_model(rc.model);
  auto spec = experiment_from(rc);
  Stage patch_a;
  if (!patch_a_path.empty()) {
    patch_a = load_patch(patch_a_path, base);
  } else {
    const auto a_spec = budget.patch_a(spec);
    AdaptedModel a;
    a.base = &base;
    a.stages.push_back(make_stage(AblationMode::PaveVisual, base, a_spec, 0, "a"));
    const auto ra = train(a, a_spec.task, a_spec.train);
    write_text(dir, "metrics_a.txt", history_text(ra.history));
    patch_a = std::move(a.stages.front());
    if (dir) save_patch(*dir / "patch_a.pave", patch_a, base);
  }
  spec = budget.patch_b(spec);
  const auto r = stack_patch(base, patch_a, spec, 1);
  std::cout << r.to_text();
  write_text(dir, "metrics_b.txt", history_text(r.history));
  write_text(dir, "stack.txt", r.to_text());
  if (dir) save_patch(*dir / "patch_b.pave", r.patch_b, base);
  return r.a_hash_before == r.a_hash_after && r.base_hash_before == r.base_hash_after ? 0 : 3;
}

int cmd_dump_attn(const Common& c, const std::string& patch_path, std::size_t episode, std::size_t layer,
                  std::size_t frame) {
  const auto rc = resolve(c);
  const auto base = init_model(rc.model);
  const auto stage = load_patch(patch_path, base);
  const auto ep = gen_episodes(base, rc.task, 1, episode).front();
  const auto text = dump_attention(stage, ep, layer, frame).to_text();
  std::cout << text;
  write_text(out_dir(c), "attention.txt", text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pave: side-channel patches for a frozen toy video LLM"};
  app.require_subcommand(1);

  Common common;
  std::string mode = "pave-visual";
  auto* train_cmd = app.add_subcommand("train", "Train one stage and save it");
  add_common(train_cmd, common);
  train_cmd->add_option("--mode", mode, "ft, interleave, pave-visual or pave-learnable");

  std::string patch_path;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved patch on held-out episodes");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--patch", patch_path, "Patch file")->required()->check(CLI::ExistingFile);

  std::vector<std::string> modes;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare fusion variants under one budget");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--modes", modes, "Subset of modes (default: all)")->delimiter(',');

  std::string llm = "qwen2-7b", setting = "audio", variant = "pave";
  std::size_t lora_rank = 0;
  bool unmerged = false;
  auto* cost_cmd = app.add_subcommand("cost", "Print the modeled parameter and FLOP report");
  add_common(cost_cmd, common);
  cost_cmd->add_option("--llm", llm, "qwen2-7b, qwen2-0.5b or toy");
  cost_cmd->add_option("--setting", setting, "audio, 3d, dense or multiview");
  cost_cmd->add_option("--variant", variant, "pave, interleave or none");
  cost_cmd->add_option("--lora-rank", lora_rank, "Attach LoRA of this rank to the preset LLM");
  cost_cmd->add_flag("--unmerged", unmerged, "Count LoRA FLOPs as unmerged");

  double tolerance = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "End-to-end finite-difference check at width 16");
  add_common(grad_cmd, common);
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");

  std::string patch_a;
  auto* stack_cmd = app.add_subcommand("stack", "Train a second patch on top of a frozen one");
  add_common(stack_cmd, common);
  stack_cmd->add_option("--patch-a", patch_a, "Frozen first patch (default: train one on DenseEvent)")
      ->check(CLI::ExistingFile);
  StackBudget budget;
  stack_cmd->add_option("--a-episodes", budget.a_episodes, "Training episodes for patch A on DenseEvent")
      ->capture_default_str();
  stack_cmd->add_option("--b-episodes", budget.b_episodes, "Training episodes for patch B on Joint")
      ->capture_default_str();
  stack_cmd->add_option("--batch-size", budget.batch_size, "Batch size for both patches")->capture_default_str();
  stack_cmd->add_option("--a-lr", budget.a_lr, "Learning rate for patch A")->capture_default_str();
  stack_cmd->add_option("--b-lr", budget.b_lr, "Learning rate for patch B")->capture_default_str();

  std::size_t episode = 0, layer = 0, frame = 0;
  auto* dump_cmd = app.add_subcommand("dump-attn", "Print one frame's cross-attention map");
  add_common(dump_cmd, common);
  dump_cmd->add_option("--patch", patch_path, "Patch file")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--episode", episode, "Episode index of the configured task");
  dump_cmd->add_option("--layer", layer, "Fusion layer");
  dump_cmd->add_option("--frame", frame, "Key frame");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(common, mode);
    if (*eval_cmd) return cmd_eval(common, patch_path);
    if (*ablate_cmd) return cmd_ablate(common, modes);
    if (*cost_cmd) return cmd_cost(common, llm, setting, variant, lora_rank, unmerged);
    if (*grad_cmd) return cmd_gradcheck(common, tolerance);
    if (*stack_cmd) return cmd_stack(common, patch_a, budget);
    if (*dump_cmd) return cmd_dump_attn(common, patch_path, episode, layer, frame);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
