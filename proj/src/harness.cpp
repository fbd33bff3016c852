// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/harness.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "pave/errors.hpp"

namespace pave {

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::FT: return "ft";
    case AblationMode::Interleave: return "interleave";
    case AblationMode::PaveVisual: return "pave-visual";
    case AblationMode::PaveLearnable: return "pave-learnable";
  }
  return "unknown";
}

AblationMode parse_ablation_mode(const std::string& name) {
  for (auto m : kAllAblationModes)
    if (to_string(m) == name) return m;
  throw ConfigError("unknown ablation mode '" + name + "' (expected ft, interleave, pave-visual or pave-learnable)");
}

ExperimentSpec experiment_from(const RunConfig& config) {
  ExperimentSpec spec;
  spec.task = config.task;
  spec.train = config.train;
  spec.patch = config.patch;
  spec.lora = config.lora;
  spec.seed = config.train.seed;
  return spec;
}

Stage make_stage(AblationMode mode, const ToyVideoLLM& base, const ExperimentSpec& spec, std::size_t stream,
                 std::string name) {
  if (name.empty()) name = to_string(mode);
  validate_task(spec.task, base.config);
  if (stream >= stream_count(spec.task.kind)) {
    throw ConfigError("stream " + std::to_string(stream) + " does not exist for task " + to_string(spec.task.kind));
  }
  if (mode == AblationMode::PaveVisual || mode == AblationMode::PaveLearnable) {
    PatchConfig pc = spec.patch;
    pc.query_mode = mode == AblationMode::PaveVisual ? QueryMode::Visual : QueryMode::Learnable;
    return make_pave_stage(base, spec.task, stream, pc, spec.lora, spec.seed, std::move(name));
  }
  Stage s;
  s.name = std::move(name);
  s.stream = stream;
  s.base_fingerprint = base.fingerprint();
  s.lora = attach_lora(base, spec.lora, mix64(spec.seed + 1));
  if (mode == AblationMode::Interleave) {
    const auto d = base.config.d, sd = base.config.side_dim;
    Rng rng(spec.seed);
    s.interleave = InterleaveProjection{
        Tensor::normal({d, sd}, 1.0 / std::sqrt(static_cast<double>(sd)), rng),
        Tensor::zeros({d}),
    };
    s.side_tokens = stream_length(spec.task, base.config.n_frames, stream);
  }
  auto params = s.named_parameters();
  set_requires_grad(params, true);
  return s;
}

CostQuery toy_cost_query(const ToyVideoLLM& base, const TaskSpec& task, const Stage& stage) {
  const auto& mc = base.config;
  CostQuery q;
  q.llm = llm_dims(mc);
  q.n_frames = mc.n_frames;
  q.queries_per_frame = mc.tokens_per_frame;
  q.n_visual = mc.n_frames * mc.tokens_per_frame;
  q.n_text = 2 + answer_length(task.kind) - 1;
  q.n_side = stream_length(task, mc.n_frames, stage.stream);
  if (stage.lora) q.lora = stage.lora->spec;
  if (stage.patch) {
    q.variant = FusionVariant::Pave;
    q.patch = stage.patch->config;
  } else if (stage.interleave) {
    q.variant = FusionVariant::Interleave;
    q.patch.model_dim = mc.d;
    q.patch.side_dim = mc.side_dim;
  } else {
    q.variant = FusionVariant::None;
    q.n_side = 0;
  }
  return q;
}

const AblationRow* AblationReport::find(AblationMode mode) const {
  for (const auto& r : rows)
    if (r.mode == mode) return &r;
  return nullptr;
}

std::string AblationReport::to_text() const {
  std::ostringstream os;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "task=%s mode=%s acc=%.6f loss=%.6f chance=%.6f trainable_params=%zu total_params=%zu "
                  "llm_tokens=%zu flops=%llu base_unchanged=%d\n",
                  pave::to_string(task).c_str(), pave::to_string(r.mode).c_str(), r.eval.accuracy, r.eval.loss,
                  chance, r.trainable_params, r.total_params, r.llm_tokens,
                  static_cast<unsigned long long>(r.modeled_flops), r.base_unchanged ? 1 : 0);
    os << buf;
  }
  return os.str();
}

AblationRow run_ablation(AblationMode mode, const ToyVideoLLM& base, const ExperimentSpec& spec) {
  AdaptedModel model;
  model.base = &base;
  model.stages.push_back(make_stage(mode, base, spec));
  const auto result = train(model, spec.task, spec.train);
  const auto& stage = model.stages.front();
  const auto query = toy_cost_query(base, spec.task, stage);
  const auto report = cost_report(query);

  AblationRow row;
  row.mode = mode;
  row.eval = result.final_eval;
  row.trainable_params = stage.parameter_count();
  row.total_params = report.params.total;
  row.llm_tokens = forward_batch(model, collate(gen_episodes(base, spec.task, 1))).llm_tokens;
  row.modeled_flops = report.flops_total;
  row.base_unchanged = result.base_checksum_before == result.base_checksum_after;
  row.history = result.history;
  return row;
}

AblationReport run_ablation(std::span<const AblationMode> modes, const ToyVideoLLM& base,
                            const ExperimentSpec& spec) {
  AblationReport report;
  report.task = spec.task.kind;
  report.chance = 1.0 / static_cast<double>(spec.task.n_classes);
  for (auto m : modes) report.rows.push_back(run_ablation(m, base, spec));
  return report;
}

std::string StackResult::to_text() const {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "combined_acc=%.6f a_only_acc=%.6f b_only_acc=%.6f a_hash_before=%016llx a_hash_after=%016llx "
                "base_unchanged=%d\n",
                combined_accuracy, a_only_accuracy, b_only_accuracy, static_cast<unsigned long long>(a_hash_before),
                static_cast<unsigned long long>(a_hash_after), base_hash_before == base_hash_after ? 1 : 0);
  return buf;
}

ExperimentSpec StackBudget::patch_a(ExperimentSpec spec) const {
  spec.task.kind = TaskKind::DenseEvent;
  spec.train.train_episodes = a_episodes;
  spec.train.batch_size = batch_size;
  spec.train.lr = a_lr;
  return spec;
}

ExperimentSpec StackBudget::patch_b(ExperimentSpec spec) const {
  spec.task.kind = TaskKind::Joint;
  spec.train.train_episodes = b_episodes;
  spec.train.batch_size = batch_size;
  spec.train.lr = b_lr;
  return spec;
}

StackResult stack_patch(const ToyVideoLLM& base, const Stage& patch_a, const ExperimentSpec& spec,
                        std::size_t stream_b) {
  if (!patch_a.patch) throw ConfigError("stack_patch: stage '" + patch_a.name + "' carries no patch");
  if (patch_a.base_fingerprint != base.fingerprint()) {
    throw ConfigError("stack_patch: patch '" + patch_a.name + "' was trained against a different base model");
  }
  validate_task(spec.task, base.config);
  if (patch_a.stream >= stream_count(spec.task.kind)) {
    throw ConfigError("stack_patch: task " + to_string(spec.task.kind) + " has no side stream " +
                      std::to_string(patch_a.stream) + " for patch '" + patch_a.name + "'");
  }
  const auto n_a = stream_length(spec.task, base.config.n_frames, patch_a.stream);
  if (patch_a.side_tokens != 0 && patch_a.side_tokens != n_a) {
    throw ConfigError("stack_patch: patch '" + patch_a.name + "' expects " + std::to_string(patch_a.side_tokens) +
                      " side tokens, task stream carries " + std::to_string(n_a));
  }
  if (stream_b == patch_a.stream) throw ConfigError("stack_patch: new patch must read a different side stream");

  AdaptedModel model;
  model.base = &base;
  model.stages.push_back(patch_a);
  model.stages.back().trainable = false;
  model.stages.push_back(make_stage(AblationMode::PaveVisual, base, spec, stream_b, "b"));

  StackResult r;
  r.a_hash_before = checksum(model.stages.front().named_parameters());
  const auto result = train(model, spec.task, spec.train);
  r.a_hash_after = checksum(model.stages.front().named_parameters());
  r.base_hash_before = result.base_checksum_before;
  r.base_hash_after = result.base_checksum_after;
  r.history = result.history;
  r.combined_accuracy = result.final_eval.accuracy;

  const auto held_out = eval_episodes(base, spec.task, spec.train);
  model.stages[1].active = false;
  r.a_only_accuracy = evaluate(model, held_out, spec.train.batch_size).accuracy;
  model.stages[1].active = true;
  model.stages[0].active = false;
  r.b_only_accuracy = evaluate(model, held_out, spec.train.batch_size).accuracy;
  model.stages[0].active = true;
  r.patch_b = std::move(model.stages[1]);
  return r;
}

std::string AttentionMap::to_text() const {
  std::ostringstream os;
  os << "layer=" << layer << " frame=" << frame << " queries=" << queries << " slots=" << slots << " tokens=";
  for (std::size_t s = 0; s < slots; ++s) os << (s ? "," : "") << slot_tokens[s];
  os << "\n";
  char buf[32];
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t s = 0; s < slots; ++s) {
      std::snprintf(buf, sizeof buf, "%s%.6f", s ? " " : "", at(q, s));
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

AttentionMap dump_attention(const Stage& stage, const Episode& episode, std::size_t layer, std::size_t frame) {
  if (!stage.patch) throw ConfigError("dump_attention: stage '" + stage.name + "' carries no patch");
  const auto& patch = *stage.patch;
  if (layer >= patch.layers.size()) {
    throw std::out_of_range("dump_attention: layer " + std::to_string(layer) + " >= " +
                            std::to_string(patch.layers.size()));
  }
  const auto k_frames = episode.video_tokens.dim(0);
  if (frame >= k_frames) {
    throw std::out_of_range("dump_attention: frame " + std::to_string(frame) + " >= " + std::to_string(k_frames));
  }
  if (stage.stream >= episode.side_tokens.size()) {
    throw std::out_of_range("dump_attention: episode has no side stream " + std::to_string(stage.stream));
  }
  const Tensor& side = episode.side_tokens[stage.stream];
  FuseTrace trace;
  fuse(episode.video_tokens, side, patch, &trace);

  AttentionMap map;
  map.layer = layer;
  map.frame = frame;
  map.queries = trace.queries;
  map.slots = trace.slots;
  const auto plan = plan_alignment(side.dim(0), k_frames);
  map.slot_tokens = neighborhood(frame, plan).indices;
  map.scores.assign(map.queries * map.slots, 0.0);
  if (trace.no_side_tokens) return map;
  const auto& probs = trace.attention[layer];
  const auto heads = trace.heads, m = trace.queries, g = trace.slots;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t q = 0; q < m; ++q)
      for (std::size_t s = 0; s < g; ++s)
        map.scores[q * g + s] += probs[((frame * heads + h) * m + q) * g + s] / static_cast<double>(heads);
  return map;
}

RunConfig grad_check_config() {
  RunConfig c = default_run_config();
  c.model.d = 16;
  c.model.vocab_size = 16;
  c.model.n_lm_layers = 1;
  c.model.n_lm_heads = 2;
  c.model.d_ff = 32;
  c.model.n_frames = 2;
  c.model.tokens_per_frame = 4;
  c.model.raw_video_dim = 4;
  c.model.raw_side_dim = 4;
  c.model.side_dim = 8;
  c.patch.n_layers = 1;
  c.patch.hidden_dim = 8;
  c.patch.n_heads = 2;
  c.lora.rank = 2;
  c.task.n_side = 6;
  return c;
}

GradCheckResult check_pipeline_gradients(const RunConfig& config, double denom_floor, std::size_t n_episodes) {
  const auto base = init_model(config.model);
  const auto spec = experiment_from(config);
  AdaptedModel model;
  model.base = &base;
  model.stages.push_back(make_stage(AblationMode::PaveVisual, base, spec));
  auto params = model.trainable_parameters();
  Rng rng(mix64(spec.seed ^ 0x67726164));
  for (auto& [name, t] : params) {
    const bool gate = name.ends_with("adapter.norm.gamma");
    const bool lora_b = name.ends_with(".B");
    if (!gate && !lora_b) continue;
    for (auto& v : t.mutable_data()) v = 0.5 * rng.normal();
  }
  const auto batch = collate(gen_episodes(base, spec.task, n_episodes));
  std::vector<Tensor> tensors;
  for (auto& p : params) tensors.push_back(p.second);
  return grad_check(
      [&] {
        const auto out = forward_batch(model, batch);
        return nll_loss(out.logits, out.targets.targets, out.targets.mask);
      },
      tensors, 1e-5, denom_floor);
}

}  // namespace pave
