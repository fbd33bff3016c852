// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "pave/errors.hpp"

namespace pave {

NamedTensors Stage::named_parameters() const {
  NamedTensors out;
  if (patch) {
    for (auto& p : patch->named_parameters()) out.emplace_back("patch." + p.first, p.second);
  }
  if (interleave) {
    out.emplace_back("interleave.weight", interleave->weight);
    out.emplace_back("interleave.bias", interleave->bias);
  }
  if (lora) {
    for (auto& p : lora->named_parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Stage::parameter_count() const { return total_numel(named_parameters()); }

NamedTensors AdaptedModel::trainable_parameters() const {
  NamedTensors out;
  for (const auto& s : stages) {
    if (!s.trainable) continue;
    for (auto& p : s.named_parameters()) out.emplace_back(s.name + "." + p.first, p.second);
  }
  return out;
}

std::size_t AdaptedModel::trainable_count() const { return total_numel(trainable_parameters()); }

ForwardOutput forward_batch(const AdaptedModel& model, const EpisodeBatch& batch, std::vector<FuseTrace>* traces) {
  const auto& base = *model.base;
  Tensor visual = batch.video_tokens;
  std::vector<Tensor> extra;
  std::vector<const LoraAdapter*> loras;
  for (const auto& s : model.stages) {
    if (!s.active) continue;
    if ((s.patch || s.interleave) && s.stream >= batch.side_tokens.size()) {
      throw ShapeError("stage '" + s.name + "' reads side stream " + std::to_string(s.stream) +
                       " but episodes carry " + std::to_string(batch.side_tokens.size()));
    }
    if (s.patch) {
      FuseTrace trace;
      visual = add(visual, fuse(batch.video_tokens, batch.side_tokens[s.stream], *s.patch,
                                traces ? &trace : nullptr));
      if (traces) traces->push_back(std::move(trace));
    }
    if (s.interleave) {
      extra.push_back(linear(batch.side_tokens[s.stream], s.interleave->weight, s.interleave->bias));
    }
    if (s.lora) loras.push_back(&*s.lora);
  }
  Tensor extra_tokens;
  std::size_t n_extra = 0;
  if (!extra.empty()) {
    extra_tokens = extra.size() == 1 ? extra.front() : concat(extra, 1);
    n_extra = extra_tokens.dim(1);
  }
  const auto prefix = base.config.n_frames * base.config.tokens_per_frame + n_extra;
  ForwardOutput out;
  const Tensor seq = assemble_sequence(base, visual, extra_tokens, batch);
  out.llm_tokens = seq.dim(1);
  out.logits = forward_logits(base, seq, loras);
  out.targets = sequence_targets(batch, prefix);
  return out;
}

std::size_t TrainSpec::warmup_steps() const {
  return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps())));
}

void TrainSpec::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("train: warmup_fraction must be in [0, 1]");
  if (batch_size == 0 || epochs == 0 || train_episodes == 0 || eval_episodes == 0) {
    throw ConfigError("train: batch_size, epochs, train_episodes and eval_episodes must be positive");
  }
}

double learning_rate(const TrainSpec& spec, std::size_t step) {
  const auto total = spec.total_steps();
  const auto warm = spec.warmup_steps();
  if (step < warm) return spec.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total <= warm) return spec.lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return std::max(0.0, spec.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0))));
}

AdamW::AdamW(NamedTensors params, const TrainSpec& spec)
    : params_(std::move(params)),
      beta1_(spec.beta1),
      beta2_(spec.beta2),
      eps_(spec.adam_eps),
      weight_decay_(spec.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.second.numel(), 0.0);
    v_.emplace_back(p.second.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * weight_decay_ * w[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
    p.zero_grad();
  }
}

std::string MetricRecord::to_line() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "event=%s step=%zu loss=%.6f acc=%.6f", event.c_str(), step, loss, acc);
  return buf;
}

namespace {

struct BatchScore {
  std::size_t correct = 0;
  std::size_t visual_hits = 0;
};

BatchScore score(const ForwardOutput& out, const EpisodeBatch& batch, std::span<const Episode> episodes) {
  const auto v = out.logits.dim(2);
  const auto seq = out.targets.seq_len;
  const auto logits = out.logits.data();
  BatchScore s;
  for (std::size_t b = 0; b < batch.size; ++b) {
    bool all = true;
    int first_pred = -1;
    for (std::size_t i = 0; i < batch.answer_len; ++i) {
      const auto pos = b * seq + seq - batch.answer_len + i;
      const auto row = logits.subspan(pos * v, v);
      std::size_t best = 0;
      for (std::size_t j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      if (i == 0) first_pred = static_cast<int>(best);
      all = all && static_cast<int>(best) == out.targets.targets[pos];
    }
    s.correct += all ? 1 : 0;
    if (!episodes.empty() && episodes[b].visual_cue >= 0 && first_pred == episodes[b].visual_cue) ++s.visual_hits;
  }
  return s;
}

}  // namespace

EvalResult evaluate(const AdaptedModel& model, std::span<const Episode> episodes, std::size_t batch_size) {
  if (episodes.empty()) throw std::invalid_argument("evaluate: no episodes");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t correct = 0, visual = 0;
  for (std::size_t i = 0; i < episodes.size(); i += batch_size) {
    const auto part = episodes.subspan(i, std::min(batch_size, episodes.size() - i));
    const auto batch = collate(part);
    const auto out = forward_batch(model, batch);
    loss_sum += nll_loss(out.logits, out.targets.targets, out.targets.mask).item() * static_cast<double>(part.size());
    const auto s = score(out, batch, part);
    correct += s.correct;
    visual += s.visual_hits;
  }
  const auto n = static_cast<double>(episodes.size());
  r.episodes = episodes.size();
  r.loss = loss_sum / n;
  r.accuracy = static_cast<double>(correct) / n;
  r.visual_prior_rate = static_cast<double>(visual) / n;
  return r;
}

std::vector<Episode> eval_episodes(const ToyVideoLLM& base, const TaskSpec& task, const TrainSpec& spec) {
  return gen_episodes(base, task, spec.eval_episodes, std::size_t{1} << 40);
}

namespace {

std::uint64_t frozen_checksum(const AdaptedModel& model) {
  NamedTensors frozen;
  for (const auto& s : model.stages) {
    if (s.trainable) continue;
    for (auto& p : s.named_parameters()) frozen.emplace_back(s.name + "." + p.first, p.second);
  }
  return checksum(frozen);
}

}  // namespace

TrainResult train(AdaptedModel& model, const TaskSpec& task, const TrainSpec& spec) {
  spec.validate();
  if (model.base == nullptr) throw std::invalid_argument("train: adapted model has no base");
  const auto& base = *model.base;
  TrainResult result;
  result.base_checksum_before = checksum(base.all_parameters());
  result.frozen_checksum_before = frozen_checksum(model);

  auto params = model.trainable_parameters();
  if (params.empty()) throw ConfigError("train: no trainable stage");
  set_requires_grad(params, true);
  for (auto& s : model.stages) {
    if (s.trainable) continue;
    auto frozen = s.named_parameters();
    set_requires_grad(frozen, false);
  }
  AdamW opt(params, spec);
  for (auto& p : params) p.second.zero_grad();

  const auto held_out = eval_episodes(base, task, spec);
  const auto per_epoch = spec.steps_per_epoch();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    for (std::size_t i = 0; i < per_epoch; ++i, ++step) {
      const auto first = i * spec.batch_size;
      const auto n = std::min(spec.batch_size, spec.train_episodes - first);
      const auto episodes = gen_episodes(base, task, n, first);
      const auto batch = collate(episodes);
      const auto out = forward_batch(model, batch);
      const Tensor loss = nll_loss(out.logits, out.targets.targets, out.targets.mask);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + "): loss is " + std::to_string(lv));
      }
      loss.backward();
      opt.step(learning_rate(spec, step));
      const auto s = score(out, batch, {});
      result.history.push_back(
          {"train_step", step, lv, static_cast<double>(s.correct) / static_cast<double>(batch.size)});
    }
    result.final_eval = evaluate(model, held_out, spec.batch_size);
    result.history.push_back({"eval", step, result.final_eval.loss, result.final_eval.accuracy});
  }
  result.base_checksum_after = checksum(base.all_parameters());
  result.frozen_checksum_after = frozen_checksum(model);
  return result;
}

Stage make_pave_stage(const ToyVideoLLM& base, const TaskSpec& task, std::size_t stream, PatchConfig patch,
                      const LoraSpec& lora, std::uint64_t seed, std::string name) {
  Stage s;
  s.name = std::move(name);
  s.stream = stream;
  s.side_tokens = stream_length(task, base.config.n_frames, stream);
  s.base_fingerprint = base.fingerprint();
  patch.seed = seed;
  s.patch = init_patch(patch_config_for(base.config, task, stream, patch));
  s.lora = attach_lora(base, lora, mix64(seed + 1));
  auto params = s.named_parameters();
  set_requires_grad(params, true);
  return s;
}

}  // namespace pave
