// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/tasks.hpp"

#include <algorithm>
#include <stdexcept>

#include "pave/alignment.hpp"
#include "pave/errors.hpp"

namespace pave {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::SideCopy: return "sidecopy";
    case TaskKind::DenseEvent: return "denseevent";
    case TaskKind::ConflictAV: return "conflictav";
    case TaskKind::MultiView: return "multiview";
    case TaskKind::Joint: return "joint";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  for (auto k : {TaskKind::SideCopy, TaskKind::DenseEvent, TaskKind::ConflictAV, TaskKind::MultiView,
                 TaskKind::Joint}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown task kind '" + name +
                    "' (expected sidecopy, denseevent, conflictav, multiview or joint)");
}

std::size_t stream_count(TaskKind kind) { return kind == TaskKind::Joint ? 2 : 1; }

std::size_t stream_length(const TaskSpec& spec, std::size_t n_frames, std::size_t stream) {
  if (stream >= stream_count(spec.kind)) throw std::out_of_range("stream index out of range");
  const bool dense = spec.kind == TaskKind::DenseEvent || (spec.kind == TaskKind::Joint && stream == 0);
  return dense ? n_frames * spec.dense_rate : spec.n_side;
}

std::size_t answer_length(TaskKind kind) { return kind == TaskKind::MultiView ? 2 : 1; }

void validate_task(const TaskSpec& spec, const ModelConfig& model) {
  if (spec.n_classes < 2) throw ConfigError("task: n_classes must be at least 2");
  if (spec.n_classes + vocab::kCount > model.vocab_size) {
    throw ConfigError("task: vocabulary of " + std::to_string(model.vocab_size) + " cannot hold " +
                      std::to_string(spec.n_classes) + " answers plus markers");
  }
  if (spec.kind == TaskKind::DenseEvent || spec.kind == TaskKind::Joint) {
    if (spec.dense_rate < 2) throw ConfigError("task: dense_rate must be at least 2");
  }
  if (spec.kind != TaskKind::DenseEvent && spec.n_side == 0) {
    throw ConfigError("task: n_side must be positive");
  }
  if (spec.kind != TaskKind::DenseEvent && spec.n_side < model.n_frames) {
    throw ConfigError("task: n_side must cover every frame (n_side >= K)");
  }
  if (!(spec.noise >= 0.0)) throw ConfigError("task: noise must be non-negative");
}

namespace {

struct World {
  std::vector<std::vector<double>> side_classes;    // raw_side_dim each
  std::vector<std::vector<double>> visual_classes;  // raw_video_dim each
  std::vector<double> silence;
};

World make_world(const TaskSpec& spec, const ModelConfig& mc) {
  Rng rng(mix64(spec.world_seed ^ 0x70617665ULL));
  auto draw = [&rng](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  World w;
  w.silence = draw(mc.raw_side_dim);
  for (std::size_t c = 0; c < spec.n_classes; ++c) w.side_classes.push_back(draw(mc.raw_side_dim));
  for (std::size_t c = 0; c < spec.n_classes; ++c) w.visual_classes.push_back(draw(mc.raw_video_dim));
  return w;
}

void fill_background(std::vector<double>& raw, std::size_t rows, std::size_t width,
                     const std::vector<double>& proto, double noise, Rng& rng) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) raw[r * width + j] = proto[j] + noise * rng.normal();
}

void plant(std::vector<double>& raw, std::size_t row, std::size_t width, const std::vector<double>& proto,
           double noise, Rng& rng) {
  for (std::size_t j = 0; j < width; ++j) raw[row * width + j] = proto[j] + noise * rng.normal();
}

int marker(const TaskSpec& spec, int offset) { return static_cast<int>(spec.n_classes) + offset; }

// Audio-like stream: silence everywhere except one token near a random frame.
struct Planted {
  std::vector<double> raw;
  int frame;
  std::ptrdiff_t index;
};

Planted audio_stream(const World& w, const TaskSpec& spec, std::size_t n, std::size_t width,
                     std::size_t n_frames, int cls, Rng& rng) {
  Planted p{std::vector<double>(n * width), 0, 0};
  fill_background(p.raw, n, width, w.silence, spec.noise, rng);
  const auto plan = plan_alignment(n, n_frames);
  p.frame = static_cast<int>(rng.below(n_frames));
  const auto [lo, hi] = plan.boundaries[static_cast<std::size_t>(p.frame)];
  p.index = static_cast<std::ptrdiff_t>(lo + rng.below(hi - lo));
  plant(p.raw, static_cast<std::size_t>(p.index), width, w.side_classes[static_cast<std::size_t>(cls)],
        spec.noise, rng);
  return p;
}

// Dense stream: rate tokens per key frame. Key-frame slots echo the key
// frame's mean raw feature; the event sits strictly between key frames.
Planted dense_stream(const World& w, const TaskSpec& spec, const std::vector<double>& video_raw,
                     const ModelConfig& mc, int cls, Rng& rng) {
  const auto k_frames = mc.n_frames, m = mc.tokens_per_frame, rate = spec.dense_rate;
  const auto n = k_frames * rate, width = mc.raw_side_dim;
  Planted p{std::vector<double>(n * width), 0, 0};
  fill_background(p.raw, n, width, w.silence, spec.noise, rng);
  const auto shared = std::min(width, mc.raw_video_dim);
  for (std::size_t k = 0; k < k_frames; ++k) {
    for (std::size_t j = 0; j < shared; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < m; ++t) acc += video_raw[(k * m + t) * mc.raw_video_dim + j];
      p.raw[k * rate * width + j] = acc / static_cast<double>(m);
    }
  }
  p.frame = static_cast<int>(rng.below(k_frames));
  const auto offset = 1 + rng.below(rate - 1);
  p.index = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(p.frame) * rate + offset);
  plant(p.raw, static_cast<std::size_t>(p.index), width, w.side_classes[static_cast<std::size_t>(cls)],
        spec.noise, rng);
  return p;
}

Tensor to_side(const ToyVideoLLM& model, std::vector<double> raw, std::size_t n) {
  return encode_side(model, Tensor::from_data({n, model.config.raw_side_dim}, std::move(raw)));
}

Episode make_episode(const ToyVideoLLM& model, const World& w, const TaskSpec& spec, std::size_t index) {
  const auto& mc = model.config;
  Rng rng = Rng(spec.seed).fork(index);
  const auto k_frames = mc.n_frames, m = mc.tokens_per_frame, rv = mc.raw_video_dim;
  const auto n_cls = spec.n_classes;
  Episode e;
  std::vector<double> video(k_frames * m * rv);
  for (auto& x : video) x = rng.normal();

  auto visual_cue = [&](int cls) {
    const auto frame = rng.below(k_frames);
    const double a = spec.visual_strength;
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t j = 0; j < rv; ++j) {
        auto& x = video[(frame * m + t) * rv + j];
        x = (1.0 - a) * x + a * (w.visual_classes[static_cast<std::size_t>(cls)][j] + spec.noise * rng.normal());
      }
    e.visual_cue = cls;
  };

  const int cls = static_cast<int>(rng.below(n_cls));
  switch (spec.kind) {
    case TaskKind::SideCopy: {
      auto p = audio_stream(w, spec, spec.n_side, mc.raw_side_dim, k_frames, cls, rng);
      e.side_tokens.push_back(to_side(model, std::move(p.raw), spec.n_side));
      e.planted_frame = p.frame;
      e.planted_side_index.push_back(p.index);
      e.query_ids = {marker(spec, vocab::kQuerySide), marker(spec, vocab::kSep)};
      e.answer_ids = {cls};
      break;
    }
    case TaskKind::DenseEvent: {
      auto p = dense_stream(w, spec, video, mc, cls, rng);
      e.side_tokens.push_back(to_side(model, std::move(p.raw), k_frames * spec.dense_rate));
      e.planted_frame = p.frame;
      e.planted_side_index.push_back(p.index);
      e.query_ids = {marker(spec, vocab::kQueryDense), marker(spec, vocab::kSep)};
      e.answer_ids = {cls};
      break;
    }
    case TaskKind::ConflictAV: {
      const int other = static_cast<int>((static_cast<std::size_t>(cls) + 1 + rng.below(n_cls - 1)) % n_cls);
      visual_cue(other);
      auto p = audio_stream(w, spec, spec.n_side, mc.raw_side_dim, k_frames, cls, rng);
      e.side_tokens.push_back(to_side(model, std::move(p.raw), spec.n_side));
      e.planted_frame = p.frame;
      e.planted_side_index.push_back(p.index);
      e.query_ids = {marker(spec, vocab::kQueryConflict), marker(spec, vocab::kSep)};
      e.answer_ids = {cls};
      break;
    }
    case TaskKind::MultiView: {
      const int cv = static_cast<int>(rng.below(n_cls));
      visual_cue(cv);
      auto p = audio_stream(w, spec, spec.n_side, mc.raw_side_dim, k_frames, cls, rng);
      e.side_tokens.push_back(to_side(model, std::move(p.raw), spec.n_side));
      e.planted_frame = p.frame;
      e.planted_side_index.push_back(p.index);
      e.query_ids = {marker(spec, vocab::kQueryView), marker(spec, vocab::kSep)};
      e.answer_ids = {cv, cls};
      break;
    }
    case TaskKind::Joint: {
      const int cls_audio = static_cast<int>(rng.below(n_cls));
      auto dense = dense_stream(w, spec, video, mc, cls, rng);
      auto audio = audio_stream(w, spec, spec.n_side, mc.raw_side_dim, k_frames, cls_audio, rng);
      e.side_tokens.push_back(to_side(model, std::move(dense.raw), k_frames * spec.dense_rate));
      e.side_tokens.push_back(to_side(model, std::move(audio.raw), spec.n_side));
      e.planted_side_index = {dense.index, audio.index};
      const bool ask_audio = rng.below(2) == 1;
      e.planted_frame = ask_audio ? audio.frame : dense.frame;
      e.query_ids = {marker(spec, ask_audio ? vocab::kQuerySide : vocab::kQueryDense), marker(spec, vocab::kSep)};
      e.answer_ids = {ask_audio ? cls_audio : cls};
      break;
    }
  }
  e.video_tokens = encode_video(model, Tensor::from_data({k_frames, m, rv}, std::move(video)));
  return e;
}

}  // namespace

std::vector<Episode> gen_episodes(const ToyVideoLLM& model, const TaskSpec& spec, std::size_t n,
                                  std::size_t first_index) {
  if (n == 0) throw std::invalid_argument("gen_episodes: n_episodes must be positive");
  validate_task(spec, model.config);
  const World w = make_world(spec, model.config);
  std::vector<Episode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_episode(model, w, spec, first_index + i));
  return out;
}

std::vector<EpisodeBatch> gen_task(const ToyVideoLLM& model, const TaskSpec& spec, std::size_t n,
                                   std::size_t batch_size, std::size_t first_index) {
  if (batch_size == 0) throw std::invalid_argument("gen_task: batch_size must be positive");
  const auto episodes = gen_episodes(model, spec, n, first_index);
  std::vector<EpisodeBatch> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const auto len = std::min(batch_size, n - i);
    out.push_back(collate(std::span<const Episode>(episodes).subspan(i, len)));
  }
  return out;
}

Episode without_side(const Episode& episode) {
  Episode e = episode;
  for (auto& s : e.side_tokens) s = Tensor::zeros(s.shape());
  return e;
}

PatchConfig patch_config_for(const ModelConfig& model, const TaskSpec& spec, std::size_t stream,
                             PatchConfig base) {
  (void)stream_length(spec, model.n_frames, stream);
  base.model_dim = model.d;
  base.side_dim = model.side_dim;
  base.side_layout = SideLayout::Temporal;
  if (base.query_mode == QueryMode::Learnable) base.n_query_tokens = model.n_frames * model.tokens_per_frame;
  return base;
}

}  // namespace pave
