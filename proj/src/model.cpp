// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/model.hpp"

#include <cmath>
#include <sstream>

#include "pave/errors.hpp"
#include "pave/rope.hpp"

namespace pave {

void ModelConfig::validate() const {
  if (d == 0 || vocab_size == 0 || n_lm_heads == 0 || d_ff == 0 || n_frames == 0 ||
      tokens_per_frame == 0 || raw_video_dim == 0 || raw_side_dim == 0 || side_dim == 0) {
    throw ConfigError("model: all widths and counts must be positive");
  }
  if (d % n_lm_heads != 0 || (d / n_lm_heads) % 2 != 0) {
    throw ConfigError("model: d must split into an even head width across n_lm_heads");
  }
  if (n_frames * tokens_per_frame >= max_seq_len) {
    throw ConfigError("model: K*M leaves no room for text within max_seq_len");
  }
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "model.d = " << d << "\nmodel.vocab = " << vocab_size << "\nmodel.layers = " << n_lm_layers
     << "\nmodel.heads = " << n_lm_heads << "\nmodel.d_ff = " << d_ff << "\nmodel.frames = " << n_frames
     << "\nmodel.tokens_per_frame = " << tokens_per_frame << "\nmodel.max_seq_len = " << max_seq_len
     << "\nmodel.raw_video_dim = " << raw_video_dim << "\nmodel.raw_side_dim = " << raw_side_dim
     << "\nmodel.side_dim = " << side_dim << "\nmodel.rope_base = " << rope_base
     << "\nmodel.seed = " << seed << "\n";
  return os.str();
}

ToyVideoLLM init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  auto dense = [&rng](std::size_t out, std::size_t in) {
    return Tensor::normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  // Encoders emit tokens of expected unit norm.
  auto encoder = [&rng](std::size_t out, std::size_t in) {
    return Tensor::normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in * out)), rng);
  };
  ToyVideoLLM m;
  m.config = config;
  m.video_encoder = encoder(config.d, config.raw_video_dim);
  m.side_encoder = encoder(config.side_dim, config.raw_side_dim);
  m.embedding = Tensor::normal({config.vocab_size, config.d}, 1.0, rng);
  for (std::size_t l = 0; l < config.n_lm_layers; ++l) {
    DecoderLayer L;
    L.attn_norm_gamma = Tensor::full({config.d}, 1.0);
    L.attn_norm_beta = Tensor::zeros({config.d});
    L.wq = dense(config.d, config.d);
    L.wk = dense(config.d, config.d);
    L.wv = dense(config.d, config.d);
    L.wo = dense(config.d, config.d);
    L.mlp_norm_gamma = Tensor::full({config.d}, 1.0);
    L.mlp_norm_beta = Tensor::zeros({config.d});
    L.w1 = dense(config.d_ff, config.d);
    L.w2 = dense(config.d, config.d_ff);
    m.layers.push_back(std::move(L));
  }
  m.final_norm_gamma = Tensor::full({config.d}, 1.0);
  m.final_norm_beta = Tensor::zeros({config.d});
  m.lm_head = dense(config.vocab_size, config.d);
  return m;
}

NamedTensors ToyVideoLLM::llm_parameters() const {
  NamedTensors out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "attn_norm.gamma", L.attn_norm_gamma);
    out.emplace_back(pre + "attn_norm.beta", L.attn_norm_beta);
    out.emplace_back(pre + "q", L.wq);
    out.emplace_back(pre + "k", L.wk);
    out.emplace_back(pre + "v", L.wv);
    out.emplace_back(pre + "o", L.wo);
    out.emplace_back(pre + "mlp_norm.gamma", L.mlp_norm_gamma);
    out.emplace_back(pre + "mlp_norm.beta", L.mlp_norm_beta);
    out.emplace_back(pre + "mlp1", L.w1);
    out.emplace_back(pre + "mlp2", L.w2);
  }
  out.emplace_back("final_norm.gamma", final_norm_gamma);
  out.emplace_back("final_norm.beta", final_norm_beta);
  out.emplace_back("lm_head", lm_head);
  return out;
}

NamedTensors ToyVideoLLM::encoder_parameters() const {
  return {{"encoder.video", video_encoder}, {"encoder.side", side_encoder}};
}

NamedTensors ToyVideoLLM::all_parameters() const {
  auto out = encoder_parameters();
  for (auto& p : llm_parameters()) out.push_back(std::move(p));
  return out;
}

const Tensor& ToyVideoLLM::projection(const std::string& target) const {
  const auto dot = target.find('.', 7);
  if (target.rfind("layers.", 0) != 0 || dot == std::string::npos) {
    throw ConfigError("unknown projection '" + target + "'");
  }
  const auto l = std::stoul(target.substr(7, dot - 7));
  const auto kind = target.substr(dot + 1);
  if (l >= layers.size()) throw ConfigError("projection layer out of range: " + target);
  const auto& L = layers[l];
  if (kind == "q") return L.wq;
  if (kind == "k") return L.wk;
  if (kind == "v") return L.wv;
  if (kind == "o") return L.wo;
  if (kind == "mlp1") return L.w1;
  if (kind == "mlp2") return L.w2;
  throw ConfigError("unknown projection kind '" + kind + "'");
}

std::uint64_t ToyVideoLLM::fingerprint() const {
  const auto text = config.describe();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ checksum(all_parameters()));
}

LoraAdapter attach_lora(const ToyVideoLLM& model, const LoraSpec& spec, std::uint64_t seed) {
  LoraAdapter adapter;
  adapter.spec = spec;
  Rng seeds(seed);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (const auto& kind : spec.targets) {
      const std::string name = "layers." + std::to_string(l) + "." + kind;
      adapter.layers.emplace(name, lora_init(model.projection(name), spec.rank, spec.alpha, seeds.next_u64()));
    }
  }
  return adapter;
}

Tensor encode_video(const ToyVideoLLM& model, const Tensor& raw) {
  const auto& c = model.config;
  if (raw.rank() < 3 || raw.shape().back() != c.raw_video_dim) {
    throw ShapeError("encode_video: expected [.., K, M, " + std::to_string(c.raw_video_dim) + "], got " +
                     shape_str(raw.shape()));
  }
  const auto r = raw.rank();
  if (raw.dim(r - 3) != c.n_frames || raw.dim(r - 2) != c.tokens_per_frame) {
    throw ShapeError("encode_video: frame count mismatch: got " + shape_str(raw.shape()) + ", model wants K=" +
                     std::to_string(c.n_frames) + ", M=" + std::to_string(c.tokens_per_frame));
  }
  return linear(raw, model.video_encoder);
}

Tensor encode_side(const ToyVideoLLM& model, const Tensor& raw) {
  if (raw.rank() < 2 || raw.shape().back() != model.config.raw_side_dim) {
    throw ShapeError("encode_side: expected [.., N, " + std::to_string(model.config.raw_side_dim) +
                     "], got " + shape_str(raw.shape()));
  }
  return linear(raw, model.side_encoder);
}

Tensor embed_tokens(const ToyVideoLLM& model, std::span<const int> ids) {
  std::vector<std::ptrdiff_t> rows(ids.begin(), ids.end());
  for (auto r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= model.config.vocab_size) {
      throw std::invalid_argument("embed_tokens: id " + std::to_string(r) + " outside vocabulary");
    }
  }
  return gather_rows(model.embedding, rows);
}

namespace {

Tensor project(const Tensor& x, const Tensor& weight, const std::string& name,
               std::span<const LoraAdapter* const> loras) {
  Tensor y = linear(x, weight);
  for (const auto* adapter : loras) {
    if (adapter == nullptr) continue;
    if (const auto* layer = adapter->find(name)) y = add(y, lora_delta(*layer, x));
  }
  return y;
}

}  // namespace

Tensor forward_logits(const ToyVideoLLM& model, const Tensor& inputs,
                      std::span<const LoraAdapter* const> loras) {
  const auto& c = model.config;
  const bool batched = inputs.rank() == 3;
  if (!(batched || inputs.rank() == 2) || inputs.shape().back() != c.d) {
    throw ShapeError("forward_logits: expected [S, d] or [B, S, d] with d=" + std::to_string(c.d) + ", got " +
                     shape_str(inputs.shape()));
  }
  const auto batch = batched ? inputs.dim(0) : 1;
  const auto seq = inputs.dim(batched ? 1 : 0);
  if (seq > c.max_seq_len) {
    throw ShapeError("forward_logits: sequence of " + std::to_string(seq) + " exceeds max_seq_len " +
                     std::to_string(c.max_seq_len));
  }
  const auto rows = batch * seq;
  std::vector<TokenPosition> pos;
  pos.reserve(rows);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s) pos.push_back({static_cast<double>(s), {}, {}});
  const auto rope = rope_table(pos, RopeSpec::temporal(c.d / c.n_lm_heads, c.rope_base));

  AttentionOptions opt;
  opt.heads = c.n_lm_heads;
  opt.causal = true;

  Tensor h = reshape(inputs, {rows, c.d});
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& L = model.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    const Tensor a = layer_norm(h, L.attn_norm_gamma, L.attn_norm_beta);
    const Tensor q = rotate_pairs(project(a, L.wq, pre + "q", loras), rope, c.n_lm_heads);
    const Tensor k = rotate_pairs(project(a, L.wk, pre + "k", loras), rope, c.n_lm_heads);
    const Tensor v = project(a, L.wv, pre + "v", loras);
    const Tensor att = attention(reshape(q, {batch, seq, c.d}), reshape(k, {batch, seq, c.d}),
                                 reshape(v, {batch, seq, c.d}), opt);
    h = add(h, project(reshape(att, {rows, c.d}), L.wo, pre + "o", loras));
    const Tensor m = layer_norm(h, L.mlp_norm_gamma, L.mlp_norm_beta);
    h = add(h, project(gelu(project(m, L.w1, pre + "mlp1", loras)), L.w2, pre + "mlp2", loras));
  }
  const Tensor logits = linear(layer_norm(h, model.final_norm_gamma, model.final_norm_beta), model.lm_head);
  return batched ? reshape(logits, {batch, seq, c.vocab_size}) : logits;
}

std::vector<int> greedy_decode(const ToyVideoLLM& model, const Tensor& visual,
                               std::span<const int> query_ids, std::size_t max_len,
                               std::span<const LoraAdapter* const> loras) {
  const auto d = model.config.d;
  const auto v = model.config.vocab_size;
  const Tensor prefix = reshape(visual.detach(), {visual.numel() / d, d});
  std::vector<int> out;
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<int> text(query_ids.begin(), query_ids.end());
    text.insert(text.end(), out.begin(), out.end());
    const Tensor parts[] = {prefix, embed_tokens(model, text)};
    const Tensor logits = forward_logits(model, concat(parts, 0), loras);
    const auto last = logits.data().subspan((logits.dim(0) - 1) * v, v);
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (last[j] > last[best]) best = j;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

EpisodeBatch collate(std::span<const Episode> episodes) {
  if (episodes.empty()) throw ShapeError("collate: no episodes");
  const auto& first = episodes.front();
  EpisodeBatch batch;
  batch.size = episodes.size();
  batch.query_len = first.query_ids.size();
  batch.answer_len = first.answer_ids.size();
  std::vector<Tensor> videos;
  std::vector<std::vector<Tensor>> streams(first.side_tokens.size());
  for (const auto& e : episodes) {
    if (e.video_tokens.shape() != first.video_tokens.shape() || e.side_tokens.size() != streams.size() ||
        e.query_ids.size() != batch.query_len || e.answer_ids.size() != batch.answer_len) {
      throw ShapeError("collate: episodes differ in shape");
    }
    Shape vs = e.video_tokens.shape();
    vs.insert(vs.begin(), 1);
    videos.push_back(reshape(e.video_tokens, vs));
    for (std::size_t s = 0; s < streams.size(); ++s) {
      if (e.side_tokens[s].shape() != first.side_tokens[s].shape()) {
        throw ShapeError("collate: side stream " + std::to_string(s) + " differs in shape");
      }
      Shape ss = e.side_tokens[s].shape();
      ss.insert(ss.begin(), 1);
      streams[s].push_back(reshape(e.side_tokens[s], ss));
    }
    batch.query_ids.insert(batch.query_ids.end(), e.query_ids.begin(), e.query_ids.end());
    batch.answer_ids.insert(batch.answer_ids.end(), e.answer_ids.begin(), e.answer_ids.end());
  }
  batch.video_tokens = concat(videos, 0);
  for (auto& s : streams) batch.side_tokens.push_back(concat(s, 0));
  return batch;
}

Tensor assemble_sequence(const ToyVideoLLM& model, const Tensor& visual, const Tensor& extra,
                         const EpisodeBatch& batch) {
  const auto d = model.config.d;
  const auto b = batch.size;
  if (visual.rank() != 4 || visual.dim(0) != b || visual.dim(3) != d) {
    throw ShapeError("assemble_sequence: visual must be [B, K, M, d], got " + shape_str(visual.shape()));
  }
  if (batch.answer_len == 0) throw ShapeError("assemble_sequence: episodes need at least one answer token");
  const auto n_visual = visual.dim(1) * visual.dim(2);
  const auto n_text = batch.query_len + batch.answer_len - 1;
  std::vector<int> text;
  text.reserve(b * n_text);
  for (std::size_t i = 0; i < b; ++i) {
    text.insert(text.end(), batch.query_ids.begin() + static_cast<std::ptrdiff_t>(i * batch.query_len),
                batch.query_ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * batch.query_len));
    text.insert(text.end(), batch.answer_ids.begin() + static_cast<std::ptrdiff_t>(i * batch.answer_len),
                batch.answer_ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * batch.answer_len - 1));
  }
  std::vector<Tensor> parts{reshape(visual, {b, n_visual, d})};
  if (extra.defined()) {
    if (extra.rank() != 3 || extra.dim(0) != b || extra.dim(2) != d) {
      throw ShapeError("assemble_sequence: extra tokens must be [B, N, d]");
    }
    parts.push_back(extra);
  }
  parts.push_back(reshape(embed_tokens(model, text), {b, n_text, d}));
  return concat(parts, 1);
}

SequenceTargets sequence_targets(const EpisodeBatch& batch, std::size_t prefix_len) {
  SequenceTargets t;
  t.seq_len = prefix_len + batch.query_len + batch.answer_len - 1;
  t.targets.assign(batch.size * t.seq_len, 0);
  t.mask.assign(batch.size * t.seq_len, 0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t i = 0; i < batch.answer_len; ++i) {
      const auto pos = b * t.seq_len + prefix_len + batch.query_len - 1 + i;
      t.targets[pos] = batch.answer_ids[b * batch.answer_len + i];
      t.mask[pos] = 1;
    }
  }
  return t;
}

}  // namespace pave
