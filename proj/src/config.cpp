// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pave/errors.hpp"

namespace pave {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_uint(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PAVE_SIZE(KEY, FIELD)                                                                           \
  Entry {                                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_uint<std::size_t>(KEY, v); },         \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                      \
  }
#define PAVE_U64(KEY, FIELD)                                                                            \
  Entry {                                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_uint<std::uint64_t>(KEY, v); },       \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                      \
  }
#define PAVE_REAL(KEY, FIELD)                                                                           \
  Entry {                                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); },                    \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                                          \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      PAVE_SIZE("model.d", model.d),
      PAVE_SIZE("model.vocab_size", model.vocab_size),
      PAVE_SIZE("model.n_lm_layers", model.n_lm_layers),
      PAVE_SIZE("model.n_lm_heads", model.n_lm_heads),
      PAVE_SIZE("model.d_ff", model.d_ff),
      PAVE_SIZE("model.n_frames", model.n_frames),
      PAVE_SIZE("model.tokens_per_frame", model.tokens_per_frame),
      PAVE_SIZE("model.max_seq_len", model.max_seq_len),
      PAVE_SIZE("model.raw_video_dim", model.raw_video_dim),
      PAVE_SIZE("model.raw_side_dim", model.raw_side_dim),
      PAVE_SIZE("model.side_dim", model.side_dim),
      PAVE_REAL("model.rope_base", model.rope_base),
      PAVE_U64("model.seed", model.seed),

      PAVE_SIZE("patch.n_layers", patch.n_layers),
      PAVE_SIZE("patch.hidden_dim", patch.hidden_dim),
      PAVE_SIZE("patch.n_heads", patch.n_heads),
      PAVE_SIZE("patch.mlp_ratio", patch.mlp_ratio),
      Entry{"patch.rope_mode",
            [](RunConfig& c, const std::string& v) {
              if (v == "temporal") {
                c.patch.rope.mode = RopeMode::Temporal1D;
              } else if (v == "spatiotemporal") {
                c.patch.rope.mode = RopeMode::Spatiotemporal3D;
              } else {
                throw ConfigError("patch.rope_mode: expected temporal or spatiotemporal, got '" + v + "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.patch.rope.mode == RopeMode::Temporal1D ? "temporal" : "spatiotemporal");
            }},
      PAVE_REAL("patch.rope_base", patch.rope.base),
      Entry{"patch.side_layout",
            [](RunConfig& c, const std::string& v) {
              if (v == "temporal") {
                c.patch.side_layout = SideLayout::Temporal;
              } else if (v == "spatial") {
                c.patch.side_layout = SideLayout::Spatial;
              } else {
                throw ConfigError("patch.side_layout: expected temporal or spatial, got '" + v + "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.patch.side_layout == SideLayout::Temporal ? "temporal" : "spatial");
            }},
      PAVE_SIZE("patch.side_grid_h", patch.side_grid_h),
      PAVE_SIZE("patch.side_grid_w", patch.side_grid_w),
      Entry{"patch.query_mode",
            [](RunConfig& c, const std::string& v) {
              if (v == "visual") {
                c.patch.query_mode = QueryMode::Visual;
              } else if (v == "learnable") {
                c.patch.query_mode = QueryMode::Learnable;
              } else {
                throw ConfigError("patch.query_mode: expected visual or learnable, got '" + v + "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.patch.query_mode == QueryMode::Visual ? "visual" : "learnable");
            }},
      PAVE_SIZE("patch.n_query_tokens", patch.n_query_tokens),
      PAVE_U64("patch.seed", patch.seed),

      PAVE_SIZE("lora.rank", lora.rank),
      PAVE_REAL("lora.alpha", lora.alpha),
      Entry{"lora.targets",
            [](RunConfig& c, const std::string& v) {
              std::vector<std::string> out;
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (item != "q" && item != "k" && item != "v" && item != "o" && item != "mlp1" && item != "mlp2") {
                  throw ConfigError("lora.targets: unknown target '" + item + "'");
                }
                out.push_back(item);
              }
              if (out.empty()) throw ConfigError("lora.targets: empty list");
              c.lora.targets = out;
            },
            [](const RunConfig& c) {
              std::string out;
              for (const auto& t : c.lora.targets) out += (out.empty() ? "" : ",") + t;
              return out;
            }},

      PAVE_REAL("train.lr", train.lr),
      PAVE_REAL("train.beta1", train.beta1),
      PAVE_REAL("train.beta2", train.beta2),
      PAVE_REAL("train.adam_eps", train.adam_eps),
      PAVE_REAL("train.weight_decay", train.weight_decay),
      PAVE_REAL("train.warmup_fraction", train.warmup_fraction),
      PAVE_SIZE("train.batch_size", train.batch_size),
      PAVE_SIZE("train.epochs", train.epochs),
      PAVE_SIZE("train.train_episodes", train.train_episodes),
      PAVE_SIZE("train.eval_episodes", train.eval_episodes),
      PAVE_U64("train.seed", train.seed),

      Entry{"task.kind", [](RunConfig& c, const std::string& v) { c.task.kind = parse_task_kind(v); },
            [](const RunConfig& c) { return to_string(c.task.kind); }},
      PAVE_U64("task.seed", task.seed),
      PAVE_U64("task.world_seed", task.world_seed),
      PAVE_SIZE("task.n_classes", task.n_classes),
      PAVE_SIZE("task.n_side", task.n_side),
      PAVE_SIZE("task.dense_rate", task.dense_rate),
      PAVE_REAL("task.noise", task.noise),
      PAVE_REAL("task.visual_strength", task.visual_strength),
  };
  return table;
}

#undef PAVE_SIZE
#undef PAVE_U64
#undef PAVE_REAL

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.patch.hidden_dim = 32;
  c.patch.n_heads = 4;
  c.patch.n_layers = 2;
  c.patch.mlp_ratio = 2;
  c.lora.rank = 8;
  c.lora.alpha = 16.0;
  c.train.lr = 3e-3;
  c.train.batch_size = 8;
  c.train.train_episodes = 2560;
  c.train.eval_episodes = 512;
  return c;
}

std::string RunConfig::to_text() const { return to_text({""}); }

std::string RunConfig::to_text(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& e : entries()) {
    for (const auto& p : prefixes) {
      if (e.key.rfind(p, 0) == 0) {
        out += e.key + " = " + e.get(*this) + "\n";
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace pave
