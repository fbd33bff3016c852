// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/patch_file.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "pave/config.hpp"
#include "pave/errors.hpp"

namespace pave {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'A', 'V', 'E'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("tensor file truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string stage_config(const Stage& stage, const ToyVideoLLM& base) {
  RunConfig rc;
  std::ostringstream os;
  os << "file.kind = patch\n"
     << "file.base_fingerprint = " << hex64(base.fingerprint()) << "\n"
     << "file.stage = " << stage.name << "\n"
     << "file.stream = " << stage.stream << "\n"
     << "file.side_tokens = " << stage.side_tokens << "\n"
     << "file.has_lora = " << (stage.lora ? 1 : 0) << "\n";
  if (stage.patch) {
    rc.patch = stage.patch->config;
    os << "file.model_dim = " << rc.patch.model_dim << "\n"
       << "file.side_dim = " << rc.patch.side_dim << "\n";
  }
  if (stage.lora) rc.lora = stage.lora->spec;
  return os.str() + rc.to_text({"patch.", "lora."});
}

}  // namespace

std::string encode_tensor_file(const TensorFile& file) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.config.size()));
  out += file.config;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
    if (t.rank() > 0xFF) throw FormatError("tensor rank too large for " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put<float>(out, static_cast<float>(v));
  }
  put<std::uint32_t>(out, crc(out));
  return out;
}

TensorFile decode_tensor_file(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4 + 4) throw FormatError("tensor file truncated: only " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic: not a PAVE tensor file");
  const std::string_view body(bytes.data(), bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  Reader r(body);
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported tensor file version " + std::to_string(version) + " (expected " +
                      std::to_string(kTensorFileVersion) + ")");
  }
  if (crc(body) != stored) throw FormatError("CRC mismatch: file is corrupt or truncated");
  TensorFile file;
  const auto cfg_len = r.get<std::uint32_t>("config length");
  file.config = std::string(r.take(cfg_len, "config block"));
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("entry name length");
    std::string name(r.take(name_len, "entry name"));
    const auto rank = r.get<std::uint8_t>("entry rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("entry dims");
    const auto n = numel_of(shape);
    const auto payload = r.take(n * sizeof(float), "entry payload");
    std::vector<double> data(n);
    for (std::size_t j = 0; j < n; ++j) {
      float f;
      std::memcpy(&f, payload.data() + j * sizeof(float), sizeof(float));
      data[j] = static_cast<double>(f);
    }
    file.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("unexpected trailing bytes after the last entry");
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_tensor_file(ss.str());
}

void save_patch(const std::filesystem::path& path, const Stage& stage, const ToyVideoLLM& base) {
  if (!stage.patch && !stage.lora && !stage.interleave) throw ConfigError("save_patch: stage has no tensors");
  if (stage.interleave) throw ConfigError("save_patch: interleave stages are not patch files");
  write_tensor_file(path, {stage_config(stage, base), stage.named_parameters()});
}

Stage load_patch(const std::filesystem::path& path, const ToyVideoLLM& base) {
  const auto file = read_tensor_file(path);
  std::map<std::string, std::string> meta;
  std::string rest;
  std::istringstream lines(file.config);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("file.", 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw FormatError("malformed config line: " + line);
      meta[line.substr(0, eq)] = line.substr(eq + 3);
    } else {
      rest += line + "\n";
    }
  }
  auto field = [&meta](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("config block lacks " + key);
    return it->second;
  };
  if (field("file.kind") != "patch") throw FormatError("not a patch file (kind " + field("file.kind") + ")");
  const auto expected = hex64(base.fingerprint());
  if (field("file.base_fingerprint") != expected) {
    throw FormatError("base model fingerprint mismatch: file has " + field("file.base_fingerprint") +
                      ", target model is " + expected);
  }
  RunConfig rc;
  try {
    rc = parse_config(rest);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad config block: ") + e.what());
  }
  Stage stage;
  try {
    stage.name = field("file.stage");
    stage.stream = std::stoul(field("file.stream"));
    stage.side_tokens = std::stoul(field("file.side_tokens"));
    if (meta.count("file.model_dim")) {
      rc.patch.model_dim = std::stoul(field("file.model_dim"));
      rc.patch.side_dim = std::stoul(field("file.side_dim"));
      stage.patch = init_patch(rc.patch);
    }
    if (field("file.has_lora") == "1") stage.lora = attach_lora(base, rc.lora, 0);
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad config block: ") + e.what());
  }
  stage.base_fingerprint = base.fingerprint();

  auto params = stage.named_parameters();
  if (params.size() != file.tensors.size()) {
    throw FormatError("patch file holds " + std::to_string(file.tensors.size()) + " tensors, configuration expects " +
                      std::to_string(params.size()));
  }
  std::map<std::string, const Tensor*> stored;
  for (const auto& [name, t] : file.tensors) {
    if (!stored.emplace(name, &t).second) throw FormatError("duplicate tensor '" + name + "'");
  }
  for (auto& [name, t] : params) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("patch file lacks tensor '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                        shape_str(t.shape()));
    }
  }
  for (auto& [name, t] : params) {
    const auto src = stored.at(name)->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
  set_requires_grad(params, true);
  return stage;
}

void save_checkpoint(const std::filesystem::path& path, const ToyVideoLLM& base, const Stage& stage) {
  TensorFile file;
  file.config = "file.kind = checkpoint\n" + base.config.describe() + stage_config(stage, base);
  for (auto& [name, t] : base.all_parameters()) file.tensors.emplace_back("base." + name, t);
  for (auto& p : stage.named_parameters()) file.tensors.push_back(p);
  write_tensor_file(path, file);
}

}  // namespace pave
