#include "fidn/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace fidn {

namespace {
constexpr const char* kConfigName = "meta/net_config";
constexpr const char* kStepName = "opt/step";
}  // namespace

// [in_c, in_h, in_w, fc_width, T, C, fusion, n_layers, (channels, pool)...]
Tensor<float> encode_net_config(const NetConfig& c) {
  std::vector<float> v = {static_cast<float>(c.input_channels), static_cast<float>(c.input_height),
                          static_cast<float>(c.input_width),    static_cast<float>(c.fc_width),
                          static_cast<float>(c.num_attributes), static_cast<float>(c.num_classes),
                          c.fusion_enabled ? 1.0f : 0.0f,       static_cast<float>(c.trunk.size())};
  for (const auto& l : c.trunk) {
    v.push_back(static_cast<float>(l.channels));
    v.push_back(l.pool_after ? 1.0f : 0.0f);
  }
  const std::size_t n = v.size();
  return Tensor<float>({n}, std::move(v));
}

NetConfig decode_net_config(const Tensor<float>& e) {
  auto get = [&](std::size_t i) {
    if (i >= e.size()) throw FormatError("checkpoint network config is truncated");
    const float f = e[i];
    if (!(f >= 0.0f) || f != std::floor(f) || f > 1e7f) throw FormatError("checkpoint network config is corrupt");
    return static_cast<std::size_t>(f);
  };
  NetConfig c;
  c.input_channels = get(0);
  c.input_height = get(1);
  c.input_width = get(2);
  c.fc_width = get(3);
  c.num_attributes = get(4);
  c.num_classes = get(5);
  c.fusion_enabled = get(6) != 0;
  const std::size_t layers = get(7);
  if (e.size() != 8 + 2 * layers) throw FormatError("checkpoint network config has wrong length");
  c.trunk.clear();
  for (std::size_t i = 0; i < layers; ++i) c.trunk.push_back({get(8 + 2 * i), get(9 + 2 * i) != 0});
  c.validate();
  return c;
}

void write_checkpoint(std::ostream& out, const ModelParams<float>& params, const AdamState<float>* optimizer) {
  check_params(params);
  std::map<std::string, const Tensor<float>*> entries;
  const Tensor<float> config = encode_net_config(params.config);
  entries[kConfigName] = &config;
  for (const auto& [name, t] : params.tensors) entries[name] = &t;
  Tensor<float> step;
  if (optimizer != nullptr) {
    // Stored as f32: exact below 2^24.
    if (optimizer->step >= (1u << 24)) throw ValidationError("optimizer step count too large to checkpoint");
    step = Tensor<float>({1}, static_cast<float>(optimizer->step));
    entries[kStepName] = &step;
    for (const auto& [name, t] : optimizer->m) entries["opt/m/" + name] = &t;
    for (const auto& [name, t] : optimizer->v) entries["opt/v/" + name] = &t;
  }

  out.write("FIDN", 4);
  io::write_u32(out, kCheckpointVersion);
  io::write_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw ValidationError("tensor name too long: " + name);
    io::write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tnsr(out, *t);
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "FIDN") throw FormatError("bad checkpoint magic");
  const std::uint32_t version = io::read_u32(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = io::read_u32(in);

  std::map<std::string, Tensor<float>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = io::read_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw FormatError("truncated checkpoint (tensor name)");
    Tensor<float> t = read_tnsr(in);
    if (!entries.emplace(name, std::move(t)).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
  }

  auto cfg = entries.find(kConfigName);
  if (cfg == entries.end()) throw FormatError("checkpoint lacks '" + std::string(kConfigName) + "'");
  Checkpoint ck;
  ck.params.config = decode_net_config(cfg->second);

  bool has_opt = false;
  AdamState<float> opt;
  for (auto& [name, t] : entries) {
    if (name == kConfigName) continue;
    if (name == kStepName) {
      has_opt = true;
      opt.step = static_cast<std::uint64_t>(t[0]);
    } else if (name.starts_with("opt/m/")) {
      opt.m.emplace(name.substr(6), std::move(t));
    } else if (name.starts_with("opt/v/")) {
      opt.v.emplace(name.substr(6), std::move(t));
    } else {
      group_of(name);
      ck.params.tensors.emplace(name, std::move(t));
    }
  }
  check_params(ck.params);
  if (has_opt) ck.optimizer = std::move(opt);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const AdamState<float>* optimizer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  write_checkpoint(out, params, optimizer);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace fidn
