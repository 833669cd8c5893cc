#include "fidn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fidn/config.hpp"
#include "fidn/rng.hpp"

namespace fidn {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::Train: return "train";
    case Role::Gallery: return "gallery";
    case Role::Probe: return "probe";
    case Role::Distractor: return "distractor";
  }
  return "?";
}

std::optional<Role> role_from_filename(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  for (Role r : {Role::Train, Role::Gallery, Role::Probe, Role::Distractor}) {
    if (stem == role_name(r)) return r;
  }
  return std::nullopt;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.attributes.size() != num_attributes) {
      throw ValidationError("record " + std::to_string(i) + " has " + std::to_string(r.attributes.size()) +
                            " attributes, dataset declares T=" + std::to_string(num_attributes));
    }
    for (auto a : r.attributes) {
      if (a > 1) throw ValidationError("record " + std::to_string(i) + " has a non-binary attribute");
    }
    if (role == Role::Train && r.identity >= num_classes) {
      throw ValidationError("record " + std::to_string(i) + " has identity " + std::to_string(r.identity) +
                            " >= C=" + std::to_string(num_classes));
    }
  }
}

namespace {

[[noreturn]] void manifest_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

bool parse_header_field(const std::string& token, const char* key, std::size_t& out) {
  const std::string prefix = std::string(key) + "=";
  if (!token.starts_with(prefix)) return false;
  const std::string v = token.substr(prefix.size());
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) return false;
  out = std::stoul(v);
  return true;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path, std::optional<Role> role) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  Dataset ds;
  ds.role = role.value_or(role_from_filename(path).value_or(Role::Train));
  ds.root = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) manifest_error(path, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::istringstream hs(line);
    std::string magic, version, t_field, c_field, extra;
    hs >> magic >> version >> t_field >> c_field;
    if (magic != "#fidn-manifest" || version != "v1" || !parse_header_field(t_field, "T", ds.num_attributes) ||
        !parse_header_field(c_field, "C", ds.num_classes) || (hs >> extra)) {
      manifest_error(path, 1, "bad header, expected '#fidn-manifest v1 T=<T> C=<C>'");
    }
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) manifest_error(path, line_no, "expected 3 tab-separated fields");
    SampleRecord rec;
    rec.image_path = fields[0];
    if (rec.image_path.empty()) manifest_error(path, line_no, "empty image path");
    if (fields[1].empty() || fields[1].find_first_not_of("0123456789") != std::string::npos) {
      manifest_error(path, line_no, "identity '" + fields[1] + "' is not a non-negative integer");
    }
    rec.identity = std::stoul(fields[1]);
    const auto attrs = fields[2].empty() ? std::vector<std::string>{} : split(fields[2], ',');
    if (attrs.size() != ds.num_attributes) {
      manifest_error(path, line_no, "has " + std::to_string(attrs.size()) + " attribute values, header declares T=" +
                                        std::to_string(ds.num_attributes));
    }
    for (const auto& a : attrs) {
      if (a != "0" && a != "1") manifest_error(path, line_no, "attribute value '" + a + "' is not 0 or 1");
      rec.attributes.push_back(a == "1" ? 1 : 0);
    }
    if (ds.role == Role::Train && rec.identity >= ds.num_classes) {
      manifest_error(path, line_no, "identity " + std::to_string(rec.identity) + " >= C=" + std::to_string(ds.num_classes));
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write manifest " + path.string());
  out << "#fidn-manifest v1 T=" << dataset.num_attributes << " C=" << dataset.num_classes << '\n';
  for (const auto& r : dataset.records) {
    out << r.image_path << '\t' << r.identity << '\t';
    for (std::size_t j = 0; j < r.attributes.size(); ++j) out << (j ? "," : "") << int(r.attributes[j]);
    out << '\n';
  }
  if (!out) throw ValidationError("failed writing manifest " + path.string());
}

LoadedDataset load_images(const Dataset& dataset) {
  LoadedDataset out;
  out.meta = dataset;
  out.images.reserve(dataset.size());
  for (const auto& r : dataset.records) {
    Tensor<float> img = load_tnsr(dataset.root / r.image_path);
    if (img.rank() == 2) img = img.reshaped({1, img.dim(0), img.dim(1)});
    if (img.rank() != 3) throw ShapeError(r.image_path + ": image must be [c,H,W], got " + shape_string(img.shape()));
    if (!out.images.empty() && img.shape() != out.images.front().shape()) {
      throw ShapeError(r.image_path + ": image shape " + shape_string(img.shape()) + " differs from " +
                       shape_string(out.images.front().shape()));
    }
    out.images.push_back(std::move(img));
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest, std::optional<Role> role) {
  return load_images(load_manifest(manifest, role));
}

std::vector<std::vector<std::size_t>> make_batches(const Dataset& dataset, std::size_t batch_size,
                                                   std::uint64_t epoch_seed) {
  if (batch_size < 2) {
    throw ValidationError("batch_size must be >= 2 (batch normalisation), got " + std::to_string(batch_size));
  }
  std::uint64_t fingerprint = fnv1a(std::to_string(dataset.size()));
  for (const auto& r : dataset.records) fingerprint = fnv1a(r.image_path + "\t" + std::to_string(r.identity), fingerprint);
  Rng rng(mix_seed(epoch_seed, fingerprint));

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch<float> gather_batch(const LoadedDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("gather_batch: empty index list");
  const Shape& img_shape = data.images.at(indices[0]).shape();
  const std::size_t per = shape_size(img_shape);
  const std::size_t t = data.meta.num_attributes;
  Batch<float> b;
  b.images = Tensor<float>({indices.size(), img_shape[0], img_shape[1], img_shape[2]});
  b.attributes = Tensor<float>({indices.size(), std::max<std::size_t>(t, 1)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = data.images.at(indices[i]);
    std::copy(img.data().begin(), img.data().end(), b.images.ptr() + i * per);
    const auto& rec = data.meta.records.at(indices[i]);
    b.identities.push_back(rec.identity);
    for (std::size_t j = 0; j < t; ++j) b.attributes[i * t + j] = rec.attributes[j];
  }
  return b;
}

Batch<float> whole_batch(const LoadedDataset& data) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather_batch(data, idx);
}

// ---------------------------------------------------------------- synthesis

bool Patch::overlaps(const Patch& o) const {
  return y < o.y + o.height && o.y < y + height && x < o.x + o.width && o.x < x + width;
}

std::size_t patch_quadrant(const Patch& p, std::size_t height, std::size_t width) {
  const std::size_t cy = p.y + p.height / 2, cx = p.x + p.width / 2;
  return (cy >= height / 2 ? 2 : 0) + (cx >= width / 2 ? 1 : 0);
}

std::vector<Patch> default_patches(std::size_t attributes, std::size_t height, std::size_t width) {
  const std::size_t slots = (attributes + 3) / 4;
  const std::size_t qh = height / 2, qw = width / 2;
  const std::size_t slot_h = qh >= 2 ? (qh - 2) / slots : 0;
  if (slot_h < 2 || qw < 3) {
    throw ValidationError("image " + std::to_string(height) + "x" + std::to_string(width) + " too small for " +
                          std::to_string(attributes) + " attribute patches");
  }
  std::vector<Patch> patches;
  for (std::size_t a = 0; a < attributes; ++a) {
    const std::size_t q = a % 4, slot = a / 4;
    patches.push_back(Patch{(q / 2) * qh + 1 + slot * slot_h, (q % 2) * qw + 1, slot_h - 1, qw - 2});
  }
  return patches;
}

void SynthSpec::finalize() {
  auto fail = [](const std::string& m) { throw ValidationError("invalid synth spec: " + m); };
  if (identities < 2) fail("identities must be >= 2");
  if (attributes < 1) fail("attributes must be >= 1");
  if (height < 2 || width < 2 || height % 2 || width % 2) fail("height and width must be even and >= 2");
  if (train_per_identity < 1) fail("train_per_identity must be >= 1");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (patches.empty()) patches = default_patches(attributes, height, width);
  if (patches.size() != attributes) {
    fail(std::to_string(patches.size()) + " patches given for " + std::to_string(attributes) + " attributes");
  }
  for (std::size_t a = 0; a < patches.size(); ++a) {
    const Patch& p = patches[a];
    if (p.height == 0 || p.width == 0 || p.y + p.height > height || p.x + p.width > width) {
      fail("patch of attribute " + std::to_string(a) + " is empty or outside the image");
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (p.overlaps(patches[b])) {
        fail("patches of attributes " + std::to_string(b) + " and " + std::to_string(a) + " overlap");
      }
    }
  }
}

namespace {

struct Blob {
  double cy, cx, radius, sign;
};

std::vector<Blob> identity_blobs(std::uint64_t seed, std::size_t identity, std::size_t h, std::size_t w) {
  Rng rng(mix_seed(mix_seed(seed, 0xB10B), identity));
  std::vector<Blob> blobs(6);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.0, static_cast<double>(h));
    b.cx = rng.uniform(0.0, static_cast<double>(w));
    b.radius = rng.uniform(2.0, 6.0);
    b.sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  return blobs;
}

Tensor<float> base_pattern(const SynthSpec& s, std::size_t identity) {
  Tensor<float> img({1, s.height, s.width});
  for (const Blob& b : identity_blobs(s.seed, identity, s.height, s.width)) {
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        const double dy = y + 0.5 - b.cy, dx = x + 0.5 - b.cx;
        img[y * s.width + x] += static_cast<float>(s.base_amplitude * b.sign *
                                                   std::exp(-(dy * dy + dx * dx) / (2.0 * b.radius * b.radius)));
      }
  }
  return img;
}

std::vector<std::vector<std::uint8_t>> assign_codes(const SynthSpec& s) {
  Rng rng(mix_seed(s.seed, 0xC0DE));
  std::vector<std::vector<std::uint8_t>> codes;
  auto bits_of = [&](std::uint64_t v) {
    std::vector<std::uint8_t> code(s.attributes);
    for (std::size_t j = 0; j < s.attributes; ++j) code[j] = static_cast<std::uint8_t>((v >> j) & 1u);
    return code;
  };
  auto random_code = [&] {
    std::vector<std::uint8_t> code(s.attributes);
    for (auto& c : code) c = static_cast<std::uint8_t>(rng.bits() & 1u);
    return code;
  };
  // Distinct codes for the enrolled identities whenever 2^T allows it.
  if (s.attributes < 20 && s.identities <= (std::size_t{1} << s.attributes)) {
    const std::size_t space = std::size_t{1} << s.attributes;
    std::vector<std::uint64_t> all(space);
    for (std::size_t i = 0; i < space; ++i) all[i] = i;
    for (std::size_t i = 0; i < s.identities; ++i) std::swap(all[i], all[i + rng.below(space - i)]);
    for (std::size_t i = 0; i < s.identities; ++i) codes.push_back(bits_of(all[i]));
  } else {
    for (std::size_t i = 0; i < s.identities; ++i) codes.push_back(random_code());
  }
  for (std::size_t d = 0; d < s.distractor_identities; ++d) codes.push_back(random_code());
  return codes;
}

std::string image_name(Role role, std::size_t identity, std::size_t k) {
  std::ostringstream os;
  os << "images/" << role_name(role) << "/id" << std::setw(4) << std::setfill('0') << identity << '_'
     << std::setw(3) << std::setfill('0') << k << ".tnsr";
  return os.str();
}

}  // namespace

std::vector<double> patch_texture(std::size_t attribute, const Patch& patch) {
  const std::size_t h = patch.height, w = patch.width;
  auto sign = [&](std::size_t y, std::size_t x) -> int {
    switch (attribute % 8) {
      case 0: return y % 2;
      case 1: return x % 2;
      case 2: return (y + x) % 2;
      case 3: return 2 * y < h;
      case 4: return 2 * x < w;
      case 5: return (3 * y / h + 3 * x / w) % 2;
      case 6: return (y % 2) ^ (2 * x < w);
      default: return (x % 2) ^ (2 * y < h);
    }
  };
  std::vector<double> t(h * w);
  double mean = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      int s = sign(y, x);
      if ((attribute / 8) % 2) s = 1 - s;
      t[y * w + x] = s ? 1.0 : -1.0;
      mean += t[y * w + x];
    }
  mean /= static_cast<double>(t.size());
  for (double& v : t) v = 1.0 + 0.5 * (v - mean);
  return t;
}

SynthOutput synth_generate(SynthSpec spec) {
  spec.finalize();
  SynthOutput out;
  out.spec = spec;
  out.identity_attributes = assign_codes(spec);

  const std::size_t total_ids = spec.identities + spec.distractor_identities;
  std::vector<Tensor<float>> clean(total_ids);
  for (std::size_t id = 0; id < total_ids; ++id) {
    Tensor<float> img = base_pattern(spec, id);
    for (std::size_t a = 0; a < spec.attributes; ++a) {
      if (!out.identity_attributes[id][a]) continue;
      const Patch& p = spec.patches[a];
      const std::vector<double> texture = patch_texture(a, p);
      for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x)
          img[(p.y + y) * spec.width + p.x + x] += static_cast<float>(spec.attribute_amplitude * texture[y * p.width + x]);
    }
    clean[id] = std::move(img);
  }

  auto make_split = [&](Role role, std::size_t first_id, std::size_t count_ids, std::size_t per_id) {
    LoadedDataset split;
    split.meta.role = role;
    split.meta.num_attributes = spec.attributes;
    split.meta.num_classes = spec.identities;
    Rng noise(mix_seed(mix_seed(spec.seed, 0x5EED), static_cast<std::uint64_t>(role)));
    for (std::size_t id = first_id; id < first_id + count_ids; ++id) {
      for (std::size_t k = 0; k < per_id; ++k) {
        Tensor<float> img = clean[id];
        if (spec.noise_sigma > 0.0)
          for (float& v : img.data()) v += static_cast<float>(spec.noise_sigma * noise.normal());
        split.meta.records.push_back(SampleRecord{image_name(role, id, k), id, out.identity_attributes[id]});
        split.images.push_back(std::move(img));
      }
    }
    return split;
  };
  out.train = make_split(Role::Train, 0, spec.identities, spec.train_per_identity);
  out.gallery = make_split(Role::Gallery, 0, spec.identities, spec.gallery_per_identity);
  out.probe = make_split(Role::Probe, 0, spec.identities, spec.probe_per_identity);
  out.distractor = make_split(Role::Distractor, spec.identities, spec.distractor_identities, spec.distractor_per_identity);

  for (std::size_t a = 0; a < spec.attributes; ++a) {
    Tensor<float> mask({spec.height, spec.width});
    const std::size_t q = patch_quadrant(spec.patches[a], spec.height, spec.width);
    const std::size_t y0 = (q / 2) * spec.height / 2, x0 = (q % 2) * spec.width / 2;
    for (std::size_t y = y0; y < y0 + spec.height / 2; ++y)
      for (std::size_t x = x0; x < x0 + spec.width / 2; ++x) mask[y * spec.width + x] = 1.0f;
    out.quadrant_masks.push_back(std::move(mask));
  }
  return out;
}

void write_synth(const SynthOutput& synth, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "masks");
  for (const LoadedDataset* split : {&synth.train, &synth.gallery, &synth.probe, &synth.distractor}) {
    fs::create_directories(dir / "images" / std::string(role_name(split->meta.role)));
    for (std::size_t i = 0; i < split->size(); ++i) {
      save_tnsr(dir / split->meta.records[i].image_path, split->images[i]);
    }
    Dataset meta = split->meta;
    meta.root = dir;
    write_manifest(dir / (std::string(role_name(meta.role)) + ".manifest"), meta);
  }
  for (std::size_t a = 0; a < synth.quadrant_masks.size(); ++a) {
    save_tnsr(dir / "masks" / ("attr" + std::to_string(a) + ".tnsr"), synth.quadrant_masks[a]);
  }
}

SynthSpec parse_synth_spec_text(const std::string& text) {
  SynthSpec s;
  std::map<std::size_t, Patch> patches;
  for (const auto& kv : parse_key_values(text)) {
    const std::string& k = kv.key;
    const std::string& v = kv.value;
    if (k == "identities") s.identities = parse_size(k, v);
    else if (k == "train_per_identity") s.train_per_identity = parse_size(k, v);
    else if (k == "gallery_per_identity") s.gallery_per_identity = parse_size(k, v);
    else if (k == "probe_per_identity") s.probe_per_identity = parse_size(k, v);
    else if (k == "distractor_identities") s.distractor_identities = parse_size(k, v);
    else if (k == "distractor_per_identity") s.distractor_per_identity = parse_size(k, v);
    else if (k == "height") s.height = parse_size(k, v);
    else if (k == "width") s.width = parse_size(k, v);
    else if (k == "attributes") s.attributes = parse_size(k, v);
    else if (k == "attribute_amplitude") s.attribute_amplitude = parse_double(k, v);
    else if (k == "base_amplitude") s.base_amplitude = parse_double(k, v);
    else if (k == "noise_sigma") s.noise_sigma = parse_double(k, v);
    else if (k == "seed") s.seed = parse_u64(k, v);
    else if (k.starts_with("patch.")) {
      const std::size_t a = parse_size(k, k.substr(6));
      const auto parts = split(v, ',');
      if (parts.size() != 4) throw ValidationError("line " + std::to_string(kv.line) + ": patch needs y,x,height,width");
      std::size_t vals[4];
      for (int i = 0; i < 4; ++i) {
        std::string p = parts[i];
        p.erase(0, p.find_first_not_of(' '));
        p.erase(p.find_last_not_of(' ') + 1);
        vals[i] = parse_size(k, p);
      }
      patches[a] = Patch{vals[0], vals[1], vals[2], vals[3]};
    } else {
      throw ValidationError("line " + std::to_string(kv.line) + ": unknown synth spec key '" + k + "'");
    }
  }
  if (!patches.empty()) {
    for (std::size_t a = 0; a < patches.size(); ++a) {
      if (!patches.contains(a)) throw ValidationError("patch." + std::to_string(a) + " missing");
      s.patches.push_back(patches[a]);
    }
  }
  return s;
}

SynthSpec parse_synth_spec(const std::filesystem::path& path) {
  return parse_synth_spec_text(read_text_file(path));
}

}  // namespace fidn
