#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fidn/objective.hpp"
#include "fidn/tensor.hpp"

namespace fidn {

enum class Role { Train, Gallery, Probe, Distractor };

std::string_view role_name(Role role);
// Role implied by a manifest file name (train/gallery/probe/distractor.manifest).
std::optional<Role> role_from_filename(const std::filesystem::path& path);

struct SampleRecord {
  std::string image_path;  // relative to the dataset root
  std::size_t identity = 0;
  std::vector<std::uint8_t> attributes;

  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  std::vector<SampleRecord> records;
  std::size_t num_attributes = 0;  // T
  std::size_t num_classes = 0;     // C
  Role role = Role::Train;
  std::filesystem::path root;      // directory image paths are relative to

  std::size_t size() const { return records.size(); }
  // Throws if a record violates the declared T (or C, for train splits).
  void validate() const;
};

// Manifest text format:
//   #fidn-manifest v1 T=<T> C=<C>
//   relative/path.tnsr<TAB><identity><TAB>a1,a2,...,aT
Dataset load_manifest(const std::filesystem::path& path, std::optional<Role> role = std::nullopt);
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

// A dataset with its images resident in memory.
struct LoadedDataset {
  Dataset meta;
  std::vector<Tensor<float>> images;  // each [c,H,W]

  std::size_t size() const { return images.size(); }
};

LoadedDataset load_images(const Dataset& dataset);
LoadedDataset load_dataset(const std::filesystem::path& manifest, std::optional<Role> role = std::nullopt);

// Shuffled index batches. The permutation is a function of the dataset
// contents and epoch_seed only; a trailing batch smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> make_batches(const Dataset& dataset, std::size_t batch_size,
                                                   std::uint64_t epoch_seed);

Batch<float> gather_batch(const LoadedDataset& data, std::span<const std::size_t> indices);
Batch<float> whole_batch(const LoadedDataset& data);

// Rectangle inside an image, in pixels.
struct Patch {
  std::size_t y = 0, x = 0, height = 0, width = 0;
  bool overlaps(const Patch& other) const;
  bool contains(std::size_t py, std::size_t px) const {
    return py >= y && py < y + height && px >= x && px < x + width;
  }
};

struct SynthSpec {
  std::size_t identities = 32;               // C
  std::size_t train_per_identity = 20;
  std::size_t gallery_per_identity = 1;
  std::size_t probe_per_identity = 2;
  std::size_t distractor_identities = 64;
  std::size_t distractor_per_identity = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t attributes = 8;                // T
  std::vector<Patch> patches;                // one per attribute; empty = default layout
  double attribute_amplitude = 1.0;          // mean brightness added inside a positive patch
  double base_amplitude = 0.5;               // scale of the per-identity base pattern
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;

  // Fills in the default patch layout when none was given and validates.
  // Attribute a lives in quadrant a % 4 (0 top-left, 1 top-right,
  // 2 bottom-left, 3 bottom-right); successive attributes of one quadrant
  // are stacked horizontal strips inside it.
  void finalize();
};

// Per-pixel gain of an attribute's patch: 1 +- 0.5 in an attribute-specific
// stripe or checker layout, re-centred so the patch mean is exactly 1.
std::vector<double> patch_texture(std::size_t attribute, const Patch& patch);

std::vector<Patch> default_patches(std::size_t attributes, std::size_t height, std::size_t width);
// Quadrant index (0..3) containing the centre of a patch.
std::size_t patch_quadrant(const Patch& p, std::size_t height, std::size_t width);

struct SynthOutput {
  SynthSpec spec;  // finalized
  LoadedDataset train, gallery, probe, distractor;
  // Per attribute: [H,W] with 1 inside the attribute's quadrant.
  std::vector<Tensor<float>> quadrant_masks;
  // Per identity (training identities first, then distractors): attribute code.
  std::vector<std::vector<std::uint8_t>> identity_attributes;
};

SynthOutput synth_generate(SynthSpec spec);

// Writes manifests, images/<split>/*.tnsr, masks/attr<j>.tnsr.
void write_synth(const SynthOutput& synth, const std::filesystem::path& dir);

// key = value text form used by `fidn synth --spec`.
SynthSpec parse_synth_spec(const std::filesystem::path& path);
SynthSpec parse_synth_spec_text(const std::string& text);

}  // namespace fidn
