#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aot/nn.hpp"
#include "aot/tensor.hpp"

namespace aot {

struct ManifestEntry {
  std::string id;  ///< Path relative to the corpus root, '/'-separated.
  std::string sha256;
  std::uint64_t size = 0;
  bool operator==(const ManifestEntry&) const = default;
};

enum class Split { kTrain, kTest, kAll };

std::string to_string(Split split);

/// Read-only view over a list of corpus files. Every loaded image is
/// decoded to RGB, square-cropped, resized to target_size, and scaled to [-1, 1].
class ImageSource {
 public:
  ImageSource(std::filesystem::path root, std::vector<ManifestEntry> entries, Split split,
              int target_size);

  /// Every decodable image under `root`, lexicographic by id.
  static ImageSource scan(const std::filesystem::path& root, int target_size);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const std::filesystem::path& root() const { return root_; }
  Split split() const { return split_; }
  int target_size() const { return target_size_; }

  /// Shape (1, 3, target, target), center crop.
  Tensor load(std::size_t index) const;
  /// Random square crop (for training augmentation).
  Tensor load_random_crop(std::size_t index, Rng& rng) const;
  Tensor load_batch(const std::vector<std::size_t>& indices) const;

 private:
  Tensor finish(Tensor image) const;

  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
  Split split_;
  int target_size_;
};

struct RejectedFile {
  std::string id;
  std::string reason;
};

struct ManifestResult {
  ImageSource train;
  ImageSource test;
  std::vector<RejectedFile> rejected;
};

inline constexpr const char* kTrainManifestFile = "manifest_train.txt";
inline constexpr const char* kTestManifestFile = "manifest_test.txt";

/// Scans `root` for PNG/JPEG files, drops undecodable ones (reported in
/// `rejected`), splits the rest with a seeded shuffle, and writes both
/// manifests next to the corpus. Needs at least two decodable images.
ManifestResult build_manifest(const std::filesystem::path& root, double split_fraction,
                              std::uint64_t seed, int target_size);

/// Tab-separated "id checksum size" lines.
std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(const std::string& text);

/// Opens the requested split: a persisted manifest when present (train/test),
/// otherwise a fresh split or a full scan (all).
ImageSource open_source(const std::filesystem::path& root, Split split, double split_fraction,
                        std::uint64_t seed, int target_size);

}  // namespace aot
