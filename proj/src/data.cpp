#include "aot/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aot/encoding.hpp"
#include "aot/error.hpp"
#include "aot/image_io.hpp"

namespace aot {

namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> list_image_ids(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw Error(ErrorCode::kNotFound, "corpus directory '" + root.string() + "' not found");
  }
  std::vector<std::string> ids;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && has_image_extension(e.path())) {
      ids.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Decodes each file once; corrupt files are reported instead of thrown.
std::vector<ManifestEntry> checked_entries(const fs::path& root, const std::vector<std::string>& ids,
                                           std::vector<RejectedFile>* rejected) {
  std::vector<ManifestEntry> out;
  for (const auto& id : ids) {
    try {
      const auto bytes = read_file(root / id);
      decode_image(bytes);
      out.push_back({id, sha256_hex(bytes), bytes.size()});
    } catch (const Error& e) {
      if (rejected) rejected->push_back({id, e.what()});
    }
  }
  return out;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kAll: return "all";
  }
  return "all";
}

ImageSource::ImageSource(fs::path root, std::vector<ManifestEntry> entries, Split split,
                         int target_size)
    : root_(std::move(root)), entries_(std::move(entries)), split_(split), target_size_(target_size) {
  if (target_size_ < 1) throw Error(ErrorCode::kInvalidArgument, "target_size must be positive");
  std::sort(entries_.begin(), entries_.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
}

ImageSource ImageSource::scan(const fs::path& root, int target_size) {
  return ImageSource(root, checked_entries(root, list_image_ids(root), nullptr), Split::kAll,
                     target_size);
}

Tensor ImageSource::finish(Tensor image) const {
  if (image.h() != target_size_ || image.w() != target_size_) {
    image = resize_bilinear(image, target_size_, target_size_);
  }
  return image;
}

Tensor ImageSource::load(std::size_t index) const {
  if (index >= entries_.size()) throw Error(ErrorCode::kInvalidArgument, "image index out of range");
  const auto& id = entries_[index].id;
  try {
    return finish(center_crop_square(image_to_tensor(load_image(root_ / id))));
  } catch (const Error& e) {
    throw Error(e.code(), id + ": " + e.what());
  }
}

Tensor ImageSource::load_random_crop(std::size_t index, Rng& rng) const {
  if (index >= entries_.size()) throw Error(ErrorCode::kInvalidArgument, "image index out of range");
  const auto& id = entries_[index].id;
  try {
    Tensor img = image_to_tensor(load_image(root_ / id));
    const int side = std::min(img.h(), img.w());
    const int y0 = std::uniform_int_distribution<int>(0, img.h() - side)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, img.w() - side)(rng);
    return finish(crop(img, y0, x0, side, side));
  } catch (const Error& e) {
    throw Error(e.code(), id + ": " + e.what());
  }
}

Tensor ImageSource::load_batch(const std::vector<std::size_t>& indices) const {
  std::vector<Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) parts.push_back(load(i));
  return concat_batch(parts);
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.id + "\t" + e.sha256 + "\t" + std::to_string(e.size) + "\n";
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DecodeError("manifest line " + std::to_string(lineno) + " is malformed");
    }
    ManifestEntry e;
    e.id = line.substr(0, t1);
    e.sha256 = line.substr(t1 + 1, t2 - t1 - 1);
    try {
      e.size = std::stoull(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw DecodeError("manifest line " + std::to_string(lineno) + " has a bad size");
    }
    out.push_back(std::move(e));
  }
  return out;
}

ManifestResult build_manifest(const fs::path& root, double split_fraction, std::uint64_t seed,
                              int target_size) {
  if (!(split_fraction > 0 && split_fraction < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "split fraction must lie in (0, 1)");
  }
  std::vector<RejectedFile> rejected;
  auto entries = checked_entries(root, list_image_ids(root), &rejected);
  if (entries.size() < 2) {
    throw Error(ErrorCode::kNotFound, "corpus '" + root.string() + "' has fewer than two decodable images");
  }

  Rng rng(mix_seed(seed, 0x5EED5A17));
  std::shuffle(entries.begin(), entries.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(split_fraction * entries.size()));
  n_train = std::clamp<std::size_t>(n_train, 1, entries.size() - 1);

  std::vector<ManifestEntry> train(entries.begin(), entries.begin() + n_train);
  std::vector<ManifestEntry> test(entries.begin() + n_train, entries.end());
  ImageSource train_src(root, std::move(train), Split::kTrain, target_size);
  ImageSource test_src(root, std::move(test), Split::kTest, target_size);

  write_file_atomic(root / kTrainManifestFile, format_manifest(train_src.entries()));
  write_file_atomic(root / kTestManifestFile, format_manifest(test_src.entries()));
  return {std::move(train_src), std::move(test_src), std::move(rejected)};
}

ImageSource open_source(const fs::path& root, Split split, double split_fraction,
                        std::uint64_t seed, int target_size) {
  if (split == Split::kAll) return ImageSource::scan(root, target_size);
  const fs::path manifest = root / (split == Split::kTrain ? kTrainManifestFile : kTestManifestFile);
  if (fs::exists(manifest)) {
    const auto bytes = read_file(manifest);
    return ImageSource(root, parse_manifest(std::string(bytes.begin(), bytes.end())), split,
                       target_size);
  }
  auto result = build_manifest(root, split_fraction, seed, target_size);
  return split == Split::kTrain ? std::move(result.train) : std::move(result.test);
}

}  // namespace aot
