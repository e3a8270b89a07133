#include "isplit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "isplit/rng.hpp"

namespace isplit {

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "train";
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path, const char* what) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("'" + path + "': truncated reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

namespace {

std::vector<TensorF> read_idx_images(std::ifstream& imgs, const std::string& images_path) {
  const std::uint32_t img_magic = read_u32_be(imgs, images_path, "magic");
  if (img_magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << "'" << images_path << "': bad IDX image magic 0x" << std::hex << img_magic
       << " (expected 0x" << kIdxImagesMagic << ")";
    throw DataError(os.str());
  }
  const std::uint32_t n_images = read_u32_be(imgs, images_path, "image count");
  const std::uint32_t rows = read_u32_be(imgs, images_path, "rows");
  const std::uint32_t cols = read_u32_be(imgs, images_path, "cols");
  std::vector<TensorF> out;
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  std::vector<std::uint8_t> raw(pixels);
  out.reserve(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels)))
      throw DataError("'" + images_path + "': truncated at image " + std::to_string(i));
    TensorF t({1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t p = 0; p < pixels; ++p) t.data[p] = static_cast<float>(raw[p]) / 255.0f;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<TensorF> load_idx_images(const std::string& images_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DataError("cannot open '" + images_path + "'");
  return read_idx_images(imgs, images_path);
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DataError("cannot open '" + images_path + "'");
  std::ifstream lbls(labels_path, std::ios::binary);
  if (!lbls) throw DataError("cannot open '" + labels_path + "'");

  const std::uint32_t lbl_magic = read_u32_be(lbls, labels_path, "magic");
  if (lbl_magic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << "'" << labels_path << "': bad IDX label magic 0x" << std::hex << lbl_magic
       << " (expected 0x" << kIdxLabelsMagic << ")";
    throw DataError(os.str());
  }

  Dataset ds;
  ds.id = images_path;
  ds.images = read_idx_images(imgs, images_path);
  const std::uint32_t n_images = static_cast<std::uint32_t>(ds.images.size());
  const std::uint32_t n_labels = read_u32_be(lbls, labels_path, "label count");
  if (n_images != n_labels)
    throw DataError("IDX count mismatch: " + std::to_string(n_images) + " images in '" +
                    images_path + "' vs " + std::to_string(n_labels) + " labels in '" +
                    labels_path + "'");
  ds.labels.resize(n_labels);
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    std::uint8_t b;
    if (!lbls.read(reinterpret_cast<char*>(&b), 1))
      throw DataError("'" + labels_path + "': truncated at label " + std::to_string(i));
    ds.labels[i] = b;
  }
  ds.class_count = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.tags.assign(ds.images.size(), SplitTag::train);
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.images.empty()) throw DataError("refusing to write an empty IDX pair");
  const auto& shape = ds.images[0].shape;
  if (shape.size() != 3 || shape[0] != 1)
    throw DataError("IDX export requires single-channel (1,H,W) images");
  std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
  if (!imgs) throw DataError("cannot open '" + images_path + "' for write");
  std::ofstream lbls(labels_path, std::ios::binary | std::ios::trunc);
  if (!lbls) throw DataError("cannot open '" + labels_path + "' for write");

  write_u32_be(imgs, kIdxImagesMagic);
  write_u32_be(imgs, static_cast<std::uint32_t>(ds.images.size()));
  write_u32_be(imgs, static_cast<std::uint32_t>(shape[1]));
  write_u32_be(imgs, static_cast<std::uint32_t>(shape[2]));
  for (const auto& img : ds.images) {
    for (float v : img.data) {
      const float clamped = std::min(1.0f, std::max(0.0f, v));
      const std::uint8_t b = static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
      imgs.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  write_u32_be(lbls, kIdxLabelsMagic);
  write_u32_be(lbls, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) {
    const std::uint8_t b = static_cast<std::uint8_t>(l);
    lbls.write(reinterpret_cast<const char*>(&b), 1);
  }
}

namespace {

// Distinct 4x4 binary micro-textures; rendered with 2x2-pixel cells (8px
// period) so the class cue is a texture, with per-image phase jitter.
const std::uint16_t kFinePatterns[8] = {
    0xAAAA,  // vertical stripes
    0xFF00,  // horizontal stripes
    0xA5A5,  // checker
    0x8421,  // diagonal
    0xCCCC,  // vertical stripes, double width
    0xF0F0,  // horizontal double rows
    0xC3C3,  // 2x2 blocks
    0x1248,  // anti-diagonal
};

bool fine_hit(int cue, int y, int x) {
  const std::uint16_t p = kFinePatterns[cue % 8];
  const int cy = (y / 2) % 4, cx = (x / 2) % 4;
  return (p >> (cy * 4 + cx)) & 1;
}

// Large filled shape at a class-anchored quadrant; shape kind cycles with
// the cue so neighbouring classes differ in silhouette too.
bool coarse_hit(int cue, double cy, double cx, double r, int y, int x) {
  const double dy = y - cy, dx = x - cx;
  switch (cue % 4) {
    case 0:  // disk
      return dy * dy + dx * dx <= r * r;
    case 1:  // square
      return std::abs(dy) <= r && std::abs(dx) <= r;
    case 2:  // ring
      return dy * dy + dx * dx <= r * r && dy * dy + dx * dx >= 0.25 * r * r;
    default:  // diamond
      return std::abs(dy) + std::abs(dx) <= r;
  }
}

}  // namespace

std::vector<int> synth_fine_classes(int class_count) {
  std::vector<int> out;
  for (int c = 0; c < class_count / 2; ++c) out.push_back(c);
  return out;
}

std::vector<int> synth_coarse_classes(int class_count) {
  std::vector<int> out;
  for (int c = class_count / 2; c < class_count; ++c) out.push_back(c);
  return out;
}

Dataset synth_dataset(int class_count, int per_class, int image_size,
                      const std::string& structure_profile, std::uint64_t seed) {
  if (class_count < 1) throw DataError("synth_dataset needs class_count >= 1");
  if (per_class < 1) throw DataError("synth_dataset: per_class must be >= 1 (empty dataset)");
  if (image_size < 8) throw DataError("synth_dataset: image_size must be >= 8");
  const bool fine_profile = structure_profile == "fine";
  const bool coarse_profile = structure_profile == "coarse";
  const bool mixed = structure_profile == "mixed";
  if (!fine_profile && !coarse_profile && !mixed)
    throw ConfigError("unknown structure profile '" + structure_profile +
                      "' (expected fine|coarse|mixed)");

  Dataset ds;
  ds.class_count = class_count;
  {
    std::ostringstream os;
    os << "synth(c" << class_count << ",n" << per_class << ",s" << image_size << ","
       << structure_profile << ",seed" << seed << ")";
    ds.id = os.str();
  }

  Rng rng(seed);
  const int s = image_size;
  const double base = 0.2, amp = 0.35, noise = 0.3;

  for (int c = 0; c < class_count; ++c) {
    const bool fine = fine_profile || (mixed && c < class_count / 2);
    const int cue = mixed ? (fine ? c : c - class_count / 2) : c;
    for (int j = 0; j < per_class; ++j) {
      TensorF img({1, s, s});
      if (fine) {
        const int py = static_cast<int>(rng.below(8));
        const int px = static_cast<int>(rng.below(8));
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            img.data[y * s + x] =
                static_cast<float>(base + (fine_hit(cue, y + py, x + px) ? amp : 0.0));
      } else {
        const double qy = (cue / 2) % 2 == 0 ? 0.33 : 0.67;
        const double qx = cue % 2 == 0 ? 0.33 : 0.67;
        const double cy = (qy + rng.uniform(-0.08, 0.08)) * s;
        const double cx = (qx + rng.uniform(-0.08, 0.08)) * s;
        const double r = (0.2 + rng.uniform(-0.03, 0.03)) * s;
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            img.data[y * s + x] =
                static_cast<float>(base + (coarse_hit(cue, cy, cx, r, y, x) ? amp : 0.0));
      }
      for (auto& v : img.data) {
        v += static_cast<float>(noise * rng.normal());
        v = std::min(1.0f, std::max(0.0f, v));
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
    }
  }
  ds.tags.assign(ds.images.size(), SplitTag::train);
  return ds;
}

void assign_split_tags(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw ConfigError("split fractions must be non-negative and sum to <= 1");
  Rng rng(seed);
  ds.tags.assign(ds.images.size(), SplitTag::test);
  for (int c = 0; c < ds.class_count; ++c) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
      if (ds.labels[i] == c) idx.push_back(static_cast<int>(i));
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    const std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * n));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * n));
    for (std::size_t k = 0; k < n; ++k) {
      if (k < n_train)
        ds.tags[idx[k]] = SplitTag::train;
      else if (k < n_train + n_val)
        ds.tags[idx[k]] = SplitTag::val;
    }
  }
}

}  // namespace isplit
