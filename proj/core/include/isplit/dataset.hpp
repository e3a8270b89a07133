#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isplit/tensor.hpp"

namespace isplit {

enum class SplitTag : std::uint8_t { train = 0, val = 1, test = 2 };

std::string to_string(SplitTag t);

/// Labeled image set with disjoint train/val/test partitions.
struct Dataset {
  std::string id;
  int class_count = 0;
  std::vector<TensorF> images;  // uniform shape
  std::vector<int> labels;
  std::vector<SplitTag> tags;

  std::size_t size() const { return images.size(); }

  std::vector<int> indices(SplitTag tag) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < tags.size(); ++i)
      if (tags[i] == tag) out.push_back(static_cast<int>(i));
    return out;
  }

  std::vector<int> all_indices() const {
    std::vector<int> out(images.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
    return out;
  }

  std::vector<long long> class_counts() const {
    std::vector<long long> out(class_count, 0);
    for (int l : labels) out[l] += 1;
    return out;
  }
};

/// Loads an IDX image/label file pair (the MNIST container format). Pixels
/// are scaled to [0,1]; image shape is (1, rows, cols). Everything lands in
/// the train partition until assign_split_tags runs.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Loads just the images of an IDX file (for label-free inference input).
std::vector<TensorF> load_idx_images(const std::string& images_path);

/// Writes the dataset as an IDX pair; pixels are quantized to u8.
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

/// Deterministic balanced synthetic dataset. structure_profile places the
/// class cue at a controlled spatial scale:
///   "fine"   - classes differ by 4x4 micro-textures with random phase;
///   "coarse" - classes differ by a large shape at a class-specific position;
///   "mixed"  - first half of the classes fine, second half coarse.
Dataset synth_dataset(int class_count, int per_class, int image_size,
                      const std::string& structure_profile, std::uint64_t seed);

/// Classes of a mixed dataset carrying fine / coarse cues.
std::vector<int> synth_fine_classes(int class_count);
std::vector<int> synth_coarse_classes(int class_count);

/// Deterministic stratified partition into train/val/test.
void assign_split_tags(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed);

}  // namespace isplit
