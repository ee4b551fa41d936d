#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sghf/tensor.hpp"

namespace sghf {

// Binary 3-D grid, same dims as the volume it annotates.
struct Mask3 {
    Shape dims;  // 3 entries
    std::vector<uint8_t> v;

    int64_t count() const;
    bool empty() const { return count() == 0; }
    uint8_t at(int64_t a, int64_t b, int64_t c) const {
        return v[static_cast<size_t>((a * dims[1] + b) * dims[2] + c)];
    }
};

struct SubjectShapes {
    Shape volume{32, 32, 16};
    int64_t n_patches = 8;
    int64_t patch = 64;
};

// One synthetic paired-modality case. The 8-dim latent drives both the
// volumetric image (blob geometry, intensity texture) and the 2-D patch
// textures, so patch-level structure is predictable from the volume.
struct Subject {
    uint64_t id = 0;
    int label = 0;  // 0 or 1
    Tensor volume;  // rank-3, values in [0,1]
    Mask3 mask;
    std::vector<Tensor> patches;  // rank-2, values in [0,1]
    std::array<double, 8> latent{};
};

// Deterministic in (seed, id, label); shift > 0 perturbs the generating
// distribution (weaker class separation, more noise, intensity warp) and
// models an out-of-site acquisition.
Subject generate_subject(uint64_t seed, uint64_t id, int label, const SubjectShapes& shapes,
                         double shift = 0.0);

// r sweeps of 6-connected dilation == L1 ball of radius r, clipped at the
// borders.
Mask3 dilate_mask(const Mask3& mask, int64_t r = 3);

// Crop centered on the rounded mask centroid; the window is clamped to
// stay inside the volume, so the output shape is always exact.
Tensor crop_voi(const Tensor& volume, const Mask3& mask, const Shape& out_shape);

// (x - min) / (max - min); a constant array maps to all zeros.
Tensor normalize_unit(const Tensor& x);

struct ExtractedPatch {
    Tensor image;
    int64_t row = 0, col = 0;  // window origin
};

// Sliding-window crops of a 2-D image; a window is kept iff strictly more
// than 80% of its pixels fall inside the region of interest.
std::vector<ExtractedPatch> extract_patches_with_coverage(const Tensor& image2d,
                                                          const std::vector<uint8_t>& roi,
                                                          int64_t patch, int64_t stride);

struct FoldSplit {
    int k = 0;
    std::vector<int> fold_of;                    // aligned with the input id list
    std::vector<std::vector<uint64_t>> test_ids;  // per fold
    std::vector<std::vector<uint64_t>> train_ids;
};

// Stratified subject-level k-fold partition; requires >= k subjects of
// each class.
FoldSplit split_folds(const std::vector<uint64_t>& ids, const std::vector<int>& labels, int k,
                      uint64_t seed);

struct Dataset {
    uint64_t seed = 0;
    double shift = 0.0;
    double balance = 0.5;
    SubjectShapes shapes;
    std::vector<Subject> subjects;
    std::string content_hash;  // set by save/load

    std::vector<uint64_t> ids() const;
    std::vector<int> labels() const;
    const Subject& by_id(uint64_t id) const;
};

Dataset generate_dataset(uint64_t seed, int64_t n, double balance, const SubjectShapes& shapes,
                         double shift = 0.0);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Canonical binary encoding of one subject (the on-disk blob layout);
// also the unit hashed into dataset fingerprints.
std::string encode_subject_blob(const Subject& s);

// Model-input pipeline for one volume: mask dilation, centered VOI crop,
// unit normalization.
Tensor preprocess_volume(const Subject& s, const Shape& voi, int64_t dilate_r = 3);

}  // namespace sghf
