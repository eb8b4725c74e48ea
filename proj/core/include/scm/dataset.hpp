#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scm/types.hpp"

namespace scm {

/// Parameters of the deterministic synthetic road-defect scene generator.
/// Every record is fully determined by (seed, index).
struct SceneSpec {
    std::uint64_t seed = 0;
    int image_size = 224;
    int min_defects = 1;
    int max_defects = 4;
    /// Relative class weights (pothole, manhole, longitudinal, transverse,
    /// joint, wheel); normalized internally.
    std::array<double, kClassCount> class_proportions = {22.2, 15.1, 16.0, 8.9, 16.1, 21.8};
    double noise_stddev = 6.0;
    double texture_amplitude = 10.0;

    void validate() const;
};

/// One image with its instance annotations. Every annotation box is the
/// tight bounding box of its mask.
struct DatasetRecord {
    int id = 0;
    int image_size = 0;
    std::vector<std::uint8_t> image;  // row-major grayscale, 0..255
    std::vector<InstanceRecord> annotations;
};

struct Dataset {
    SceneSpec spec;
    std::vector<DatasetRecord> records;
};

DatasetRecord generate_scene(const SceneSpec& spec, int index);
Dataset generate_dataset(const SceneSpec& spec, int count, int first_index = 0);

/// Row-major run-length encoding, alternating (background, foreground) run
/// counts starting with background; counts sum to height*width.
std::vector<std::int64_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::int64_t>& runs, int height, int width);

/// Binary 8-bit PGM (P5).
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int height,
               int width);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& height, int& width);

/// On-disk layout: manifest.json, images/NNNN.pgm, annotations.jsonl
/// (one JSON object per image). Round trips are bit-exact.
void write_dataset(const Dataset& dataset, const std::string& directory);
Dataset read_dataset(const std::string& directory);

/// Grayscale raster scaled to [0,1] as an [H,W,1] network input.
Tensor image_to_tensor(const DatasetRecord& record);

/// Union of all instance masks: the binary segmentation ground truth.
Mask binary_ground_truth(const DatasetRecord& record);

}  // namespace scm
