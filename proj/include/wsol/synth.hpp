#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsol/box.hpp"
#include "wsol/tensor.hpp"

namespace wsol {

// Synthetic localization dataset. Every object is a large textured body (an
// ellipse, rectangle, triangle or cross, drawn with one shared texture and
// picked independently of the label) plus a small class-coded corner glyph.
// The glyph is the only class signal, so an image-level classifier is free to
// shortcut to it while the ground-truth mask covers the whole object.
struct SynthConfig {
    int classes = 4;
    int n_train = 400;
    int n_test = 200;
    uint64_t seed = 7;
    int height = 64;
    int width = 64;
};

struct SampleRecord {
    std::string id;
    std::string image_path;  // relative to the dataset root
    std::string mask_path;
    int label = 0;
    Box box;         // tight bounding box of the mask
    Box marker_box;  // tight bounding box of the glyph cells
    std::string image_fnv64;
    std::string mask_fnv64;
};

struct Dataset {
    std::string root;
    SynthConfig config;
    int generator_version = 0;
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> test;

    const std::vector<SampleRecord>& split(const std::string& name) const;
    // 3xHxW tensor in [0,1]; verifies the stored checksum first.
    Tensor load_image(const SampleRecord& rec) const;
    // H*W values in {0,1}.
    std::vector<uint8_t> load_mask(const SampleRecord& rec) const;
};

// Writes images/, masks/ and manifest.json under out_dir. Byte-for-byte
// reproducible from (seed, config, generator version); every sample is
// re-rolled until the geometry constraints hold and generation fails loudly
// if a sample cannot be placed.
Dataset generate(const SynthConfig& config, const std::string& out_dir);

// Opens a generated dataset; missing files are an error immediately,
// checksum mismatches when the file is read.
Dataset load_dataset(const std::string& manifest_path);

}  // namespace wsol
