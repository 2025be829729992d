#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priormoe/tensor.hpp"

namespace priormoe {

enum class ShapeFamily { kEllipse, kPolygon, kMix };

// Camouflage strength drives the phase offset between background and
// foreground texture: each sinusoidal component inside the shape is shifted
// by 2*pi*(1 - strength), so strength 0 leaves the foreground texture
// identical to the background (hardest case).
struct DatasetSpec {
    int count = 0;
    int image_size = 64;
    uint64_t texture_seed = 0;
    ShapeFamily shapes = ShapeFamily::kMix;
    double camouflage = 0.5;
    bool png = false;  // write .png instead of .ppm/.pgm
};

struct GeneratedSample {
    std::string stem;
    double analytic_area = 0.0;
    double analytic_perimeter = 0.0;
    int64_t mask_pixels = 0;
};

struct DatasetManifest {
    DatasetSpec spec;
    std::vector<GeneratedSample> samples;
};

// Writes image/mask pairs (img_XXXX + msk_XXXX) plus manifest.txt. Generation
// is a pure function of the spec: same spec, byte-identical files.
DatasetManifest gen_synthetic_dataset(const DatasetSpec& spec, const std::string& out_dir);

// In-memory generation of a single pair (used by the writer and by tests).
struct SamplePair {
    Tensor image;  // [3,S,S] in [0,1]
    Tensor mask;   // [S,S] in {0,1}
    double analytic_area = 0.0;
    double analytic_perimeter = 0.0;
};
SamplePair gen_sample(const DatasetSpec& spec, int index);

// Loads img_*/msk_* pairs from a directory in lexicographic stem order.
struct LoadedSample {
    std::string stem;
    Tensor image;  // [3,H,W]
    Tensor mask;   // [H,W] binary
};
std::vector<LoadedSample> load_dataset(const std::string& dir);

ShapeFamily shape_family_from_string(const std::string& s);
std::string to_string(ShapeFamily f);

}  // namespace priormoe
