#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maunet/tensor.hpp"

namespace maunet {

// One image/mask pair. Images are scaled to [0,1]; masks are binarized by
// thresholding raw pixels at 128 (tolerates anti-aliased labels).
struct SegSample {
    enum class Split { Train, Val };

    std::string id;  // filename stem
    TensorF image;   // [1,H,W]
    TensorF mask;    // [1,H,W], values exactly {0,1}
    Split split = Split::Train;
};

// Loads root/images/*.png with matching root/masks/*.png. Stems are sorted
// lexicographically, then seeded-shuffled; the first ceil(fraction*n) are
// tagged train, the rest val. Returned in sorted-stem order.
std::vector<SegSample> load_dataset(const std::string& root, double split_fraction = 0.8,
                                    std::uint64_t seed = 0);

// Writes n synthetic samples (size x size): 1-3 filled ellipses on a noisy
// background, Gaussian noise sigma = 0.1 on intensity, mask = exact ellipse
// union. Same seed yields byte-identical files.
void gen_synthetic(int n, int size, std::uint64_t seed, const std::string& out_dir);

// Helpers shared with the CLI.
std::vector<const SegSample*> split_of(const std::vector<SegSample>& data, SegSample::Split split);
TensorF stack_images(const std::vector<const SegSample*>& samples);
TensorF stack_masks(const std::vector<const SegSample*>& samples);

}  // namespace maunet
