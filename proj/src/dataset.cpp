#include "maunet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "maunet/error.hpp"
#include "maunet/png_io.hpp"
#include "maunet/rng.hpp"

namespace fs = std::filesystem;

namespace maunet {

namespace {

std::set<std::string> png_stems(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw DataError("dataset: missing directory " + dir.string());
    }
    std::set<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            stems.insert(entry.path().stem().string());
        }
    }
    return stems;
}

TensorF image_to_tensor(const GrayImage& img) {
    std::vector<float> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    }
    return TensorF({1, img.height, img.width}, std::move(v));
}

TensorF mask_to_tensor(const GrayImage& img) {
    std::vector<float> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = img.pixels[i] >= 128 ? 1.0f : 0.0f;
    }
    return TensorF({1, img.height, img.width}, std::move(v));
}

}  // namespace

std::vector<SegSample> load_dataset(const std::string& root, double split_fraction,
                                    std::uint64_t seed) {
    if (!(split_fraction > 0.0 && split_fraction <= 1.0)) {
        throw ConfigError("load_dataset: split fraction must be in (0,1]");
    }
    const fs::path images_dir = fs::path(root) / "images";
    const fs::path masks_dir = fs::path(root) / "masks";
    const auto image_stems = png_stems(images_dir);
    const auto mask_stems = png_stems(masks_dir);
    for (const auto& s : image_stems) {
        if (!mask_stems.count(s)) {
            throw DataError("dataset: image '" + s + ".png' has no mask counterpart");
        }
    }
    for (const auto& s : mask_stems) {
        if (!image_stems.count(s)) {
            throw DataError("dataset: mask '" + s + ".png' has no image counterpart");
        }
    }
    if (image_stems.empty()) throw DataError("dataset: no samples under " + root);

    // std::set iterates lexicographically; shuffle a copy for the split tags
    std::vector<std::string> stems(image_stems.begin(), image_stems.end());
    std::vector<std::size_t> order(stems.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngState shuffle_rng = RngState(seed).split(RngState::kData);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_below(i))]);
    }
    const std::size_t n_train =
        static_cast<std::size_t>(std::ceil(split_fraction * static_cast<double>(stems.size())));
    std::vector<SegSample::Split> tags(stems.size(), SegSample::Split::Val);
    for (std::size_t i = 0; i < order.size() && i < n_train; ++i) {
        tags[order[i]] = SegSample::Split::Train;
    }

    std::vector<SegSample> samples;
    samples.reserve(stems.size());
    for (std::size_t i = 0; i < stems.size(); ++i) {
        const GrayImage img = read_png_gray8((images_dir / (stems[i] + ".png")).string());
        const GrayImage msk = read_png_gray8((masks_dir / (stems[i] + ".png")).string());
        if (img.width != msk.width || img.height != msk.height) {
            throw DataError("dataset: pair '" + stems[i] + "' size mismatch: image " +
                            std::to_string(img.width) + "x" + std::to_string(img.height) +
                            " vs mask " + std::to_string(msk.width) + "x" +
                            std::to_string(msk.height));
        }
        samples.push_back(SegSample{stems[i], image_to_tensor(img), mask_to_tensor(msk), tags[i]});
    }
    return samples;
}

void gen_synthetic(int n, int size, std::uint64_t seed, const std::string& out_dir) {
    if (n < 1 || size < 8) throw ConfigError("gen_synthetic: need n >= 1 and size >= 8");
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks")) {
        throw IoError("gen_synthetic: cannot create output directories under " + out_dir);
    }

    const RngState base = RngState(seed).split(RngState::kData);
    for (int i = 0; i < n; ++i) {
        RngState rng = base.split(static_cast<std::uint64_t>(i));

        struct Ellipse {
            double cx, cy, rx, ry;
        };
        const int count = 1 + static_cast<int>(rng.next_below(3));
        std::vector<Ellipse> ellipses;
        for (int e = 0; e < count; ++e) {
            Ellipse el;
            // radii bounded below so every mask has foreground pixels
            el.rx = rng.next_uniform(size / 8.0, size / 4.0);
            el.ry = rng.next_uniform(size / 8.0, size / 4.0);
            el.cx = rng.next_uniform(el.rx, size - el.rx);
            el.cy = rng.next_uniform(el.ry, size - el.ry);
            ellipses.push_back(el);
        }

        GrayImage image{size, size, std::vector<std::uint8_t>(
                                        static_cast<std::size_t>(size) * static_cast<std::size_t>(size))};
        GrayImage mask = image;
        std::size_t p = 0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x, ++p) {
                bool inside = false;
                for (const auto& el : ellipses) {
                    const double dx = (x + 0.5 - el.cx) / el.rx;
                    const double dy = (y + 0.5 - el.cy) / el.ry;
                    if (dx * dx + dy * dy <= 1.0) {
                        inside = true;
                        break;
                    }
                }
                double v = (inside ? 0.75 : 0.25) + 0.1 * rng.next_normal();
                v = std::min(1.0, std::max(0.0, v));
                image.pixels[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
                mask.pixels[p] = inside ? 255 : 0;
            }
        }

        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%04d", i);
        write_png_gray8((root / "images" / (std::string(stem) + ".png")).string(), image);
        write_png_gray8((root / "masks" / (std::string(stem) + ".png")).string(), mask);
    }
}

std::vector<const SegSample*> split_of(const std::vector<SegSample>& data, SegSample::Split split) {
    std::vector<const SegSample*> out;
    for (const auto& s : data) {
        if (s.split == split) out.push_back(&s);
    }
    return out;
}

namespace {

TensorF stack(const std::vector<const SegSample*>& samples, bool masks) {
    if (samples.empty()) throw UsageError("stack: empty sample list");
    const Shape& one = masks ? samples[0]->mask.shape() : samples[0]->image.shape();
    std::vector<float> data;
    data.reserve(numel(one) * samples.size());
    for (const auto* s : samples) {
        const TensorF& t = masks ? s->mask : s->image;
        if (!same_shape(t.shape(), one)) {
            throw DataError("stack: sample '" + s->id + "' has shape " + shape_str(t.shape()) +
                            ", expected " + shape_str(one));
        }
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    return TensorF({static_cast<int>(samples.size()), one[0], one[1], one[2]}, std::move(data));
}

}  // namespace

TensorF stack_images(const std::vector<const SegSample*>& samples) { return stack(samples, false); }
TensorF stack_masks(const std::vector<const SegSample*>& samples) { return stack(samples, true); }

}  // namespace maunet
