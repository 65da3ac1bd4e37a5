#pragma once
// Deterministic generator of synthetic scene images with one pasted attribute
// marker per image, under exact per-class attribute co-occurrence ratios.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ortho {

struct Sample {
    std::vector<double> pixels; // 3*H*W, values in [0,1], CHW
    std::uint8_t label = 0;     // scene class
    std::uint8_t attr = 0;      // protected attribute
    std::uint16_t box_row = 0, box_col = 0, box_size = 0;
};

struct BiasConfig {
    int num_classes = 10;
    int per_class = 200;
    int height = 32;
    int width = 32;
    std::vector<int> biased_classes; // the subset K
    double rho_biased = 0.5;         // ratio for classes in K; others get 0.5
    std::uint64_t seed = 0;

    double rho_of(int cls) const;
    int marker_size() const; // fixed per dataset, bounded by min(H,W)/3
};

struct Dataset {
    BiasConfig cfg;
    std::vector<Sample> samples;

    int size() const { return int(samples.size()); }
    // contiguous pixel buffer for the given sample indices
    std::vector<double> gather_pixels(const std::vector<int> &idx) const;
    std::vector<int> labels_of(const std::vector<int> &idx) const;
    std::vector<int> attrs_of(const std::vector<int> &idx) const;
};

// Rejects non-integral per-class attribute counts and out-of-range K.
Dataset generate(const BiasConfig &cfg);

Sample render_sample(int cls, int attr, const BiasConfig &cfg, std::uint64_t seed);

struct Split {
    std::vector<int> train, test;
};
// Stratified jointly by (label, attr); every cell needs at least 2 samples.
Split stratified_split(const Dataset &ds, double train_frac, std::uint64_t seed);

void save_dataset(const Dataset &ds, const std::string &path);
Dataset load_dataset(const std::string &path);
std::string manifest_text(const Dataset &ds);

std::uint64_t dataset_hash(const Dataset &ds);

} // namespace ortho
