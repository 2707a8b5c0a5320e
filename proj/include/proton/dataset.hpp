#pragma once

#include "proton/random.hpp"
#include "proton/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace proton {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SampleKind { image, embedding };

struct Impression {
    std::string id;
    /// Raw CHW pixels in [0, 1] for images; the embedding vector otherwise.
    Vector values;
};

struct IdentityClass {
    std::string id;
    std::vector<Impression> impressions;
};

struct Dataset {
    SampleKind kind = SampleKind::image;
    Index image_hw = 0;   // images only
    Index embed_dim = 0;  // embeddings only
    std::vector<IdentityClass> classes;

    Index sample_size() const { return kind == SampleKind::image ? 3 * image_hw * image_hw : embed_dim; }
    std::size_t impression_count() const;
    /// Orders classes by id and impressions by id (lexicographic).
    void sort();
    /// Throws DatasetError on inconsistent sample sizes or duplicate ids.
    void validate() const;
};

struct DatasetSplits {
    Dataset train;
    Dataset test;
    Dataset val;
};

/// Random class-level partition; every split receives at least one class
/// when the dataset has at least three.
DatasetSplits split_by_class(const Dataset& data, double train_frac, double test_frac, std::uint64_t seed);

/// Concatenates the classes of several datasets of the same kind.
Dataset merge_classes(const std::vector<const Dataset*>& parts);

struct SyntheticDatasetSpec {
    Index num_classes = 10;
    Index impressions_per_class = 20;
    Index image_hw = 32;
    double noise_sigma = 0.1;
    /// Maximum cyclic translation in pixels, per axis.
    Index max_shift = 0;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Each class gets a smooth random template; impressions add Gaussian pixel
/// noise and a random cyclic translation, clamped to [0, 1].
Dataset generate_synthetic(const SyntheticDatasetSpec& spec);

/// Embedding-space analogue: class centres ~ N(0, I), impressions add N(0, σ²I).
Dataset generate_synthetic_embeddings(const SyntheticDatasetSpec& spec, Index dim);

/// Horizontal flip (p = 0.5) and additive Gaussian noise for CHW images.
Vector augment_image(const Vector& image, Index hw, bool flip, double noise_sigma, Rng& rng);

// --- Embedding tables: CSV `class_id,impression_id,e0,...,e{d-1}` ---

Dataset load_embeddings(const std::filesystem::path& path);
std::string format_embeddings(const Dataset& data);
void save_embeddings(const std::filesystem::path& path, const Dataset& data);

// --- Image folders: root/<class_id>/<impression>.png, 8-bit RGB ---

/// Decodes every PNG and resizes it bilinearly to hw×hw.
Dataset load_image_folder(const std::filesystem::path& root, Index hw);
void save_image_folder(const std::filesystem::path& root, const Dataset& data);

}  // namespace proton
