#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "clstream/matrix.hpp"
#include "clstream/rng.hpp"

namespace clstream {

enum class Split { train, test };

/// A class-labeled dataset with features scaled into [0,1] and a
/// per-class index over sample ids.
struct LabeledDataset {
    Matrix features;              // num_samples x input_dim
    std::vector<int> labels;      // in [0, num_classes)
    std::vector<std::vector<int>> class_index;
    int num_classes = 0;
    Split split = Split::train;

    std::size_t num_samples() const { return features.rows; }
    std::size_t input_dim() const { return features.cols; }

    void rebuild_class_index() {
        class_index.assign(static_cast<std::size_t>(num_classes), {});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int y = labels[i];
            if (y < 0 || y >= num_classes)
                throw std::runtime_error("label out of range while indexing dataset");
            class_index[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
        }
    }
};

/// Keep only samples whose label is < n_keep and re-tag the class count.
/// Used to carve an N-class scenario out of a larger dataset.
inline LabeledDataset subset_classes(const LabeledDataset& ds, int n_keep) {
    if (n_keep < 1 || n_keep > ds.num_classes)
        throw std::invalid_argument("subset_classes: class count out of range");
    if (n_keep == ds.num_classes) return ds;
    LabeledDataset out;
    out.num_classes = n_keep;
    out.split = ds.split;
    std::vector<int> keep_ids;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        if (ds.labels[i] < n_keep) keep_ids.push_back(static_cast<int>(i));
    out.features = ds.features.gather_rows(keep_ids);
    out.labels.reserve(keep_ids.size());
    for (int id : keep_ids) out.labels.push_back(ds.labels[static_cast<std::size_t>(id)]);
    out.rebuild_class_index();
    return out;
}

// ---------------------------------------------------------------------------
// IDX binary ingestion (big-endian, magic 0x803 images / 0x801 labels)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    std::uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated IDX file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/**
 * Load an image/label IDX file pair into a LabeledDataset.
 *
 * Pixels are flattened row-major and scaled by 1/255 into [0,1]. Malformed
 * magic numbers, image/label count mismatches and truncated payloads are
 * reported as distinct errors.
 */
inline LabeledDataset load_idx_dataset(const std::string& images_path,
                                       const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open IDX image file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open IDX label file: " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(img, "image magic");
    if (img_magic != kIdxImagesMagic)
        throw std::runtime_error("bad IDX image magic number: got " +
                                 std::to_string(img_magic) + ", expected 2051");
    const std::uint32_t lab_magic = detail::read_be_u32(lab, "label magic");
    if (lab_magic != kIdxLabelsMagic)
        throw std::runtime_error("bad IDX label magic number: got " +
                                 std::to_string(lab_magic) + ", expected 2049");

    const std::uint32_t n_images = detail::read_be_u32(img, "image count");
    const std::uint32_t n_rows = detail::read_be_u32(img, "row count");
    const std::uint32_t n_cols = detail::read_be_u32(img, "column count");
    const std::uint32_t n_labels = detail::read_be_u32(lab, "label count");
    if (n_images != n_labels)
        throw std::runtime_error("IDX image/label count mismatch: " +
                                 std::to_string(n_images) + " images vs " +
                                 std::to_string(n_labels) + " labels");

    const std::size_t dim = std::size_t(n_rows) * n_cols;
    LabeledDataset ds;
    ds.features = Matrix(n_images, dim);
    ds.labels.resize(n_images);

    std::vector<std::uint8_t> buf(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!img) throw std::runtime_error("truncated IDX image payload at sample " +
                                           std::to_string(i));
        auto row = ds.features.row(i);
        for (std::size_t p = 0; p < dim; ++p) row[p] = buf[p] / 255.0;
    }
    std::vector<std::uint8_t> lbuf(n_labels);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n_labels));
    if (!lab) throw std::runtime_error("truncated IDX label payload");

    int max_label = 0;
    for (std::uint32_t i = 0; i < n_labels; ++i) {
        ds.labels[i] = lbuf[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    ds.rebuild_class_index();
    return ds;
}

/// Write a dataset back to the IDX pair format (used by tooling and tests).
/// Features are expected in [0,1] and are quantized to bytes; rows*cols must
/// equal the input dimension.
inline void write_idx_dataset(const LabeledDataset& ds, std::uint32_t rows,
                              std::uint32_t cols, const std::string& images_path,
                              const std::string& labels_path) {
    if (std::size_t(rows) * cols != ds.input_dim())
        throw std::invalid_argument("write_idx_dataset: rows*cols != input_dim");
    auto put_be = [](std::ostream& out, std::uint32_t v) {
        const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                                   std::uint8_t(v >> 8), std::uint8_t(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot write IDX image file: " + images_path);
    put_be(img, kIdxImagesMagic);
    put_be(img, static_cast<std::uint32_t>(ds.num_samples()));
    put_be(img, rows);
    put_be(img, cols);
    std::vector<std::uint8_t> buf(ds.input_dim());
    for (std::size_t i = 0; i < ds.num_samples(); ++i) {
        auto row = ds.features.row(i);
        for (std::size_t p = 0; p < buf.size(); ++p)
            buf[p] = static_cast<std::uint8_t>(
                std::clamp(std::lround(row[p] * 255.0), 0l, 255l));
        img.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot write IDX label file: " + labels_path);
    put_be(lab, kIdxLabelsMagic);
    put_be(lab, static_cast<std::uint32_t>(ds.num_samples()));
    for (int y : ds.labels) lab.put(static_cast<char>(y));
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian-blob classes
// ---------------------------------------------------------------------------

struct BlobDataset {
    LabeledDataset train;
    LabeledDataset test;
};

/**
 * Deterministic Gaussian-blob classification data.
 *
 * Each class gets a mean at `separation` times a random unit direction;
 * samples are the mean plus isotropic unit noise, then squashed affinely
 * into [0,1]. Train and test splits come from independently advanced
 * generator streams over identical class means, so they are disjoint by
 * construction.
 */
inline BlobDataset make_blob_dataset(int num_classes, int samples_per_class,
                                     int input_dim, double separation,
                                     std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("make_blob_dataset: num_classes must be >= 2");
    if (samples_per_class < 1)
        throw std::invalid_argument("make_blob_dataset: samples_per_class must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("make_blob_dataset: input_dim must be >= 1");
    if (!(separation > 0.0))
        throw std::invalid_argument("make_blob_dataset: separation must be > 0");

    // Means depend on the seed only, never on the split. While they fit,
    // the random directions are orthonormalized so every class pair sits at
    // distance separation * sqrt(2); beyond input_dim classes they stay
    // plain random unit directions.
    Rng means_rng(mix_seed(seed, 0xb10bu));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> means(static_cast<std::size_t>(num_classes));
    for (std::size_t c = 0; c < means.size(); ++c) {
        auto& m = means[c];
        m.resize(static_cast<std::size_t>(input_dim));
        while (true) {
            for (auto& v : m) v = gauss(means_rng);
            if (c < static_cast<std::size_t>(input_dim)) {
                for (std::size_t j = 0; j < c; ++j) {
                    double dot = 0.0;
                    for (int d = 0; d < input_dim; ++d)
                        dot += m[static_cast<std::size_t>(d)] *
                               means[j][static_cast<std::size_t>(d)];
                    dot /= separation * separation;
                    for (int d = 0; d < input_dim; ++d)
                        m[static_cast<std::size_t>(d)] -=
                            dot * means[j][static_cast<std::size_t>(d)];
                }
            }
            double norm2 = 0.0;
            for (double v : m) norm2 += v * v;
            if (norm2 > 1e-12) {
                const double inv = separation / std::sqrt(norm2);
                for (auto& v : m) v *= inv;
                break;
            }
        }
    }

    auto make_raw_split = [&](Split split, std::uint64_t stream_tag) {
        LabeledDataset ds;
        ds.split = split;
        ds.num_classes = num_classes;
        ds.features = Matrix(std::size_t(num_classes) * samples_per_class,
                             static_cast<std::size_t>(input_dim));
        ds.labels.resize(ds.features.rows);
        Rng rng(mix_seed(seed, stream_tag));
        std::normal_distribution<double> noise(0.0, 1.0);
        std::size_t r = 0;
        for (int c = 0; c < num_classes; ++c) {
            const auto& m = means[static_cast<std::size_t>(c)];
            for (int s = 0; s < samples_per_class; ++s, ++r) {
                auto row = ds.features.row(r);
                for (int d = 0; d < input_dim; ++d)
                    row[static_cast<std::size_t>(d)] =
                        m[static_cast<std::size_t>(d)] + noise(rng);
                ds.labels[r] = c;
            }
        }
        ds.rebuild_class_index();
        return ds;
    };

    BlobDataset out;
    out.train = make_raw_split(Split::train, 0x7261u);
    out.test = make_raw_split(Split::test, 0x7465u);

    // One affine map, fitted on the train split, squashes both splits into
    // [0,1]; separability is unaffected. Test tails may clamp.
    const auto [lo_it, hi_it] =
        std::minmax_element(out.train.features.data.begin(), out.train.features.data.end());
    const double lo = *lo_it;
    const double scale = 1.0 / std::max(*hi_it - lo, 1e-12);
    for (auto& v : out.train.features.data) v = (v - lo) * scale;
    for (auto& v : out.test.features.data) v = std::clamp((v - lo) * scale, 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Per-task input transforms
// ---------------------------------------------------------------------------

struct InputTransform {
    enum class Kind { identity, pixel_permutation, gaussian_noise };

    Kind kind = Kind::identity;
    std::vector<int> permutation;  // pixel_permutation only
    double noise_sigma = 0.0;      // gaussian_noise only
    std::uint64_t seed = 0;

    static InputTransform identity() { return {}; }

    static InputTransform pixel_permutation(std::size_t input_dim, std::uint64_t seed) {
        InputTransform t;
        t.kind = Kind::pixel_permutation;
        t.seed = seed;
        t.permutation.resize(input_dim);
        std::iota(t.permutation.begin(), t.permutation.end(), 0);
        Rng rng(seed);
        std::shuffle(t.permutation.begin(), t.permutation.end(), rng);
        return t;
    }

    static InputTransform gaussian_noise(double sigma, std::uint64_t seed) {
        if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
        InputTransform t;
        t.kind = Kind::gaussian_noise;
        t.noise_sigma = sigma;
        t.seed = seed;
        return t;
    }
};

/// Apply a transform to a matrix of input rows. Identity returns the input
/// unchanged; pixel_permutation reorders columns (out[:, j] = in[:, perm[j]]);
/// gaussian_noise adds seeded N(0, sigma^2) noise and clamps to [0,1].
inline Matrix apply_transform(const Matrix& rows, const InputTransform& t) {
    switch (t.kind) {
        case InputTransform::Kind::identity:
            return rows;
        case InputTransform::Kind::pixel_permutation: {
            if (t.permutation.size() != rows.cols)
                throw std::invalid_argument("apply_transform: permutation length " +
                                            std::to_string(t.permutation.size()) +
                                            " != row width " + std::to_string(rows.cols));
            Matrix out(rows.rows, rows.cols);
            for (std::size_t r = 0; r < rows.rows; ++r) {
                auto src = rows.row(r);
                auto dst = out.row(r);
                for (std::size_t j = 0; j < rows.cols; ++j)
                    dst[j] = src[static_cast<std::size_t>(t.permutation[j])];
            }
            return out;
        }
        case InputTransform::Kind::gaussian_noise: {
            Matrix out(rows.rows, rows.cols);
            Rng rng(t.seed);
            std::normal_distribution<double> noise(0.0, t.noise_sigma);
            for (std::size_t i = 0; i < rows.data.size(); ++i)
                out.data[i] = std::clamp(rows.data[i] + noise(rng), 0.0, 1.0);
            return out;
        }
    }
    throw std::logic_error("apply_transform: unknown transform kind");
}

}  // namespace clstream
