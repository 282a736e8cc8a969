#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrlab/tensor.hpp"

namespace attrlab {

struct Dataset {
    Tensor inputs;            // {N, n}, standardized per feature
    std::vector<int> labels;  // in [0, num_classes)
    std::string split;        // "train" or "val"

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.rank() == 2 ? inputs.cols() : 0; }
    Tensor row(std::size_t i) const;
};

struct DataSplit {
    Dataset train, val;
    std::size_t num_classes = 0;
};

// zero mean / unit variance per feature; constant features stay zero
void standardize(Tensor& inputs);

// IDX ingestion: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// u8 payload. Pixels scaled to [0,1] then standardized over the loaded subset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t limit);

// fixture writers for round-trip tests
void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& imgs,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Gaussian blobs at seeded random centers, standardized, 80/20 split by a
// seeded permutation.
DataSplit make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double spread,
                     std::uint64_t seed);

}  // namespace attrlab
