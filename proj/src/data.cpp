#include "attrlab/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "attrlab/rng.hpp"

namespace attrlab {

Tensor Dataset::row(std::size_t i) const {
    const std::size_t n = inputs.cols();
    Tensor out = Tensor::zeros({n});
    for (std::size_t j = 0; j < n; ++j) out.data[j] = inputs.at(i, j);
    return out;
}

void standardize(Tensor& inputs) {
    if (inputs.rank() != 2) throw std::invalid_argument("standardize: {N,n} tensor expected");
    const std::size_t N = inputs.rows(), n = inputs.cols();
    if (N == 0) return;
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < N; ++i) mean += inputs.at(i, j);
        mean /= double(N);
        double var = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const double d = inputs.at(i, j) - mean;
            var += d * d;
        }
        var /= double(N);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < N; ++i)
            inputs.at(i, j) = sd > 0 ? (inputs.at(i, j) - mean) / sd : 0.0;
    }
}

namespace {

std::uint32_t read_be32(std::ifstream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx: truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t limit) {
    std::ifstream li(labels_path, std::ios::binary);
    if (!li) throw std::runtime_error("idx: cannot open " + labels_path);
    if (read_be32(li, labels_path) != 0x00000801u)
        throw std::runtime_error("idx: bad labels magic in " + labels_path);
    const std::uint32_t n_labels = read_be32(li, labels_path);

    std::ifstream ii(images_path, std::ios::binary);
    if (!ii) throw std::runtime_error("idx: cannot open " + images_path);
    if (read_be32(ii, images_path) != 0x00000803u)
        throw std::runtime_error("idx: bad images magic in " + images_path);
    const std::uint32_t n_images = read_be32(ii, images_path);
    const std::uint32_t rows = read_be32(ii, images_path);
    const std::uint32_t cols = read_be32(ii, images_path);

    if (n_labels != n_images)
        throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(n_images) +
                                 " vs " + std::to_string(n_labels) + ")");
    const std::size_t count = std::min<std::size_t>(limit, n_images);
    const std::size_t pix = std::size_t(rows) * cols;

    Dataset ds;
    ds.split = "train";
    ds.inputs = Tensor::zeros({count, pix});
    ds.labels.resize(count);
    std::vector<unsigned char> buf(pix);
    for (std::size_t i = 0; i < count; ++i) {
        if (!ii.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pix)))
            throw std::runtime_error("idx: truncated image payload in " + images_path);
        for (std::size_t j = 0; j < pix; ++j) ds.inputs.at(i, j) = double(buf[j]) / 255.0;
        unsigned char lb;
        if (!li.read(reinterpret_cast<char*>(&lb), 1))
            throw std::runtime_error("idx: truncated label payload in " + labels_path);
        ds.labels[i] = int(lb);
    }
    standardize(ds.inputs);
    return ds;
}

void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& imgs,
                      std::uint32_t rows, std::uint32_t cols) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("idx: cannot open " + path);
    write_be32(os, 0x00000803u);
    write_be32(os, std::uint32_t(imgs.size()));
    write_be32(os, rows);
    write_be32(os, cols);
    for (const auto& img : imgs) {
        if (img.size() != std::size_t(rows) * cols)
            throw std::invalid_argument("idx: image size mismatch");
        os.write(reinterpret_cast<const char*>(img.data()), std::streamsize(img.size()));
    }
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("idx: cannot open " + path);
    write_be32(os, 0x00000801u);
    write_be32(os, std::uint32_t(labels.size()));
    os.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

DataSplit make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double spread,
                     std::uint64_t seed) {
    if (n_per_class == 0 || classes == 0 || dim == 0 || spread < 0)
        throw std::invalid_argument("make_blobs: all arguments must be positive");
    Rng rng(Rng::derive(seed, 0xb10b));
    std::vector<Tensor> centers;
    centers.reserve(classes);
    for (std::size_t c = 0; c < classes; ++c) centers.push_back(rng.normal_tensor({dim}, 2.0));

    const std::size_t N = n_per_class * classes;
    Tensor all = Tensor::zeros({N, dim});
    std::vector<int> labels(N);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t k = 0; k < n_per_class; ++k) {
            const std::size_t i = c * n_per_class + k;
            labels[i] = int(c);
            for (std::size_t j = 0; j < dim; ++j)
                all.at(i, j) = centers[c].data[j] + spread * rng.normal();
        }
    standardize(all);

    // seeded permutation, 80/20 split
    std::vector<std::size_t> perm(N);
    for (std::size_t i = 0; i < N; ++i) perm[i] = i;
    for (std::size_t i = N; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    const std::size_t n_train = (N * 8) / 10;

    DataSplit split;
    split.num_classes = classes;
    split.train.split = "train";
    split.train.inputs = Tensor::zeros({n_train, dim});
    split.train.labels.resize(n_train);
    split.val.split = "val";
    split.val.inputs = Tensor::zeros({N - n_train, dim});
    split.val.labels.resize(N - n_train);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t src = perm[i];
        if (i < n_train) {
            for (std::size_t j = 0; j < dim; ++j) split.train.inputs.at(i, j) = all.at(src, j);
            split.train.labels[i] = labels[src];
        } else {
            const std::size_t k = i - n_train;
            for (std::size_t j = 0; j < dim; ++j) split.val.inputs.at(k, j) = all.at(src, j);
            split.val.labels[k] = labels[src];
        }
    }
    return split;
}

}  // namespace attrlab
