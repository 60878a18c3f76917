#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvr/io.hpp"
#include "rvr/objective.hpp"
#include "rvr/rng.hpp"

namespace rvr {

struct IdxBadMagic : IoError {
    using IoError::IoError;
};
struct IdxTruncated : IoError {
    using IoError::IoError;
};
struct IdxCountMismatch : IoError {
    using IoError::IoError;
};

struct MnistData {
    std::size_t count = 0;
    std::vector<unsigned char> pixels;  // count * 784, row-major 28x28
    std::vector<int> labels;            // digits 0-9
};

namespace detail {

inline std::uint32_t be32(const std::string& s, std::size_t off) {
    return (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) << 24) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 8) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3]));
}

}  // namespace detail

inline MnistData load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::string img = read_file(images_path);
    std::string lab = read_file(labels_path);
    if (img.size() < 16) throw IdxTruncated("image file header truncated: " + images_path);
    if (lab.size() < 8) throw IdxTruncated("label file header truncated: " + labels_path);
    if (detail::be32(img, 0) != 0x00000803u)
        throw IdxBadMagic("bad image magic in " + images_path);
    if (detail::be32(lab, 0) != 0x00000801u)
        throw IdxBadMagic("bad label magic in " + labels_path);
    std::uint32_t n_img = detail::be32(img, 4);
    std::uint32_t rows = detail::be32(img, 8);
    std::uint32_t cols = detail::be32(img, 12);
    std::uint32_t n_lab = detail::be32(lab, 4);
    if (rows != 28 || cols != 28)
        throw IdxBadMagic("unexpected image dims " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    if (n_img != n_lab)
        throw IdxCountMismatch("image count " + std::to_string(n_img) + " != label count " +
                               std::to_string(n_lab));
    std::size_t want_img = 16 + static_cast<std::size_t>(n_img) * 784;
    std::size_t want_lab = 8 + static_cast<std::size_t>(n_lab);
    if (img.size() < want_img)
        throw IdxTruncated("image payload truncated: expected " + std::to_string(want_img) +
                           " bytes, got " + std::to_string(img.size()));
    if (lab.size() < want_lab)
        throw IdxTruncated("label payload truncated: expected " + std::to_string(want_lab) +
                           " bytes, got " + std::to_string(lab.size()));
    MnistData out;
    out.count = n_img;
    out.pixels.assign(img.begin() + 16, img.begin() + static_cast<std::ptrdiff_t>(want_img));
    out.labels.reserve(n_lab);
    for (std::size_t i = 0; i < n_lab; ++i)
        out.labels.push_back(static_cast<unsigned char>(lab[8 + i]));
    return out;
}

// RGB channel mask per color name.
inline std::array<bool, 3> color_mask(const std::string& name) {
    if (name == "red") return {true, false, false};
    if (name == "green") return {false, true, false};
    if (name == "blue") return {false, false, true};
    if (name == "yellow") return {true, true, false};
    if (name == "purple") return {true, false, true};
    if (name == "white") return {true, true, true};
    throw std::invalid_argument("unknown color name: " + name);
}

struct ColorSetting {
    // label (0/1) -> list of (color name, probability); probabilities sum to 1
    std::map<int, std::vector<std::pair<std::string, double>>> color_given_label;
    double shape_correlation = 1.0;  // A%: label flip probability is 1 - A%

    void validate() const {
        for (const auto& [label, cs] : color_given_label) {
            double s = 0.0;
            for (const auto& [name, p] : cs) {
                color_mask(name);  // throws on unknown name
                if (p < 0.0) throw std::invalid_argument("negative color probability");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw std::invalid_argument("color probabilities for label " +
                                            std::to_string(label) + " must sum to 1");
        }
        if (shape_correlation < 0.0 || shape_correlation > 1.0)
            throw std::invalid_argument("shape correlation must be in [0,1]");
    }
};

// Binary label from digit (0-4 -> 0, 5-9 -> 1) flipped w.p. 1-A%; grayscale
// copied into the masked RGB channels; output flattened to 3*784 in [0,1].
inline DomainDataset colorize(const MnistData& data, const ColorSetting& setting, Rng& rng,
                              int domain_id = 0) {
    setting.validate();
    DomainDataset out;
    out.domain_id = domain_id;
    out.xs = Matrix(data.count, 3 * 784);
    out.ys.resize(data.count);
    for (std::size_t i = 0; i < data.count; ++i) {
        int label = data.labels[i] >= 5 ? 1 : 0;
        if (rng.bernoulli(1.0 - setting.shape_correlation)) label = 1 - label;
        out.ys[i] = label;
        auto it = setting.color_given_label.find(label);
        if (it == setting.color_given_label.end())
            throw std::invalid_argument("no color entry for label " + std::to_string(label));
        double u = rng.uniform();
        double acc = 0.0;
        std::string color = it->second.back().first;
        for (const auto& [name, p] : it->second) {
            acc += p;
            if (u < acc) {
                color = name;
                break;
            }
        }
        std::array<bool, 3> mask = color_mask(color);
        double* row = out.xs.row(i);
        for (std::size_t px = 0; px < 784; ++px) {
            double g = data.pixels[i * 784 + px] / 255.0;
            for (int ch = 0; ch < 3; ++ch) row[ch * 784 + px] = mask[ch] ? g : 0.0;
        }
    }
    return out;
}

}  // namespace rvr
