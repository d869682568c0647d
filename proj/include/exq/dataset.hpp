#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "exq/error.hpp"
#include "exq/exq_io.hpp"
#include "exq/rng.hpp"
#include "exq/tensor.hpp"

namespace exq {

struct Sample {
    Tensor input;
    int label;
};

struct EvalDataset {
    int num_classes = 0;
    std::vector<int64_t> input_shape;
    std::vector<Sample> calibration;
    std::vector<Sample> heldout;
};

namespace detail {

inline std::vector<Sample> split_from_files(const std::string& dir, const std::string& images,
                                            const std::string& labels,
                                            std::vector<int64_t>& input_shape, int num_classes) {
    Tensor imgs = load_tensor(dir + "/" + images);
    Tensor labs = load_tensor(dir + "/" + labels);
    if (imgs.shape.size() != 4) fail(errc::shape_mismatch, "images must be 4-D [n,c,h,w]");
    if (labs.shape.size() != 1 || labs.shape[0] != imgs.shape[0])
        fail(errc::shape_mismatch, "labels must be 1-D matching image count");
    int64_t n = imgs.shape[0];
    std::vector<int64_t> shape{imgs.shape[1], imgs.shape[2], imgs.shape[3]};
    if (input_shape.empty())
        input_shape = shape;
    else if (input_shape != shape)
        fail(errc::shape_mismatch, "split input shapes disagree");
    int64_t per = numel_of(shape);
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Sample s;
        s.input.shape = shape;
        s.input.data.assign(imgs.data.begin() + i * per, imgs.data.begin() + (i + 1) * per);
        double lv = static_cast<double>(labs.data[static_cast<size_t>(i)]);
        s.label = static_cast<int>(lv);
        if (lv != std::floor(lv) || s.label < 0 || s.label >= num_classes)
            fail(errc::malformed_header, "label " + std::to_string(lv) + " outside class range");
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace detail

inline EvalDataset load_dataset(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) fail(errc::io_error, "cannot open " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::malformed_header, std::string("dataset json: ") + e.what());
    }
    std::string dir = std::filesystem::path(json_path).parent_path().string();
    EvalDataset d;
    d.num_classes = j.at("classes").get<int>();
    d.calibration = detail::split_from_files(dir, j.at("calibration").at("images"),
                                             j.at("calibration").at("labels"), d.input_shape,
                                             d.num_classes);
    d.heldout = detail::split_from_files(dir, j.at("heldout").at("images"),
                                         j.at("heldout").at("labels"), d.input_shape,
                                         d.num_classes);
    return d;
}

/// Deterministic synthetic classification set: each class is a pair of Gaussian
/// bumps at fixed grid positions, rendered to [1,res,res] with jitter and noise.
/// Used once to build the bundled fixture; kept here so it can be regenerated.
inline EvalDataset make_blob_dataset(uint64_t seed, int num_classes, int res, int n_calibration,
                                     int n_heldout) {
    EvalDataset d;
    d.num_classes = num_classes;
    d.input_shape = {1, res, res};

    // well-separated class anchor positions on the grid
    std::vector<std::pair<double, double>> anchors;
    Rng anchor_rng(seed * 1000003ULL + 17ULL);
    int per_row = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
    for (int c = 0; c < num_classes; ++c) {
        double gx = (c % per_row + 0.5) * res / per_row;
        double gy = (c / per_row + 0.5) * res / per_row;
        anchors.emplace_back(gx, gy);
    }

    auto render = [&](Rng& rng, int cls) {
        Sample s;
        s.label = cls;
        s.input = zeros({1, res, res});
        auto [ax, ay] = anchors[static_cast<size_t>(cls)];
        double cx = ax + rng.uniform(-0.4, 0.4);
        double cy = ay + rng.uniform(-0.4, 0.4);
        double amp = 2.0 * rng.uniform(0.9, 1.1);
        double sigma = 1.15;
        // a second, weaker bump mirrored across the center disambiguates
        // classes whose anchors share a row or column
        double mx = res - 1 - ax, my = res - 1 - ay;
        double amp2 = 0.8 * rng.uniform(0.9, 1.1);
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                double d1 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma);
                double d2 = ((x - mx) * (x - mx) + (y - my) * (y - my)) / (2 * sigma * sigma);
                double v = amp * std::exp(-d1) + amp2 * std::exp(-d2) + rng.normal(0.0, 0.03);
                s.input.data[static_cast<size_t>(y * res + x)] = static_cast<float>(v);
            }
        }
        return s;
    };

    Rng rng_cal(seed);
    for (int i = 0; i < n_calibration; ++i) d.calibration.push_back(render(rng_cal, i % num_classes));
    Rng rng_held(seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < n_heldout; ++i) d.heldout.push_back(render(rng_held, i % num_classes));
    return d;
}

inline void save_dataset(const EvalDataset& d, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto dump = [&](const std::vector<Sample>& split, const std::string& stem) {
        int64_t n = static_cast<int64_t>(split.size());
        Tensor imgs = zeros({n, d.input_shape[0], d.input_shape[1], d.input_shape[2]});
        Tensor labs = zeros({n});
        int64_t per = numel_of(d.input_shape);
        for (int64_t i = 0; i < n; ++i) {
            const Sample& s = split[static_cast<size_t>(i)];
            std::copy(s.input.data.begin(), s.input.data.end(), imgs.data.begin() + i * per);
            labs.data[static_cast<size_t>(i)] = static_cast<float>(s.label);
        }
        save_tensor(imgs, dir + "/" + stem + "_images.npy");
        save_tensor(labs, dir + "/" + stem + "_labels.npy");
    };
    dump(d.calibration, "calibration");
    dump(d.heldout, "heldout");
    nlohmann::json j;
    j["classes"] = d.num_classes;
    j["calibration"] = {{"images", "calibration_images.npy"}, {"labels", "calibration_labels.npy"}};
    j["heldout"] = {{"images", "heldout_images.npy"}, {"labels", "heldout_labels.npy"}};
    std::ofstream out(dir + "/dataset.json", std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write dataset.json in " + dir);
    out << j.dump(2) << "\n";
}

} // namespace exq
