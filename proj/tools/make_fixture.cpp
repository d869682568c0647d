// Regenerates the bundled desk-scale fixture: a synthetic blob-classification
// dataset and a 2-conv + 2-fc network whose fully-connected head is trained
// once here, on features from fixed random convolutions. Everything is seeded,
// so the committed files are reproducible:
//
//   make_fixture <repo>/data

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "exq/exq.hpp"

using namespace exq;

namespace {

constexpr uint64_t kSeed = 20240817;
constexpr int kClasses = 10;
constexpr int kRes = 8;
constexpr int kCalibration = 512;
constexpr int kHeldout = 256;
constexpr int kFeatures = 8 * 4 * 4; // conv stack output
constexpr int kHidden = 32;

Tensor he_conv(Rng& rng, int cout, int cin, int k) {
    double std = std::sqrt(2.0 / (cin * k * k));
    Tensor w = zeros({cout, cin, k, k});
    for (float& v : w.data) v = static_cast<float>(rng.normal(0.0, std));
    return w;
}

ModelGraph feature_stack(Rng& rng) {
    ModelGraph m;
    m.input_shape = {1, kRes, kRes};
    Layer c1;
    c1.kind = LayerKind::conv;
    c1.name = "conv1";
    c1.cin = 1;
    c1.cout = 8;
    c1.kh = c1.kw = 3;
    c1.stride = 1;
    c1.pad = 1;
    c1.weights = he_conv(rng, 8, 1, 3);
    Layer relu;
    relu.kind = LayerKind::relu;
    Layer c2;
    c2.kind = LayerKind::conv;
    c2.name = "conv2";
    c2.cin = 8;
    c2.cout = 8;
    c2.kh = c2.kw = 3;
    c2.stride = 2;
    c2.pad = 1;
    c2.weights = he_conv(rng, 8, 8, 3);
    Layer flat;
    flat.kind = LayerKind::flatten;
    m.layers = {c1, relu, c2, relu, flat};
    return m;
}

struct Head {
    std::vector<double> w1, b1, w2, b2; // fc1 [kHidden x kFeatures], fc2 [kClasses x kHidden]
};

// plain softmax cross-entropy SGD with momentum over the frozen conv features
Head train_head(const std::vector<Tensor>& feats, const std::vector<int>& labels, Rng& rng) {
    Head h;
    h.w1.resize(kHidden * kFeatures);
    h.b1.assign(kHidden, 0.0);
    h.w2.resize(kClasses * kHidden);
    h.b2.assign(kClasses, 0.0);
    double s1 = std::sqrt(2.0 / kFeatures), s2 = std::sqrt(2.0 / kHidden);
    for (double& v : h.w1) v = rng.normal(0.0, s1);
    for (double& v : h.w2) v = rng.normal(0.0, s2);

    std::vector<double> vw1(h.w1.size(), 0.0), vb1(kHidden, 0.0);
    std::vector<double> vw2(h.w2.size(), 0.0), vb2(kClasses, 0.0);
    const double lr = 0.05, momentum = 0.9;
    const int epochs = 200;
    const size_t n = feats.size();

    std::vector<double> z1(kHidden), a1(kHidden), z2(kClasses), p(kClasses);
    std::vector<double> gw1(h.w1.size()), gb1(kHidden), gw2(h.w2.size()), gb2(kClasses);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::fill(gw1.begin(), gw1.end(), 0.0);
        std::fill(gb1.begin(), gb1.end(), 0.0);
        std::fill(gw2.begin(), gw2.end(), 0.0);
        std::fill(gb2.begin(), gb2.end(), 0.0);
        double loss = 0.0;
        int correct = 0;
        for (size_t s = 0; s < n; ++s) {
            const std::vector<float>& f = feats[s].data;
            for (int i = 0; i < kHidden; ++i) {
                double acc = h.b1[static_cast<size_t>(i)];
                const double* wr = h.w1.data() + static_cast<size_t>(i) * kFeatures;
                for (int k = 0; k < kFeatures; ++k) acc += wr[k] * f[static_cast<size_t>(k)];
                z1[static_cast<size_t>(i)] = acc;
                a1[static_cast<size_t>(i)] = acc > 0 ? acc : 0.0;
            }
            double zmax = -1e300;
            for (int o = 0; o < kClasses; ++o) {
                double acc = h.b2[static_cast<size_t>(o)];
                const double* wr = h.w2.data() + static_cast<size_t>(o) * kHidden;
                for (int k = 0; k < kHidden; ++k) acc += wr[k] * a1[static_cast<size_t>(k)];
                z2[static_cast<size_t>(o)] = acc;
                if (acc > zmax) zmax = acc;
            }
            double zsum = 0.0;
            int argmax = 0;
            for (int o = 0; o < kClasses; ++o) {
                p[static_cast<size_t>(o)] = std::exp(z2[static_cast<size_t>(o)] - zmax);
                zsum += p[static_cast<size_t>(o)];
                if (z2[static_cast<size_t>(o)] > z2[static_cast<size_t>(argmax)]) argmax = o;
            }
            int y = labels[s];
            loss -= std::log(p[static_cast<size_t>(y)] / zsum);
            if (argmax == y) ++correct;
            for (int o = 0; o < kClasses; ++o) {
                double d = p[static_cast<size_t>(o)] / zsum - (o == y ? 1.0 : 0.0);
                gb2[static_cast<size_t>(o)] += d;
                double* gw = gw2.data() + static_cast<size_t>(o) * kHidden;
                for (int k = 0; k < kHidden; ++k) gw[k] += d * a1[static_cast<size_t>(k)];
            }
            for (int i = 0; i < kHidden; ++i) {
                if (z1[static_cast<size_t>(i)] <= 0) continue;
                double d = 0.0;
                for (int o = 0; o < kClasses; ++o)
                    d += (p[static_cast<size_t>(o)] / zsum - (o == y ? 1.0 : 0.0)) *
                         h.w2[static_cast<size_t>(o) * kHidden + static_cast<size_t>(i)];
                gb1[static_cast<size_t>(i)] += d;
                double* gw = gw1.data() + static_cast<size_t>(i) * kFeatures;
                for (int k = 0; k < kFeatures; ++k) gw[k] += d * f[static_cast<size_t>(k)];
            }
        }
        auto step = [&](std::vector<double>& w, std::vector<double>& v,
                        const std::vector<double>& g) {
            for (size_t i = 0; i < w.size(); ++i) {
                v[i] = momentum * v[i] - lr * g[i] / static_cast<double>(n);
                w[i] += v[i];
            }
        };
        step(h.w1, vw1, gw1);
        step(h.b1, vb1, gb1);
        step(h.w2, vw2, gw2);
        step(h.b2, vb2, gb2);
        if (epoch % 50 == 0 || epoch == epochs - 1)
            std::printf("epoch %3d  loss %.4f  train acc %.4f\n", epoch,
                        loss / static_cast<double>(n),
                        static_cast<double>(correct) / static_cast<double>(n));
    }
    return h;
}

Tensor to_f32(const std::vector<double>& v, std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.reserve(v.size());
    for (double x : v) t.data.push_back(static_cast<float>(x));
    return t;
}

} // namespace

int main(int argc, char** argv) {
    std::string out = argc > 1 ? argv[1] : "data";
    namespace fs = std::filesystem;
    fs::create_directories(out + "/dataset");
    fs::create_directories(out + "/model");

    EvalDataset ds = make_blob_dataset(kSeed, kClasses, kRes, kCalibration, kHeldout);
    save_dataset(ds, out + "/dataset");
    std::printf("dataset: %d calibration, %d heldout\n", kCalibration, kHeldout);

    Rng rng(kSeed ^ 0xabcdefULL);
    ModelGraph convs = feature_stack(rng);

    std::vector<Tensor> feats;
    std::vector<int> labels;
    feats.reserve(ds.calibration.size());
    for (const Sample& s : ds.calibration) {
        feats.push_back(forward_f32(convs, s.input));
        labels.push_back(s.label);
    }
    Head head = train_head(feats, labels, rng);

    // assemble the full network and persist it
    ModelGraph full = convs;
    Layer fc1;
    fc1.kind = LayerKind::fc;
    fc1.name = "fc1";
    fc1.in = kFeatures;
    fc1.out = kHidden;
    fc1.weights = to_f32(head.w1, {kHidden, kFeatures});
    fc1.bias = to_f32(head.b1, {kHidden});
    Layer relu;
    relu.kind = LayerKind::relu;
    Layer fc2;
    fc2.kind = LayerKind::fc;
    fc2.name = "fc2";
    fc2.in = kHidden;
    fc2.out = kClasses;
    fc2.weights = to_f32(head.w2, {kClasses, kHidden});
    fc2.bias = to_f32(head.b2, {kClasses});
    Layer argmax;
    argmax.kind = LayerKind::argmax;
    full.layers.push_back(fc1);
    full.layers.push_back(relu);
    full.layers.push_back(fc2);
    full.layers.push_back(argmax);

    std::string mdir = out + "/model";
    save_tensor(full.layers[0].weights, mdir + "/conv1_w.npy");
    save_tensor(full.layers[2].weights, mdir + "/conv2_w.npy");
    save_tensor(fc1.weights, mdir + "/fc1_w.npy");
    save_tensor(fc1.bias, mdir + "/fc1_b.npy");
    save_tensor(fc2.weights, mdir + "/fc2_w.npy");
    save_tensor(fc2.bias, mdir + "/fc2_b.npy");
    {
        std::ofstream js(mdir + "/model.json", std::ios::trunc);
        js << R"({
  "name": "blobnet",
  "input_shape": [1, 8, 8],
  "layers": [
    {"kind": "conv", "name": "conv1", "kh": 3, "kw": 3, "cin": 1, "cout": 8,
     "stride": 1, "pad": 1, "weights": "conv1_w.npy"},
    {"kind": "relu"},
    {"kind": "conv", "name": "conv2", "kh": 3, "kw": 3, "cin": 8, "cout": 8,
     "stride": 2, "pad": 1, "weights": "conv2_w.npy"},
    {"kind": "relu"},
    {"kind": "flatten"},
    {"kind": "fc", "name": "fc1", "in": 128, "out": 32,
     "weights": "fc1_w.npy", "bias": "fc1_b.npy"},
    {"kind": "relu"},
    {"kind": "fc", "name": "fc2", "in": 32, "out": 10,
     "weights": "fc2_w.npy", "bias": "fc2_b.npy"},
    {"kind": "argmax"}
  ]
}
)";
    }

    ModelGraph reloaded = load_model(mdir + "/model.json");
    double cal = evaluate_accuracy_f32(reloaded, ds.calibration, 2);
    double held = evaluate_accuracy_f32(reloaded, ds.heldout, 2);
    std::printf("f32 accuracy: calibration %.4f, heldout %.4f\n", cal, held);
    return held > 0.95 ? 0 : 1;
}
