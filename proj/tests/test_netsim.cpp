#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "exq/dataset.hpp"
#include "exq/engine.hpp"
#include "exq/model.hpp"
#include "testutil.hpp"

using namespace exq;

namespace {

Layer make_fc(const std::string& name, int64_t in, int64_t out, const std::vector<float>& w,
              const std::vector<float>& b = {}) {
    Layer l;
    l.kind = LayerKind::fc;
    l.name = name;
    l.in = in;
    l.out = out;
    l.weights = Tensor({out, in}, w);
    if (!b.empty()) l.bias = Tensor({out}, b);
    return l;
}

Layer make_conv(const std::string& name, int cin, int cout, int k, int stride, int pad,
                uint64_t seed) {
    Layer l;
    l.kind = LayerKind::conv;
    l.name = name;
    l.cin = cin;
    l.cout = cout;
    l.kh = l.kw = k;
    l.stride = stride;
    l.pad = pad;
    Rng rng(seed);
    std::vector<float> w;
    for (int i = 0; i < cout * cin * k * k; ++i)
        w.push_back(static_cast<float>(rng.normal(0.0, 0.5)));
    l.weights = Tensor({cout, cin, k, k}, w);
    return l;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool close_rel(float got, float want, double tol) {
    return std::fabs(static_cast<double>(got) - want) <= tol * (1.0 + std::fabs(want));
}

} // namespace

TEST_CASE("identity fc passes the input through") {
    ModelGraph m;
    m.input_shape = {3};
    std::vector<float> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    m.layers.push_back(make_fc("fc", 3, 3, eye, {0, 0, 0}));
    Tensor out = forward_f32(m, Tensor({3}, {4.0f, -2.5f, 7.0f}));
    CHECK(out.data == std::vector<float>{4.0f, -2.5f, 7.0f});
}

TEST_CASE("relu clamps negatives") {
    ModelGraph m;
    m.input_shape = {2};
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    Tensor out = forward_f32(m, Tensor({2}, {-1.0f, 2.0f}));
    CHECK(out.data == std::vector<float>{0.0f, 2.0f});
}

TEST_CASE("1x1 conv equals fc on the flattened input") {
    int cin = 5, cout = 3;
    Layer conv = make_conv("c", cin, cout, 1, 1, 0, 12);
    Layer fc = make_fc("f", cin, cout, conv.weights.data);

    Tensor x3 = zeros({cin, 1, 1});
    Rng rng(13);
    for (float& v : x3.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    Tensor x1({cin}, x3.data);

    ModelGraph mc;
    mc.input_shape = {cin, 1, 1};
    mc.layers.push_back(conv);
    ModelGraph mf;
    mf.input_shape = {cin};
    mf.layers.push_back(fc);

    Tensor yc = forward_f32(mc, x3);
    Tensor yf = forward_f32(mf, x1);
    REQUIRE(yc.numel() == yf.numel());
    for (int i = 0; i < cout; ++i)
        CHECK(yc.data[static_cast<size_t>(i)] ==
              doctest::Approx(yf.data[static_cast<size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("conv lowering equals direct convolution") {
    for (auto [stride, pad, seed] : {std::tuple{1, 1, 21ull}, {2, 0, 22ull}, {2, 1, 23ull}}) {
        Layer conv = make_conv("c", 2, 3, 3, stride, pad, seed);
        Tensor x = zeros({2, 6, 6});
        Rng rng(seed + 5);
        for (float& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        Tensor direct = detail::conv_f32(conv, x);
        Tensor lowered = conv_via_matmul_f32(conv, x);
        REQUIRE(direct.shape == lowered.shape);
        for (size_t i = 0; i < direct.data.size(); ++i)
            CHECK(close_rel(lowered.data[i], direct.data[i], 1e-5));
    }
}

TEST_CASE("captures record the inputs of quantizable layers") {
    ModelGraph m;
    m.input_shape = {2};
    m.layers.push_back(make_fc("fc1", 2, 2, {1, 1, 1, -1}));
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    m.layers.push_back(make_fc("fc2", 2, 1, {1, 2}));

    std::map<std::string, Tensor> caps;
    Tensor x({2}, {3.0f, 1.0f});
    forward_f32(m, x, &caps);
    REQUIRE(caps.size() == 2);
    CHECK(caps.at("fc1").data == x.data);
    CHECK(caps.at("fc2").data == std::vector<float>{4.0f, 2.0f}); // relu(3+1, 3-1)
}

TEST_CASE("zero input stays zero through a linear-relu stack") {
    ModelGraph m;
    m.input_shape = {4};
    m.layers.push_back(make_fc("fc1", 4, 4, std::vector<float>(16, 0.7f)));
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    m.layers.push_back(make_fc("fc2", 4, 2, std::vector<float>(8, -0.3f)));
    Tensor out = forward_f32(m, zeros({4}));
    for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("quantized forward at 7 bits tracks the float32 reference") {
    // positive ranges keep the dot products cancellation-free, which is what
    // the near-zero-error premise of this sanity run needs
    ModelGraph m;
    m.input_shape = {16};
    Rng rng(31);
    std::vector<float> w1, w2;
    for (int i = 0; i < 16 * 8; ++i) w1.push_back(static_cast<float>(rng.uniform(0.5, 2.0)));
    for (int i = 0; i < 8 * 4; ++i) w2.push_back(static_cast<float>(rng.uniform(0.5, 2.0)));
    m.layers.push_back(make_fc("fc1", 16, 8, w1));
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    m.layers.push_back(make_fc("fc2", 8, 4, w2));

    Tensor x = zeros({16});
    for (float& v : x.data) v = static_cast<float>(rng.uniform(2.0, 4.0));

    // per-layer parameters at n=7 from the real search machinery
    SearchConfig cfg;
    cfg.n_min = cfg.n_max = 7;
    std::map<std::string, Tensor> caps;
    Tensor ref = forward_f32(m, x, &caps);
    std::vector<LayerQuantResult> results;
    for (const char* name : {"fc1", "fc2"}) {
        const Layer* l = nullptr;
        for (const Layer& cand : m.layers)
            if (cand.name == name) l = &cand;
        double inf = std::numeric_limits<double>::infinity();
        LayerQuantResult r = search_layer(caps.at(name), l->weights, inf, inf, cfg);
        r.layer = name;
        results.push_back(r);
        CHECK(r.act.rmae < 0.01);
        CHECK(r.weights.rmae < 0.01);
    }
    QuantizedModelState st = prepare_quantized(m, results);
    Tensor got = forward_quantized(m, x, st);
    REQUIRE(got.shape == ref.shape);
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(close_rel(got.data[i], ref.data[i], 0.01));
}

TEST_CASE("exactly representable data reproduces f32 within 1e-3 on a linear layer") {
    // weights and inputs drawn from the codec grid itself, n=7
    QuantParams pa{1.05, 7, 0.02, 0.0};
    QuantParams pw{1.05, 7, 0.013, 0.0};
    Rng rng(41);
    int64_t in = 32, out = 8;
    Tensor x = zeros({in});
    for (float& v : x.data) {
        int e = static_cast<int>(rng.below(127)) - 63;
        v = static_cast<float>(dequantize_value(make_code(rng.uniform() < 0.3, e, 7), pa));
    }
    Tensor w = zeros({out, in});
    for (float& v : w.data) {
        int e = static_cast<int>(rng.below(127)) - 63;
        v = static_cast<float>(dequantize_value(make_code(rng.uniform() < 0.5, e, 7), pw));
    }
    ModelGraph m;
    m.input_shape = {in};
    Layer fc;
    fc.kind = LayerKind::fc;
    fc.name = "fc";
    fc.in = in;
    fc.out = out;
    fc.weights = w;
    m.layers.push_back(fc);

    LayerQuantResult r;
    r.layer = "fc";
    r.base = 1.05;
    r.bitwidth = 7;
    r.act = {pa.alpha, pa.beta, 0.0, 0};
    r.weights = {pw.alpha, pw.beta, 0.0, 0};
    QuantizedModelState st = prepare_quantized(m, {r});
    Tensor ref = forward_f32(m, x);
    Tensor got = forward_quantized(m, x, st);
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(close_rel(got.data[i], ref.data[i], 1e-3));
}

TEST_CASE("saturating activation parameters degenerate deterministically") {
    // inputs far below the smallest representable magnitude all clip to R_min
    ModelGraph m;
    m.input_shape = {4};
    m.layers.push_back(make_fc("fc", 4, 2, {1.5f, -2.0f, 0.5f, 3.0f, -1.0f, 1.0f, 2.5f, -0.5f}));

    LayerQuantResult r;
    r.layer = "fc";
    r.base = 2.0;
    r.bitwidth = 3;
    r.act = {1.0, 0.0, 0.0, 0};     // alpha=1, beta=0
    r.weights = {1.0, 0.0, 0.0, 0}; // weights land on powers of two
    QuantizedModelState st = prepare_quantized(m, {r});

    Tensor x({4}, {1e-4f, -2e-4f, 3e-4f, 5e-5f});
    Tensor got = forward_quantized(m, x, st);

    // closed form: every nonzero input dequantizes to sign * (alpha*b^Rmin) = sign/8
    QuantParams pw = r.weight_params();
    double a_sat = 1.0 / 8.0;
    for (int64_t o = 0; o < 2; ++o) {
        double expect = 0.0;
        for (int64_t k = 0; k < 4; ++k) {
            double wq = dequantize_value(
                quantize_value(m.layers[0].weights.data[static_cast<size_t>(o * 4 + k)], pw), pw);
            double sign = x.data[static_cast<size_t>(k)] < 0 ? -1.0 : 1.0;
            expect += sign * a_sat * wq;
        }
        CHECK(got.data[static_cast<size_t>(o)] == doctest::Approx(expect).epsilon(1e-6));
    }
    // byte-for-byte repeatable
    Tensor again = forward_quantized(m, x, st);
    CHECK(std::memcmp(got.data.data(), again.data.data(), got.data.size() * 4) == 0);
}

TEST_CASE("missing layer parameters are rejected") {
    ModelGraph m;
    m.input_shape = {2};
    m.layers.push_back(make_fc("fc", 2, 2, {1, 0, 0, 1}));
    try {
        prepare_quantized(m, {});
        FAIL("expected MissingParams");
    } catch (const Error& e) {
        CHECK(e.code() == errc::missing_params);
    }
}

TEST_CASE("accuracy over trivial fixtures") {
    ModelGraph m;
    m.input_shape = {2};
    m.layers.push_back(make_fc("fc", 2, 2, {1, 0, 0, 1}));
    Layer am;
    am.kind = LayerKind::argmax;
    m.layers.push_back(am);

    std::vector<Sample> right = {{Tensor({2}, {0.1f, 0.9f}), 1}};
    CHECK(evaluate_accuracy_f32(m, right) == 1.0);
    std::vector<Sample> wrong = {{Tensor({2}, {0.1f, 0.9f}), 0}};
    CHECK(evaluate_accuracy_f32(m, wrong) == 0.0);
    try {
        evaluate_accuracy_f32(m, {});
        FAIL("expected EmptySplit");
    } catch (const Error& e) {
        CHECK(e.code() == errc::empty_split);
    }
}

TEST_CASE("parallel evaluation matches serial") {
    EvalDataset d = make_blob_dataset(7, 10, 8, 64, 0);
    ModelGraph m;
    m.input_shape = {1, 8, 8};
    m.layers.push_back(make_conv("c1", 1, 4, 3, 2, 1, 3));
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    Layer flat;
    flat.kind = LayerKind::flatten;
    m.layers.push_back(flat);
    m.layers.push_back(make_fc("fc", 64, 10, [] {
                            Rng rng(5);
                            std::vector<float> w;
                            for (int i = 0; i < 640; ++i)
                                w.push_back(static_cast<float>(rng.normal(0.0, 0.3)));
                            return w;
                        }()));
    double serial = evaluate_accuracy_f32(m, d.calibration, 1);
    double parallel = evaluate_accuracy_f32(m, d.calibration, 4);
    CHECK(serial == parallel);
}

TEST_CASE("trace capture writes the documented layout and is idempotent") {
    ModelGraph m;
    m.input_shape = {4};
    m.layers.push_back(make_fc("fc1", 4, 3, std::vector<float>(12, 0.5f)));
    Layer relu;
    relu.kind = LayerKind::relu;
    m.layers.push_back(relu);
    m.layers.push_back(make_fc("fc2", 3, 2, std::vector<float>(6, -0.25f)));

    std::vector<Sample> samples;
    for (int i = 0; i < 4; ++i) {
        Tensor x = test::random_tensor(static_cast<uint64_t>(i + 50), 4, -1.0, 1.0);
        samples.push_back({x, 0});
    }

    test::TempDir dir("traces");
    TraceManifest manifest = capture_traces(m, samples, dir.str());
    REQUIRE(manifest.layers.size() == 2);
    int weight_files = 0, act_files = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.str())) {
        if (!entry.is_regular_file()) continue;
        std::string f = entry.path().filename().string();
        if (f == "weights.npy") ++weight_files;
        if (f.rfind("act_", 0) == 0) ++act_files;
    }
    CHECK(weight_files == 2);
    CHECK(act_files == 8);
    CHECK(std::filesystem::exists(dir.path() / "manifest.json"));

    // byte-identical on re-capture
    std::map<std::string, std::string> before;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.str()))
        if (entry.is_regular_file()) before[entry.path().string()] = slurp(entry.path().string());
    capture_traces(m, samples, dir.str());
    for (const auto& [path, bytes] : before) CHECK(slurp(path) == bytes);

    // pooled calibration picks everything back up
    std::vector<LayerCalibration> cal = build_calibration(dir.str());
    REQUIRE(cal.size() == 2);
    CHECK(cal[0].name == "fc1");
    CHECK(cal[0].acts.numel() == 16); // 4 samples x 4 inputs
    CHECK(cal[0].weight_count == 12);
    CHECK(cal[1].acts.numel() == 12);

    try {
        capture_traces(m, {}, dir.str());
        FAIL("expected EmptySplit");
    } catch (const Error& e) {
        CHECK(e.code() == errc::empty_split);
    }
}

TEST_CASE("conv activations gain a unit batch dimension on disk") {
    ModelGraph m;
    m.input_shape = {2, 4, 4};
    m.layers.push_back(make_conv("c1", 2, 3, 3, 1, 1, 61));
    std::vector<Sample> samples = {{[&] {
                                        Tensor x = zeros({2, 4, 4});
                                        Rng rng(62);
                                        for (float& v : x.data)
                                            v = static_cast<float>(rng.uniform(-1.0, 1.0));
                                        return x;
                                    }(),
                                    0}};
    test::TempDir dir("convtrace");
    capture_traces(m, samples, dir.str());
    Tensor act = load_tensor(dir.str() + "/c1/act_0000.npy");
    CHECK(act.shape == std::vector<int64_t>{1, 2, 4, 4});
}

TEST_CASE("model json round-trips through the loader") {
    test::TempDir dir("model");
    Tensor w({3, 2}, {0.5f, -1.0f, 2.0f, 0.25f, -0.75f, 1.5f});
    Tensor b({3}, {0.1f, -0.2f, 0.3f});
    save_tensor(w, dir.str() + "/fc_w.npy");
    save_tensor(b, dir.str() + "/fc_b.npy");
    {
        std::ofstream out(dir.str() + "/model.json");
        out << R"({"name":"tiny","input_shape":[2],
                   "layers":[{"kind":"fc","name":"fc","in":2,"out":3,
                              "weights":"fc_w.npy","bias":"fc_b.npy"},
                             {"kind":"relu"},{"kind":"argmax"}]})";
    }
    ModelGraph m = load_model(dir.str() + "/model.json");
    REQUIRE(m.layers.size() == 3);
    CHECK(m.layers[0].weights.data == w.data);
    CHECK(m.layers[0].bias.data == b.data);
    Tensor out = forward_f32(m, Tensor({2}, {1.0f, 1.0f}));
    // logits: (-0.5+0.1, 2.25-0.2, 0.75+0.3) -> argmax 1
    CHECK(out.data[0] == 1.0f);
}

TEST_CASE("blob dataset is deterministic and splits load back") {
    EvalDataset d = make_blob_dataset(123, 10, 8, 40, 20);
    EvalDataset d2 = make_blob_dataset(123, 10, 8, 40, 20);
    CHECK(d.calibration[0].input.data == d2.calibration[0].input.data);
    CHECK(d.heldout[7].input.data == d2.heldout[7].input.data);
    CHECK(d.calibration.size() == 40);
    CHECK(d.heldout.size() == 20);

    test::TempDir dir("dataset");
    save_dataset(d, dir.str());
    EvalDataset back = load_dataset(dir.str() + "/dataset.json");
    CHECK(back.num_classes == 10);
    CHECK(back.input_shape == std::vector<int64_t>{1, 8, 8});
    REQUIRE(back.calibration.size() == 40);
    REQUIRE(back.heldout.size() == 20);
    CHECK(back.calibration[3].input.data == d.calibration[3].input.data);
    CHECK(back.calibration[3].label == d.calibration[3].label);
    CHECK(back.heldout[11].label == d.heldout[11].label);
}
