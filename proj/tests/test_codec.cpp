#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "exq/quant.hpp"
#include "testutil.hpp"

using namespace exq;

TEST_CASE("clip saturates at both range ends") {
    CHECK(clip(5, -7, 7) == 5);
    CHECK(clip(9, -7, 7) == 7);
    CHECK(clip(-12, -7, 7) == -7);
    CHECK(clip(-7, -7, 7) == -7);
    CHECK(clip(7, -7, 7) == 7);
}

TEST_CASE("range accessors and level count") {
    QuantParams p{2.0, 4, 1.0, 0.0};
    CHECK(p.r_min() == -7);
    CHECK(p.r_max() == 7);
    CHECK(p.level_count() == 15);
    QuantParams p3{2.0, 3, 1.0, 0.0};
    CHECK(p3.r_min() == -3);
    CHECK(p3.r_max() == 3);
    QuantParams p7{2.0, 7, 1.0, 0.0};
    CHECK(p7.r_min() == -63);
    CHECK(p7.r_max() == 63);
}

TEST_CASE("quantize_value hits the worked examples") {
    QuantParams p{2.0, 4, 1.0, 0.0};
    // x=8: log2(8)=3, f = 3 + 8 = 11
    Code c = quantize_value(8.0, p);
    CHECK_FALSE(code_sign_negative(c, 4));
    CHECK(code_exponent(c, 4) == 3);
    CHECK(static_cast<int>(c) == 11);
    // x=0 reserved code
    CHECK(quantize_value(0.0, p) == zero_code());
    CHECK(code_is_zero(quantize_value(0.0, p), 4));
    // x=-1000: log2(1000) ~ 9.97 clips to R_max=7, f = 15, sign set
    Code neg = quantize_value(-1000.0, p);
    CHECK(code_sign_negative(neg, 4));
    CHECK(code_exponent(neg, 4) == 7);
    CHECK(static_cast<int>(neg & 0xf) == 15);
}

TEST_CASE("non-positive log argument saturates to R_min") {
    QuantParams p{2.0, 4, 1.0, 0.5};
    Code c = quantize_value(0.25, p); // (0.25-0.5)/1 < 0
    CHECK(code_exponent(c, 4) == p.r_min());
    CHECK_FALSE(code_sign_negative(c, 4));
    Code cn = quantize_value(-0.25, p);
    CHECK(code_exponent(cn, 4) == p.r_min());
    CHECK(code_sign_negative(cn, 4));
}

TEST_CASE("dequantize_value worked examples") {
    QuantParams p{2.0, 4, 1.0, 0.0};
    CHECK(dequantize_value(zero_code(), p) == 0.0);
    CHECK(dequantize_value(make_code(false, 3, 4), p) == doctest::Approx(8.0));
    CHECK(dequantize_value(make_code(true, 3, 4), p) == doctest::Approx(-8.0));
}

TEST_CASE("round-trip is exact on every representable code") {
    for (int n = kMinBitwidth; n <= kMaxBitwidth; ++n) {
        QuantParams p{1.7, n, 0.8, 0.03};
        int checked = 0;
        for (int i = p.r_min(); i <= p.r_max(); ++i) {
            for (bool neg : {false, true}) {
                Code c = make_code(neg, i, n);
                double x = dequantize_value(c, p);
                CHECK(quantize_value(x, p) == c);
                CHECK(dequantize_value(quantize_value(x, p), p) == x);
                ++checked;
            }
        }
        CHECK(checked == 2 * p.level_count());
        CHECK(quantize_value(dequantize_value(zero_code(), p), p) == zero_code());
    }
}

TEST_CASE("init_params closed-form values") {
    // max|t| = 100, n=4: b = 100^(1/7), alpha algebraically 1
    Tensor t({3}, {100.0f, -0.5f, 2.0f});
    QuantParams p = init_params(t, 4);
    CHECK(p.base == doctest::Approx(1.93069772888325).epsilon(1e-12));
    CHECK(p.alpha == doctest::Approx(1.0).epsilon(1e-12));

    // beta with min_pos = 0.01 and the same base: 0.01 - b^(-7.5)
    Tensor t2({2}, {100.0f, 0.01f});
    QuantParams p2 = init_params(t2, 4);
    double expected_beta = static_cast<double>(0.01f) - std::pow(p2.base, -7.5) * p2.alpha;
    CHECK(p2.beta == doctest::Approx(expected_beta).epsilon(1e-12));
    CHECK(p2.beta == doctest::Approx(0.0028032067).epsilon(1e-6));
}

TEST_CASE("both offset forms of the initialization agree") {
    // long form: min - a*b^rmin + a*b^rmin - a*b^(rmin-0.5); middle terms cancel
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor t = test::random_spread_tensor(seed, 200, 0.0);
        for (float& v : t.data) v *= 3.0f; // keep max above 1
        QuantParams p = init_params(t, 5);
        AbsStats s = abs_stats(t);
        double rmin = p.r_min();
        double long_form = s.min_pos - p.alpha * std::pow(p.base, rmin) +
                           p.alpha * std::pow(p.base, rmin) -
                           p.alpha * std::pow(p.base, rmin - 0.5);
        CHECK(p.beta == doctest::Approx(long_form).epsilon(1e-12));
    }
}

TEST_CASE("alpha is 1 at initialization whenever max exceeds 1") {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        Tensor t = test::random_tensor(seed, 64, -50.0, 50.0);
        t.data[0] = static_cast<float>(rng.uniform(1.5, 100.0)); // ensure max > 1
        for (int n = kMinBitwidth; n <= kMaxBitwidth; ++n)
            CHECK(init_params(t, n).alpha == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("init_params rejects degenerate and sub-unit tensors") {
    Tensor zero({3}, {0.0f, 0.0f, 0.0f});
    CHECK_THROWS_AS(init_params(zero, 4), Error);
    try {
        init_params(zero, 4);
    } catch (const Error& e) {
        CHECK(e.code() == errc::degenerate_tensor);
    }
    Tensor small({2}, {0.5f, -0.25f});
    try {
        init_params(small, 4);
        FAIL("expected BaseOutOfRange");
    } catch (const Error& e) {
        CHECK(e.code() == errc::base_out_of_range);
    }
}

TEST_CASE("rmae worked examples") {
    Tensor ref({3}, {1.0f, 2.0f, 3.0f});
    CHECK(rmae(ref, ref) == 0.0);
    Tensor approx({3}, {1.0f, 2.0f, 2.0f});
    CHECK(rmae(approx, ref) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    Tensor one({1}, {1.0f});
    Tensor zero({1}, {0.0f});
    CHECK(rmae(zero, one) == doctest::Approx(1.0));
    try {
        rmae(one, zero);
        FAIL("expected ZeroReference");
    } catch (const Error& e) {
        CHECK(e.code() == errc::zero_reference);
    }
}

TEST_CASE("all-zero tensor quantizes to zero codes and back") {
    QuantParams p{2.0, 4, 1.0, 0.0};
    Tensor t({4}, {0.0f, 0.0f, 0.0f, 0.0f});
    QuantizedTensor q = quantize_tensor(t, p);
    for (Code c : q.codes) CHECK(c == zero_code());
    Tensor back = dequantize_tensor(q);
    for (float v : back.data) CHECK(v == 0.0f);
}

TEST_CASE("representable-grid tensor has near-zero quantization error") {
    QuantParams p{1.9, 5, 1.2, 0.01};
    Tensor t;
    t.shape = {static_cast<int64_t>(2 * p.level_count() + 1)};
    for (int i = p.r_min(); i <= p.r_max(); ++i) {
        t.data.push_back(static_cast<float>(dequantize_value(make_code(false, i, 5), p)));
        t.data.push_back(static_cast<float>(dequantize_value(make_code(true, i, 5), p)));
    }
    t.data.push_back(0.0f);
    Tensor back = dequantize_tensor(quantize_tensor(t, p));
    // float32 storage of the grid values is the only error source
    CHECK(rmae(back, t) < 1e-7);
}

TEST_CASE("higher bitwidth never fits worse at initialization") {
    int flips = 0;
    for (uint64_t seed = 1; seed <= 60; ++seed) {
        Tensor t = test::random_spread_tensor(seed, 256);
        for (float& v : t.data) v *= 2.0f;
        double e3 = quantization_rmae(t, init_params(t, 3));
        double e7 = quantization_rmae(t, init_params(t, 7));
        if (e7 > e3) ++flips;
    }
    CHECK(flips == 0);
}

TEST_CASE("monotone exponents above a positive offset") {
    QuantParams p{1.8, 5, 0.7, 0.05};
    REQUIRE(p.beta > 0.0);
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        double x1 = rng.uniform(p.beta, 100.0);
        double x2 = rng.uniform(p.beta, 100.0);
        if (x1 > x2) std::swap(x1, x2);
        int e1 = code_exponent(quantize_value(x1, p), 5);
        int e2 = code_exponent(quantize_value(x2, p), 5);
        CHECK(e1 <= e2);
    }
}

TEST_CASE("idempotence under pipeline parameters") {
    for (uint64_t seed = 1; seed <= 30; ++seed) {
        Tensor t = test::random_spread_tensor(seed, 128);
        for (float& v : t.data) v *= 4.0f;
        for (int n : {3, 5, 7}) {
            QuantParams p = init_params(t, n);
            Rng rng(seed * 31 + static_cast<uint64_t>(n));
            for (int k = 0; k < 50; ++k) {
                double x = rng.uniform(-200.0, 200.0);
                Code once = quantize_value(x, p);
                Code twice = quantize_value(dequantize_value(once, p), p);
                CHECK(once == twice);
            }
        }
    }
}

TEST_CASE("sign symmetry of codes") {
    QuantParams p{2.1, 6, 1.4, -0.02};
    Rng rng(99);
    for (int k = 0; k < 200; ++k) {
        double x = rng.uniform(1e-4, 500.0);
        Code pos = quantize_value(x, p);
        Code neg = quantize_value(-x, p);
        CHECK(code_exponent(pos, 6) == code_exponent(neg, 6));
        CHECK_FALSE(code_sign_negative(pos, 6));
        CHECK(code_sign_negative(neg, 6));
        CHECK((pos ^ neg) == (1u << 6));
    }
}

TEST_CASE("positive code values are strictly increasing in the exponent") {
    for (int n = kMinBitwidth; n <= kMaxBitwidth; ++n) {
        // pipeline-like base: full scale range of 50, so the bottom steps stay
        // far above double granularity
        int r_max = (1 << (n - 1)) - 1;
        QuantParams p{std::pow(50.0, 1.0 / r_max), n, 0.9, -0.3};
        double prev = -std::numeric_limits<double>::infinity();
        int count = 0;
        for (int i = p.r_min(); i <= p.r_max(); ++i) {
            double v = dequantize_value(make_code(false, i, n), p);
            CHECK(v > prev);
            prev = v;
            ++count;
        }
        CHECK(count == p.level_count());
    }
}

TEST_CASE("round half away from zero") {
    CHECK(round_half_away(2.5) == 3.0);
    CHECK(round_half_away(-2.5) == -3.0);
    CHECK(round_half_away(2.4) == 2.0);
    CHECK(round_half_away(-7.5) == -8.0);
}
