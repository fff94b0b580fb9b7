#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dewarp/network.hpp"
#include "dewarp/synthdoc.hpp"
#include "test_support.hpp"

using namespace dewarp;

namespace {

// Scaled-down config so full forward passes stay cheap in unit tests.
NetworkConfig small_cfg() {
    NetworkConfig cfg;
    cfg.input_size = 96;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.seg_hidden = 8;
    return cfg;
}

Raster test_image(std::uint64_t seed) { return value_noise_texture(96, 96, 3, seed); }

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(s, v);
}

// One WBDL entry: u16 name length, name, rank, dims, f32 payload.
void put_entry(std::string& s, const std::string& name, float value) {
    s.push_back(static_cast<char>(name.size()));
    s.push_back(0);
    s += name;
    s.push_back(1);
    put_u32(s, 1);
    put_f32(s, value);
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("network config validation") {
    CHECK_NOTHROW(small_cfg().validate());
    NetworkConfig cfg = small_cfg();
    cfg.input_size = 100;  // not a multiple of the stride
    CHECK_THROWS_AS(cfg.validate(), invalid_argument);
    cfg = small_cfg();
    cfg.encoder_layers = 4;  // 12 -> 6 -> 3 cannot halve again
    cfg.decoder_layers = 4;
    CHECK_THROWS_AS(cfg.validate(), invalid_argument);
    cfg = small_cfg();
    cfg.decoder_layers = 2;
    CHECK_THROWS_AS(cfg.validate(), invalid_argument);
    cfg = small_cfg();
    cfg.sigma = -1.0;
    CHECK_THROWS_AS(cfg.validate(), invalid_argument);
    cfg = small_cfg();
    cfg.d_model = 18;
    cfg.heads = 4;  // 18 does not split into 4 heads
    CHECK_THROWS_AS(cfg.validate(), invalid_argument);
}

TEST_CASE("seeded init is deterministic and 32-bit clean") {
    NetworkConfig cfg = small_cfg();
    WeightBundle a = init_weights(cfg, 11);
    WeightBundle b = init_weights(cfg, 11);
    WeightBundle c = init_weights(cfg, 12);
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal = true;
    bool any_diff_seed = false;
    bool any_nonzero = false;
    for (const auto& [name, t] : a.params) {
        if (t.data != b.at(name).data) all_equal = false;
        if (t.data != c.at(name).data) any_diff_seed = true;
        for (double v : t.data) {
            // Every stored value must survive the f32 container untouched.
            CHECK(v == static_cast<double>(static_cast<float>(v)));
            if (v != 0.0 && v != 1.0) any_nonzero = true;
        }
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
    CHECK(any_nonzero);

    // Structured parameters get their conventional init values.
    for (double v : a.at("enc.l0.ln1.g").data) CHECK(v == 1.0);
    for (double v : a.at("enc.l0.ln1.b").data) CHECK(v == 0.0);
    for (double v : a.at("dec.l1.msa.bq").data) CHECK(v == 0.0);
    for (double v : a.at("ups.w").data) CHECK(v == 0.0);
}

TEST_CASE("weight validation catches structural damage") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = init_weights(cfg, 3);
    CHECK_NOTHROW(validate_weights(wb, cfg));
    WeightBundle missing = wb;
    missing.params.erase("dec.head.w");
    CHECK_THROWS_AS(validate_weights(missing, cfg), data_error);
    WeightBundle reshaped = wb;
    reshaped.params["dec.head.w"].shape = {3, 16};
    CHECK_THROWS_AS(validate_weights(reshaped, cfg), data_error);
}

TEST_CASE("weight container round trip is bit exact") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = init_weights(cfg, 77);
    std::filesystem::path dir = testsup::scratch_dir("wbdl");
    std::string path = (dir / "w.bin").string();
    save_weights(path, wb);
    WeightBundle back = load_weights(path);
    REQUIRE(back.params.size() == wb.params.size());
    for (const auto& [name, t] : wb.params) {
        const Tensor& u = back.at(name);
        CHECK(u.shape == t.shape);
        CHECK(u.data == t.data);
    }
    // Re-encoding reproduces the file byte for byte.
    std::string again = (dir / "w2.bin").string();
    save_weights(again, back);
    CHECK(testsup::read_file_bytes(path) == testsup::read_file_bytes(again));
}

TEST_CASE("weight container rejects malformed files") {
    std::filesystem::path dir = testsup::scratch_dir("wbdl_bad");
    auto path = [&](const char* n) { return (dir / n).string(); };

    CHECK_THROWS_AS(load_weights(path("missing.bin")), data_error);

    std::string good = "WBDL";
    good.push_back(1);
    put_u32(good, 1);
    put_entry(good, "a.w", 0.5f);
    write_bytes(path("good.bin"), good);
    CHECK_NOTHROW(load_weights(path("good.bin")));

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    write_bytes(path("magic.bin"), bad_magic);
    CHECK_THROWS_AS(load_weights(path("magic.bin")), data_error);

    std::string bad_version = good;
    bad_version[4] = 2;
    write_bytes(path("version.bin"), bad_version);
    CHECK_THROWS_AS(load_weights(path("version.bin")), data_error);

    write_bytes(path("trunc.bin"), good.substr(0, good.size() - 1));
    CHECK_THROWS_AS(load_weights(path("trunc.bin")), data_error);

    write_bytes(path("trail.bin"), good + "x");
    CHECK_THROWS_AS(load_weights(path("trail.bin")), data_error);

    std::string dup = "WBDL";
    dup.push_back(1);
    put_u32(dup, 2);
    put_entry(dup, "a.w", 0.5f);
    put_entry(dup, "a.w", 0.25f);
    write_bytes(path("dup.bin"), dup);
    CHECK_THROWS_AS(load_weights(path("dup.bin")), data_error);

    std::string nan = "WBDL";
    nan.push_back(1);
    put_u32(nan, 1);
    nan.push_back(3);
    nan.push_back(0);
    nan += "a.w";
    nan.push_back(1);
    put_u32(nan, 1);
    put_u32(nan, 0x7fc00000u);  // quiet NaN payload
    write_bytes(path("nan.bin"), nan);
    CHECK_THROWS_AS(load_weights(path("nan.bin")), data_error);
}

TEST_CASE("zero weights give the neutral forward output") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = zero_weights(cfg);
    ForwardResult r = forward(test_image(4), wb, cfg);

    REQUIRE(r.logits.height == 96);
    REQUIRE(r.logits.width == 96);
    REQUIRE(r.logits.channels == 2);
    for (double v : r.logits.data) CHECK(v == 0.0);
    for (double v : r.smooth.data) CHECK(v == 0.5);

    DeformationField id = DeformationField::identity(96, 96);
    REQUIRE(r.field.height == 96);
    REQUIRE(r.field.width == 96);
    CHECK(r.field.direction == Direction::Backward);
    bool exact = true;
    for (std::size_t i = 0; i < id.coords.size(); ++i)
        if (r.field.coords[i].x != id.coords[i].x || r.field.coords[i].y != id.coords[i].y)
            exact = false;
    CHECK(exact);
}

TEST_CASE("forward produces well-formed finite output") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = init_weights(cfg, 21);
    ForwardResult r = forward(test_image(9), wb, cfg);
    CHECK(r.logits.channels == 2);
    CHECK(r.smooth.channels == 1);
    for (double v : r.smooth.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (const Vec2& v : r.field.coords) {
        CHECK(std::isfinite(v.x));
        CHECK(std::isfinite(v.y));
    }
}

TEST_CASE("forward rejects bad input") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = init_weights(cfg, 2);
    CHECK_THROWS_AS(forward(value_noise_texture(64, 64, 3, 1), wb, cfg), invalid_argument);
    CHECK_THROWS_AS(forward(value_noise_texture(96, 96, 1, 1), wb, cfg), invalid_argument);
    Raster bad = test_image(1);
    bad.at(0, 0, 0) = 7.0;
    CHECK_THROWS_AS(forward(bad, wb, cfg), invalid_argument);
    NetworkConfig other = small_cfg();
    other.d_model = 32;
    CHECK_THROWS_AS(forward(test_image(1), init_weights(other, 2), cfg), data_error);
}

TEST_CASE("sigma zero and disabled mask bias are bit identical") {
    NetworkConfig cfg = small_cfg();
    cfg.sigma = 0.0;
    WeightBundle wb = init_weights(cfg, 5);
    ForwardOptions with_bias;
    ForwardOptions without_bias;
    without_bias.use_mask_bias = false;
    ForwardResult a = forward(test_image(6), wb, cfg, with_bias);
    ForwardResult b = forward(test_image(6), wb, cfg, without_bias);
    CHECK(a.logits.data == b.logits.data);
    CHECK(a.smooth.data == b.smooth.data);
    bool same = true;
    for (std::size_t i = 0; i < a.field.coords.size(); ++i)
        if (a.field.coords[i].x != b.field.coords[i].x ||
            a.field.coords[i].y != b.field.coords[i].y)
            same = false;
    CHECK(same);
}

TEST_CASE("a constant mask shifts attention scores without changing rows") {
    Rng rng(40);
    TensorMap tokens(4, 4, 16);
    for (double& v : tokens.data) v = rng.normal() * 0.5;
    WeightBundle wb;
    for (const char* suffix : {"wq", "wk", "wv", "wo"}) {
        Tensor t;
        t.shape = {16, 16};
        t.data.resize(t.count());
        for (double& v : t.data) v = rng.normal() * 0.1;
        wb.params.emplace(std::string("t.") + suffix, std::move(t));
    }
    for (const char* suffix : {"bq", "bk", "bv", "bo"}) {
        Tensor t;
        t.shape = {16};
        t.data.assign(16, 0.0);
        wb.params.emplace(std::string("t.") + suffix, std::move(t));
    }
    std::vector<double> mask(16, 0.7);
    TensorMap biased = masked_self_attention(tokens, mask, 0.5, wb, "t", 2, 2);
    TensorMap neutral = masked_self_attention(tokens, mask, 0.0, wb, "t", 2, 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < biased.data.size(); ++i)
        worst = std::max(worst, std::abs(biased.data[i] - neutral.data[i]));
    CHECK(worst <= 1e-9);

    std::vector<double> short_mask(15, 0.7);
    CHECK_THROWS_AS(masked_self_attention(tokens, short_mask, 0.5, wb, "t", 2, 2),
                    invalid_argument);
}

TEST_CASE("attention trace names the blocks and stays row stochastic") {
    NetworkConfig cfg = small_cfg();
    WeightBundle wb = init_weights(cfg, 13);
    Trace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    forward(test_image(2), wb, cfg, opts);

    std::vector<std::string> names;
    for (const AttentionTrace& t : trace.attn) names.push_back(t.name);
    std::vector<std::string> expected = {
        "enc.l0.attn", "enc.l1.attn", "enc.l2.attn",
        "dec.l0.msa",  "dec.l0.ca(E3)",
        "dec.l1.msa",  "dec.l1.ca(E2)",
        "dec.l2.msa",  "dec.l2.ca(E1)",
    };
    CHECK(names == expected);

    for (const AttentionTrace& t : trace.attn) {
        REQUIRE(t.weights.size() == static_cast<std::size_t>(t.queries) * t.keys);
        for (int q = 0; q < t.queries; ++q) {
            double row = 0.0;
            for (int k = 0; k < t.keys; ++k)
                row += t.weights[static_cast<std::size_t>(q) * t.keys + k];
            CHECK(row == Catch::Approx(1.0).margin(1e-9));
        }
    }
    // Cross-attention reads the matching encoder grid, coarsest stage first.
    CHECK(trace.attn[4].queries == 9);
    CHECK(trace.attn[4].keys == 4);    // 3x3 stage pooled by 2
    CHECK(trace.attn[8].queries == 144);
    CHECK(trace.attn[8].keys == 36);   // 12x12 stage pooled by 2
}

TEST_CASE("mask pooling averages exact integer blocks") {
    Raster mask(4, 4, 1);
    for (int i = 0; i < 16; ++i) mask.data[i] = i / 15.0;
    std::vector<double> pooled = pool_mask(mask, 2);
    REQUIRE(pooled.size() == 4);
    CHECK(pooled[0] == Catch::Approx((0 + 1 + 4 + 5) / 4.0 / 15.0).margin(1e-15));
    CHECK(pooled[3] == Catch::Approx((10 + 11 + 14 + 15) / 4.0 / 15.0).margin(1e-15));
    CHECK_THROWS_AS(pool_mask(mask, 3), invalid_argument);
    CHECK_THROWS_AS(pool_mask(Raster(4, 6, 1), 2), invalid_argument);
    CHECK_THROWS_AS(pool_mask(Raster(4, 4, 3), 2), invalid_argument);
}

TEST_CASE("flow upsampling adds displacements onto the identity grid") {
    TensorMap coarse(3, 3, 2);
    for (int t = 0; t < 9; ++t) {
        coarse.token(t)[0] = 0.01;
        coarse.token(t)[1] = -0.02;
    }
    DeformationField id = DeformationField::identity(12, 12);

    DeformationField bil = upsample_flow(coarse, UpsampleMode::Bilinear, nullptr, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            CHECK(bil.at(i, j).x == Catch::Approx(id.at(i, j).x + 0.01).margin(1e-12));
            CHECK(bil.at(i, j).y == Catch::Approx(id.at(i, j).y - 0.02).margin(1e-12));
        }

    WeightBundle ups;
    Tensor t;
    t.shape = {9, 4, 4};
    t.data.assign(t.count(), 0.0);
    ups.params.emplace("ups.w", t);
    DeformationField cvx = upsample_flow(coarse, UpsampleMode::Convex, &ups, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            CHECK(cvx.at(i, j).x == Catch::Approx(id.at(i, j).x + 0.01).margin(1e-12));
            CHECK(cvx.at(i, j).y == Catch::Approx(id.at(i, j).y - 0.02).margin(1e-12));
        }

    CHECK_THROWS_AS(upsample_flow(coarse, UpsampleMode::Convex, nullptr, 12),
                    invalid_argument);
    CHECK_THROWS_AS(upsample_flow(coarse, UpsampleMode::Convex, &ups, 13),
                    invalid_argument);
    TensorMap bad(3, 3, 1);
    CHECK_THROWS_AS(upsample_flow(bad, UpsampleMode::Bilinear, nullptr, 12),
                    invalid_argument);
}

TEST_CASE("convex upsampling follows the zero-logit neighborhood average") {
    // With zero logits every subpixel takes the plain mean of the clamped
    // 3x3 coarse neighborhood; check against an explicit reimplementation.
    Rng rng(71);
    TensorMap coarse(3, 3, 2);
    for (double& v : coarse.data) v = rng.uniform(-0.05, 0.05);
    WeightBundle ups;
    Tensor t;
    t.shape = {9, 4, 4};
    t.data.assign(t.count(), 0.0);
    ups.params.emplace("ups.w", t);
    DeformationField got = upsample_flow(coarse, UpsampleMode::Convex, &ups, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            int cy = i / 4, cx = j / 4;
            double dx = 0.0, dy = 0.0;
            for (int oy = -1; oy <= 1; ++oy)
                for (int ox = -1; ox <= 1; ++ox) {
                    int ny = clamp_int(cy + oy, 0, 2);
                    int nx = clamp_int(cx + ox, 0, 2);
                    dx += coarse.at(ny, nx, 0) / 9.0;
                    dy += coarse.at(ny, nx, 1) / 9.0;
                }
            double ex = j / 11.0 + dx, ey = i / 11.0 + dy;
            CHECK(got.at(i, j).x == Catch::Approx(ex).margin(1e-12));
            CHECK(got.at(i, j).y == Catch::Approx(ey).margin(1e-12));
        }
}
