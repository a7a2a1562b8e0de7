#include "support.hpp"

#include "wmlab/bench.hpp"
#include "wmlab/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

WatermarkModel tiny_model(int bits = 8)
{
    ModelConfig c;
    c.working_resolution = 32;
    c.bit_length = bits;
    c.encoder_base_channels = 4;
    c.watermark_plane_channels = 2;
    c.decoder_width = 8;
    c.seed = 6;
    return WatermarkModel(c);
}

std::vector<NamedImage> corpus(int n, int h = 40, int w = 36)
{
    std::vector<NamedImage> out;
    for (int i = 0; i < n; ++i) out.push_back({"img" + std::to_string(i), synthetic_image(h, w, 50 + i)});
    return out;
}

std::filesystem::path temp_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("wmlab_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

WatermarkBits flip_bits(WatermarkBits w, int count, std::uint64_t seed)
{
    std::vector<std::uint8_t> b = w.bits();
    Rng rng(seed);
    std::vector<std::size_t> idx(b.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        b[idx[i]] ^= 1;
    }
    return WatermarkBits(b);
}

} // namespace

TEST_CASE("success rate counts exact recoveries")
{
    std::vector<Uuid> truth;
    std::vector<WatermarkBits> decoded;
    for (int i = 0; i < 10; ++i) {
        truth.push_back(Uuid::random(1000 + i));
        const WatermarkBits code = encode_uuid(truth.back());
        if (i < 7) decoded.push_back(flip_bits(code, i * 2, i));
        else decoded.push_back(encode_uuid(Uuid::random(9000 + i)));
    }
    CHECK(success_rate(decoded, truth) == doctest::Approx(70.0).epsilon(1e-12));
    CHECK(success_rate({}, {}) == 0.0);
    CHECK_THROWS(success_rate(decoded, {truth[0]}));
}

TEST_CASE("payload modes have stable names")
{
    CHECK(payload_mode_name(PayloadMode::RawBits) == "raw-bits");
    CHECK(payload_mode_name(PayloadMode::UuidEcc) == "uuid-ecc");
    CHECK(payload_mode_from_name("uuid-ecc") == PayloadMode::UuidEcc);
    CHECK_THROWS(payload_mode_from_name("bits"));
}

TEST_CASE("bench report has one row per noise plus the clean row")
{
    const WatermarkModel m = tiny_model();
    const BenchReport r = evaluate(m, corpus(3), BenchOptions{}, "synthetic");
    CHECK(r.schema_version == kBenchSchemaVersion);
    CHECK(r.dataset_id == "synthetic");
    CHECK(r.payload_mode == "raw-bits");
    REQUIRE(r.rows.size() == 15);
    CHECK(r.rows.front().noise == "Clean");
    for (std::size_t i = 0; i < kSuiteKinds.size(); ++i) CHECK(r.rows[i + 1].noise == noise_name(kSuiteKinds[i]));
    for (const NoiseRow& row : r.rows) {
        CHECK(row.bit_accuracy >= 0.0);
        CHECK(row.bit_accuracy <= 100.0);
        CHECK_FALSE(row.success_rate.has_value());
    }
    REQUIRE(r.images.size() == 3);
    CHECK(r.images[0].name == "img0");
    CHECK(r.row("Rotation") != nullptr);
    CHECK(r.row("Sharpen") == nullptr);
}

TEST_CASE("identity noise matches the clean row")
{
    BenchOptions o;
    o.noises = {NoiseKind::Identity, NoiseKind::Flip};
    const BenchReport r = evaluate(tiny_model(), corpus(4), o);
    CHECK(r.row("Identity")->bit_accuracy == r.row("Clean")->bit_accuracy);
}

TEST_CASE("bench runs are deterministic and seed dependent")
{
    const WatermarkModel m = tiny_model();
    BenchOptions o;
    o.seed = 3;
    const nlohmann::json a = evaluate(m, corpus(3), o);
    const nlohmann::json b = evaluate(m, corpus(3), o);
    CHECK(a.dump() == b.dump());
    o.seed = 4;
    const nlohmann::json c = evaluate(m, corpus(3), o);
    CHECK(a.dump() != c.dump());
}

TEST_CASE("uuid mode reports success rates and needs a full-length model")
{
    BenchOptions o;
    o.mode = PayloadMode::UuidEcc;
    o.noises = {NoiseKind::Flip};
    const BenchReport r = evaluate(tiny_model(256), corpus(2), o);
    CHECK(r.payload_mode == "uuid-ecc");
    for (const NoiseRow& row : r.rows) {
        REQUIRE(row.success_rate.has_value());
        CHECK(*row.success_rate >= 0.0);
        CHECK(*row.success_rate <= 100.0);
    }
    CHECK_THROWS_AS(evaluate(tiny_model(8), corpus(1), o), std::invalid_argument);
}

TEST_CASE("bench options and reports roundtrip through JSON")
{
    BenchOptions o;
    o.noises = {NoiseKind::Flip, NoiseKind::Identity};
    o.mode = PayloadMode::UuidEcc;
    o.seed = 12;
    const BenchOptions ob = nlohmann::json(o).get<BenchOptions>();
    CHECK(nlohmann::json(ob) == nlohmann::json(o));
    BenchOptions bad;
    CHECK_THROWS(from_json(nlohmann::json{{"noises", {"Sharpen"}}}, bad));
    CHECK_THROWS(from_json(nlohmann::json{{"colour", 1}}, bad));

    const BenchReport r = evaluate(tiny_model(), corpus(2), BenchOptions{}, "x");
    const BenchReport back = nlohmann::json(r).get<BenchReport>();
    CHECK(nlohmann::json(back).dump() == nlohmann::json(r).dump());
}

TEST_CASE("unchanged images score infinite PSNR and survive the JSON roundtrip")
{
    BenchReport r;
    r.images.push_back({"a", std::numeric_limits<double>::infinity(), 1.0});
    r.mean_psnr = std::numeric_limits<double>::infinity();
    const nlohmann::json j = r;
    CHECK(j["images"][0]["psnr"].is_null());
    const BenchReport back = j.get<BenchReport>();
    CHECK(std::isinf(back.images[0].psnr));
    CHECK(std::isinf(back.mean_psnr));
}

TEST_CASE("bench over a directory")
{
    const auto empty = temp_dir("bench_empty");
    CHECK_THROWS_AS(evaluate(tiny_model(), empty, BenchOptions{}), BenchError);
    CHECK_THROWS(evaluate(tiny_model(), empty / "missing", BenchOptions{}));

    const auto dir = temp_dir("bench_dir");
    for (const NamedImage& img : corpus(2)) save_image(img.image, dir / (img.name + ".png"));
    std::ofstream(dir / "junk.png") << "not an image";
    std::ostringstream warnings;
    const BenchReport r = evaluate(tiny_model(), dir, BenchOptions{}, &warnings);
    CHECK(r.images.size() == 2);
    CHECK(r.dataset_id == "wmlab_test_bench_dir");
    CHECK(warnings.str().find("junk.png") != std::string::npos);

    const auto out = temp_dir("bench_report");
    const auto files = emit_report(r, out, {ReportFormat::TableText, ReportFormat::Structured, ReportFormat::Plots});
    CHECK(files.size() == 4);
    for (const auto& f : files) CHECK(std::filesystem::file_size(f) > 0);
    std::ifstream in(out / "report.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("schema_version") == kBenchSchemaVersion);
    CHECK(format_table(r).find("Clean") != std::string::npos);
}
