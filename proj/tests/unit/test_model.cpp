#include "support.hpp"

#include "wmlab/model.hpp"
#include "wmlab/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

ModelConfig tiny_config()
{
    ModelConfig c;
    c.working_resolution = 32;
    c.bit_length = 12;
    c.encoder_base_channels = 4;
    c.watermark_plane_channels = 2;
    c.decoder_width = 8;
    c.seed = 4;
    return c;
}

std::filesystem::path temp_file(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "wmlab_test_model";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string read_all(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

} // namespace

TEST_CASE("model config validation")
{
    CHECK_NOTHROW(tiny_config().validate());
    ModelConfig c = tiny_config();
    c.working_resolution = 40;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.bit_length = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.decoder_backbone = "resnet";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    const ModelConfig back = nlohmann::json(tiny_config()).get<ModelConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(tiny_config()));
}

TEST_CASE("initialisation is deterministic per seed")
{
    const WatermarkModel a(tiny_config()), b(tiny_config());
    ModelConfig other = tiny_config();
    other.seed = 5;
    const WatermarkModel c(other);
    REQUIRE(a.params().items().size() == c.params().items().size());
    bool differs = false;
    for (std::size_t i = 0; i < a.params().items().size(); ++i) {
        const Tensor& ta = a.params().items()[i].second.value();
        const Tensor& tb = b.params().items()[i].second.value();
        const Tensor& tc = c.params().items()[i].second.value();
        CHECK(ta.vec() == tb.vec());
        differs = differs || ta.vec() != tc.vec();
    }
    CHECK(differs);
}

TEST_CASE("encode keeps the input size and decode returns one probability per bit")
{
    const WatermarkModel m(tiny_config());
    const WatermarkBits w = random_watermark(12, 2);
    for (auto [h, w_] : {std::pair{32, 32}, std::pair{48, 80}, std::pair{100, 36}}) {
        const ImageBuffer img = synthetic_image(h, w_, 7);
        const EncodeResult r = m.encode(img, w);
        CHECK(r.watermarked.height() == h);
        CHECK(r.watermarked.width() == w_);
        CHECK(r.residual.values.shape() == img.tensor().shape());
        const auto p = m.decode(r.watermarked);
        REQUIRE(p.size() == 12);
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK_THROWS_AS(m.encode(synthetic_image(32, 32, 1), random_watermark(5, 1)), std::invalid_argument);
}

TEST_CASE("decoding a batch equals decoding each image alone")
{
    const WatermarkModel m(tiny_config());
    Rng rng(8);
    const Tensor batch = random_tensor({4, 3, 32, 32}, rng, 0.0, 1.0);
    NoGradGuard guard;
    const Tensor all = m.decode_batch(constant(batch)).value();
    const std::size_t per = 3 * 32 * 32;
    for (int i = 0; i < 4; ++i) {
        Tensor one({1, 3, 32, 32});
        std::copy_n(batch.data() + i * per, per, one.data());
        const Tensor single = m.decode_batch(constant(one)).value();
        for (int b = 0; b < 12; ++b) CHECK(single[b] == all[static_cast<std::size_t>(i) * 12 + b]);
    }
}

TEST_CASE("checkpoints roundtrip exactly")
{
    WatermarkModel m(tiny_config());
    Rng rng(3);
    for (auto& [name, v] : m.params().items())
        for (double& x : v.mutable_value().vec()) x += rng.uniform(-0.01, 0.01);
    Checkpoint ck;
    ck.config = m.config();
    ck.meta = {{"step", 17}, {"stage", "Reconstruction"}};
    store_params(m.params(), ck);
    const auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.meta == ck.meta);
    CHECK(nlohmann::json(back.config) == nlohmann::json(ck.config));
    REQUIRE(back.tensors.size() == ck.tensors.size());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == ck.tensors[i].first);
        CHECK(back.tensors[i].second.vec() == ck.tensors[i].second.vec());
    }
    const WatermarkModel loaded = load_model(path);
    const ImageBuffer img = synthetic_image(32, 32, 2);
    CHECK(loaded.decode(img) == m.decode(img));
}

TEST_CASE("damaged checkpoints are rejected")
{
    const WatermarkModel m(tiny_config());
    Checkpoint ck;
    ck.config = m.config();
    store_params(m.params(), ck);
    const auto good = temp_file("good.ckpt");
    save_checkpoint(ck, good);
    const std::string bytes = read_all(good);
    const auto bad = temp_file("bad.ckpt");

    write_all(bad, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

    std::string flipped = bytes;
    flipped[flipped.size() - 100] ^= 0x10;
    write_all(bad, flipped);
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("checksum"), CheckpointError);

    std::string versioned = bytes;
    versioned[8] = 9;
    write_all(bad, versioned);
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("version"), CheckpointError);

    write_all(bad, "not a checkpoint at all");
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(temp_file("missing.ckpt")), CheckpointError);

    ModelConfig other = tiny_config();
    other.decoder_width = 16;
    WatermarkModel wider(other);
    CHECK_THROWS_AS(restore_params(wider.params(), ck), CheckpointError);
}

TEST_CASE("frozen parameters receive no gradient")
{
    WatermarkModel m(tiny_config());
    Rng rng(1);
    const Var x(random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0), true);
    m.params().set_trainable(false);
    ops::sum(m.decode_batch(x)).backward();
    for (const auto& [name, v] : m.params().items()) CHECK(v.grad().empty());
    CHECK_FALSE(x.grad().empty());
    m.params().set_trainable(true);
    m.params().zero_grad();
    ops::sum(m.decode_batch(x)).backward();
    int with_grad = 0;
    for (const auto& [name, v] : m.params().items()) with_grad += !v.grad().empty();
    CHECK(with_grad > 0);
}
