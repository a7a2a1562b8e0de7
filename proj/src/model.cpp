#include "wmlab/model.hpp"

#include "wmlab/checksum.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wmlab {

void ModelConfig::validate() const
{
    if (working_resolution < 32 || working_resolution % 16 != 0)
        throw std::invalid_argument("model: working_resolution must be a multiple of 16 and at least 32");
    if (bit_length < 1) throw std::invalid_argument("model: bit_length must be >= 1");
    if (encoder_base_channels < 1 || watermark_plane_channels < 1 || decoder_width < 1)
        throw std::invalid_argument("model: channel counts must be positive");
    if (decoder_backbone != "convnext-lite")
        throw std::invalid_argument("model: unknown decoder_backbone '" + decoder_backbone + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = nlohmann::json{{"working_resolution", c.working_resolution},
                       {"bit_length", c.bit_length},
                       {"encoder_base_channels", c.encoder_base_channels},
                       {"watermark_plane_channels", c.watermark_plane_channels},
                       {"decoder_width", c.decoder_width},
                       {"decoder_backbone", c.decoder_backbone},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c)
{
    const ModelConfig d;
    c.working_resolution = j.value("working_resolution", d.working_resolution);
    c.bit_length = j.value("bit_length", d.bit_length);
    c.encoder_base_channels = j.value("encoder_base_channels", d.encoder_base_channels);
    c.watermark_plane_channels = j.value("watermark_plane_channels", d.watermark_plane_channels);
    c.decoder_width = j.value("decoder_width", d.decoder_width);
    c.decoder_backbone = j.value("decoder_backbone", d.decoder_backbone);
    c.seed = j.value("seed", d.seed);
}

Var ParamSet::add(const std::string& name, Tensor init)
{
    if (contains(name)) throw std::logic_error("duplicate parameter " + name);
    Var v(std::move(init), true);
    items_.emplace_back(name, v);
    return v;
}

const Var& ParamSet::get(const std::string& name) const
{
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const
{
    for (const auto& item : items_)
        if (item.first == name) return true;
    return false;
}

std::size_t ParamSet::numel() const
{
    std::size_t n = 0;
    for (const auto& item : items_) n += item.second.value().numel();
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& item : items_) item.second.zero_grad();
}

void ParamSet::set_trainable(bool on)
{
    for (auto& item : items_) item.second.node()->requires_grad = on;
}

Var Conv::operator()(const Var& x) const
{
    return depthwise ? ops::depthwise_conv2d(x, weight, bias, stride, pad) : ops::conv2d(x, weight, bias, stride, pad);
}

Tensor LayerFactory::normal(Shape s, double std)
{
    Tensor t(std::move(s));
    for (double& v : t.vec()) v = std * rng_.normal();
    return t;
}

Conv LayerFactory::conv(const std::string& name, int in, int out, int k, int stride, int pad)
{
    Conv c;
    c.weight = params_.add(name + ".weight", normal({out, in, k, k}, std::sqrt(2.0 / (in * k * k))));
    c.bias = params_.add(name + ".bias", Tensor({out}));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Conv LayerFactory::depthwise(const std::string& name, int channels, int k, int pad)
{
    Conv c;
    c.weight = params_.add(name + ".weight", normal({channels, 1, k, k}, std::sqrt(1.0 / (k * k))));
    c.bias = params_.add(name + ".bias", Tensor({channels}));
    c.pad = pad;
    c.depthwise = true;
    return c;
}

Linear LayerFactory::linear(const std::string& name, int in, int out, double gain)
{
    Linear l;
    l.weight = params_.add(name + ".weight", normal({out, in}, gain / std::sqrt(in)));
    l.bias = params_.add(name + ".bias", Tensor({out}));
    return l;
}

NormAffine LayerFactory::norm(const std::string& name, int channels)
{
    return NormAffine{params_.add(name + ".gamma", Tensor({channels}, 1.0)),
                      params_.add(name + ".beta", Tensor({channels}))};
}

Var LayerFactory::scalar(const std::string& name, double value) { return params_.add(name, Tensor({1}, value)); }

Var LayerFactory::channel_scale(const std::string& name, int channels, double value)
{
    return params_.add(name, Tensor({channels}, value));
}

namespace {

constexpr int kPlaneBlock = 16;
constexpr int kResBlocks = 4;
constexpr int kStageDepth = 2;
constexpr double kResidualGain = 0.02;
constexpr double kLayerScale = 0.1;

} // namespace

WatermarkModel::WatermarkModel(const ModelConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    LayerFactory f(params_, mix_seed(cfg_.seed, 1));
    const int c = cfg_.encoder_base_channels, cw = cfg_.watermark_plane_channels;

    wm_linear_ = f.linear("encoder.wm.linear", cfg_.bit_length, kPlaneBlock * kPlaneBlock * cw);
    stem_ = f.conv("encoder.stem", 3 + cw, c, 3, 1, 1);
    down1_ = f.conv("encoder.down1", c, 2 * c, 4, 2, 1);
    down2_ = f.conv("encoder.down2", 2 * c, 2 * c, 4, 2, 1);
    for (int i = 0; i < kResBlocks; ++i) {
        const std::string p = "encoder.res" + std::to_string(i);
        res_blocks_.emplace_back(f.conv(p + ".conv1", 2 * c, 2 * c, 3, 1, 1), f.conv(p + ".conv2", 2 * c, 2 * c, 3, 1, 1));
    }
    up1_ = f.conv("encoder.up1", 4 * c, 2 * c, 3, 1, 1);
    up2_ = f.conv("encoder.up2", 3 * c, c, 3, 1, 1);
    post1_ = f.conv("encoder.post1", c, c, 1, 1, 0);
    post2_ = f.conv("encoder.post2", c, c, 1, 1, 0);
    post3_ = f.conv("encoder.post3", c, 3, 1, 1, 0);
    gain_ = f.scalar("encoder.gain", kResidualGain);

    const int d = cfg_.decoder_width;
    LayerFactory g(params_, mix_seed(cfg_.seed, 2));
    patchify_ = g.conv("decoder.stem.conv", 3, d, 4, 4, 0);
    stem_norm_ = g.norm("decoder.stem.norm", d);
    auto make_stage = [&](const std::string& prefix, int dim, std::vector<Block>& out) {
        for (int i = 0; i < kStageDepth; ++i) {
            const std::string p = prefix + ".block" + std::to_string(i);
            out.push_back(Block{g.depthwise(p + ".dw", dim, 7, 3), g.norm(p + ".norm", dim),
                                g.conv(p + ".pw1", dim, 4 * dim, 1, 1, 0), g.conv(p + ".pw2", 4 * dim, dim, 1, 1, 0),
                                g.channel_scale(p + ".layer_scale", dim, kLayerScale)});
        }
    };
    make_stage("decoder.stage1", d, stage1_);
    down_norm_ = g.norm("decoder.down.norm", d);
    downsample_ = g.conv("decoder.down.conv", d, 2 * d, 2, 2, 0);
    make_stage("decoder.stage2", 2 * d, stage2_);
    head_norm_ = g.norm("decoder.head.norm", 2 * d);
    head_ = g.linear("decoder.head.linear", 2 * d, cfg_.bit_length);
}

Tensor WatermarkModel::bits_tensor(const std::vector<WatermarkBits>& ws)
{
    if (ws.empty()) throw std::invalid_argument("bits_tensor: empty batch");
    const int l = static_cast<int>(ws.front().size());
    Tensor t({static_cast<int>(ws.size()), l});
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (static_cast<int>(ws[i].size()) != l) throw std::invalid_argument("bits_tensor: ragged batch");
        for (int j = 0; j < l; ++j) t[i * l + j] = ws[i][j];
    }
    return t;
}

Var WatermarkModel::preprocess_watermark(const Tensor& bits) const
{
    if (bits.rank() != 2 || bits.dim(1) != cfg_.bit_length)
        throw std::invalid_argument("preprocess_watermark: expected [N," + std::to_string(cfg_.bit_length) + "] bits, got " +
                                    shape_str(bits.shape()));
    Tensor centred = bits;
    for (double& v : centred.vec()) v = 2.0 * v - 1.0;
    const int n = bits.dim(0), r = cfg_.working_resolution;
    Var block = ops::reshape(wm_linear_(constant(std::move(centred))),
                             {n, cfg_.watermark_plane_channels, kPlaneBlock, kPlaneBlock});
    return ops::pad_center(ops::upsample_nearest(block, r / 32), r, r);
}

Var WatermarkModel::residual(const Var& x, const Tensor& bits) const
{
    const int r = cfg_.working_resolution;
    if (x.value().rank() != 4 || x.value().c() != 3 || x.value().h() != r || x.value().w() != r)
        throw std::invalid_argument("residual: expected [N,3," + std::to_string(r) + "," + std::to_string(r) + "] input");
    if (bits.dim(0) != x.value().n()) throw std::invalid_argument("residual: batch size mismatch");

    const Var s = ops::relu(stem_(ops::concat_channels(x, preprocess_watermark(bits))));
    const Var d1 = ops::relu(ops::instance_norm(down1_(s)));
    Var h = ops::relu(ops::instance_norm(down2_(d1)));
    for (const auto& [c1, c2] : res_blocks_) {
        const Var t = ops::instance_norm(c2(ops::relu(ops::instance_norm(c1(h)))));
        h = ops::add(h, t);
    }
    const Var u1 = ops::relu(ops::instance_norm(up1_(ops::concat_channels(ops::upsample_nearest(h, 2), d1))));
    const Var u2 = ops::relu(up2_(ops::concat_channels(ops::upsample_nearest(u1, 2), s)));
    const Var p = post3_(ops::relu(post2_(ops::relu(post1_(u2)))));
    return ops::mul_scalar_var(ops::tanh(p), gain_);
}

Var WatermarkModel::block(const Block& b, const Var& x) const
{
    const Var y = b.pw2(ops::gelu(b.pw1(b.norm(b.dw(x)))));
    return ops::add(x, ops::mul_channel(y, b.layer_scale));
}

Var WatermarkModel::decode_batch(const Var& y) const
{
    const int r = cfg_.working_resolution;
    if (y.value().rank() != 4 || y.value().c() != 3 || y.value().h() != r || y.value().w() != r)
        throw std::invalid_argument("decode: expected [N,3," + std::to_string(r) + "," + std::to_string(r) + "] input");
    // centre inputs around zero
    Var h = stem_norm_(patchify_(ops::add_scalar(y, -0.5)));
    for (const auto& b : stage1_) h = block(b, h);
    h = downsample_(down_norm_(h));
    for (const auto& b : stage2_) h = block(b, h);
    return ops::sigmoid(head_(head_norm_(ops::global_avg_pool(h))));
}

EncodeResult WatermarkModel::encode(const ImageBuffer& x, const WatermarkBits& w) const
{
    if (static_cast<int>(w.size()) != cfg_.bit_length)
        throw std::invalid_argument("encode: watermark has " + std::to_string(w.size()) + " bits, model expects " +
                                    std::to_string(cfg_.bit_length));
    NoGradGuard guard;
    const int r = cfg_.working_resolution;
    const ImageBuffer low = resize(x, r, r);
    const Tensor res_low = residual(constant(low.tensor()), bits_tensor({w})).value();
    Tensor res = resample_apply(res_low, bilinear_axis(r, x.height()), bilinear_axis(r, x.width()));
    Tensor out = x.tensor();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += res[i];
    return EncodeResult{ImageBuffer::clamped(std::move(out)), Residual{std::move(res)}};
}

std::vector<double> WatermarkModel::decode(const ImageBuffer& y) const
{
    NoGradGuard guard;
    const int r = cfg_.working_resolution;
    const Var p = decode_batch(constant(resize(y, r, r).tensor()));
    return p.value().vec();
}

const Tensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

namespace {

constexpr char kMagic[8] = {'W', 'M', 'L', 'A', 'B', 'C', 'K', '\0'};

template <class T>
void put(std::string& buf, T v)
{
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& pos)
{
    if (pos + sizeof(T) > buf.size()) throw CheckpointError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path)
{
    nlohmann::json header;
    header["config"] = ck.config;
    header["meta"] = ck.meta;
    auto& list = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : ck.tensors) list.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string htext = header.dump();

    std::string buf(kMagic, sizeof(kMagic));
    put<std::uint32_t>(buf, kCheckpointVersion);
    put<std::uint64_t>(buf, htext.size());
    buf += htext;
    for (const auto& item : ck.tensors)
        buf.append(reinterpret_cast<const char*>(item.second.data()), item.second.numel() * sizeof(double));
    put<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        out.flush();
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError(path.string() + " is not a wmlab checkpoint");
    std::size_t pos = sizeof(kMagic);
    const auto version = get<std::uint32_t>(buf, pos);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const auto hlen = get<std::uint64_t>(buf, pos);
    if (pos + hlen > buf.size()) throw CheckpointError("checkpoint truncated");
    const auto header = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                              buf.begin() + static_cast<std::ptrdiff_t>(pos + hlen), nullptr, false);
    if (header.is_discarded()) throw CheckpointError("checkpoint header is not valid JSON");
    pos += hlen;

    Checkpoint ck;
    ck.config = header.at("config").get<ModelConfig>();
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& item : header.at("tensors")) {
        Shape shape = item.at("shape").get<Shape>();
        const std::size_t bytes = shape_numel(shape) * sizeof(double);
        if (pos + bytes > buf.size()) throw CheckpointError("checkpoint truncated");
        Tensor t(std::move(shape));
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        ck.tensors.emplace_back(item.at("name").get<std::string>(), std::move(t));
    }
    const std::size_t body = pos;
    const auto sum = get<std::uint64_t>(buf, pos);
    if (pos != buf.size()) throw CheckpointError("checkpoint has trailing bytes");
    if (sum != fnv1a(buf.data(), body)) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");
    return ck;
}

void store_params(const ParamSet& params, Checkpoint& ck)
{
    for (const auto& [name, v] : params.items()) {
        bool replaced = false;
        for (auto& item : ck.tensors)
            if (item.first == name) {
                item.second = v.value();
                replaced = true;
            }
        if (!replaced) ck.tensors.emplace_back(name, v.value());
    }
}

void restore_params(ParamSet& params, const Checkpoint& ck)
{
    for (auto& [name, v] : params.items()) {
        const Tensor* t = ck.find(name);
        if (!t) throw CheckpointError("checkpoint lacks parameter " + name);
        if (!t->same_shape(v.value()))
            throw CheckpointError("parameter " + name + " has shape " + shape_str(t->shape()) + ", model expects " +
                                  shape_str(v.value().shape()));
        v.mutable_value() = *t;
    }
}

WatermarkModel load_model(const std::filesystem::path& path)
{
    const Checkpoint ck = load_checkpoint(path);
    WatermarkModel model(ck.config);
    restore_params(model.params(), ck);
    return model;
}

} // namespace wmlab
