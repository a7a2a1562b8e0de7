#pragma once

#include "wmlab/autograd.hpp"
#include "wmlab/image.hpp"
#include "wmlab/payload.hpp"
#include "wmlab/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wmlab {

struct ModelConfig {
    int working_resolution = 256;
    int bit_length = 100;
    int encoder_base_channels = 8;
    int watermark_plane_channels = 4;
    int decoder_width = 24;
    std::string decoder_backbone = "convnext-lite";
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on inconsistent values.
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named learnable tensors in registration order. Names are hierarchical
/// module paths such as "decoder.stage1.block0.dw.weight".
class ParamSet {
public:
    Var add(const std::string& name, Tensor init);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::vector<std::pair<std::string, Var>>& items() { return items_; }
    std::size_t numel() const;
    void zero_grad();
    /// Toggles gradient tracking for every parameter (frozen parameters get no grad).
    void set_trainable(bool on);

private:
    std::vector<std::pair<std::string, Var>> items_;
};

/// Convolution with He-normal initialisation registered under `prefix`.
struct Conv {
    Var weight, bias;
    int stride = 1, pad = 0;
    bool depthwise = false;

    Var operator()(const Var& x) const;
};

struct Linear {
    Var weight, bias;
    Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
};

struct NormAffine {
    Var gamma, beta;
    Var operator()(const Var& x) const { return ops::layer_norm_channels(x, gamma, beta); }
};

/// Builds layers into a ParamSet with a deterministic initialisation stream.
class LayerFactory {
public:
    LayerFactory(ParamSet& params, std::uint64_t seed) : params_(params), rng_(seed) {}
    Conv conv(const std::string& name, int in, int out, int k, int stride, int pad);
    Conv depthwise(const std::string& name, int channels, int k, int pad);
    Linear linear(const std::string& name, int in, int out, double gain = 1.0);
    NormAffine norm(const std::string& name, int channels);
    Var scalar(const std::string& name, double value);
    Var channel_scale(const std::string& name, int channels, double value);

private:
    Tensor normal(Shape s, double std);
    ParamSet& params_;
    Rng rng_;
};

struct EncodeResult {
    ImageBuffer watermarked;
    Residual residual;
};

/// Encoder and decoder networks plus the resolution-scaling wrappers.
class WatermarkModel {
public:
    explicit WatermarkModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    /// bits [N,l] in {0,1} -> watermark planes [N,Cw,R,R].
    Var preprocess_watermark(const Tensor& bits) const;
    /// Low-resolution residual for x [N,3,R,R].
    Var residual(const Var& x, const Tensor& bits) const;
    /// Soft bits [N,l] in (0,1) for y [N,3,R,R].
    Var decode_batch(const Var& y) const;

    /// Full-resolution embedding: downscale, residual, upscale, add, clamp.
    EncodeResult encode(const ImageBuffer& x, const WatermarkBits& w) const;
    /// Soft bits for an image of any size (resized to the working resolution).
    std::vector<double> decode(const ImageBuffer& y) const;

    static Tensor bits_tensor(const std::vector<WatermarkBits>& ws);

private:
    ModelConfig cfg_;
    ParamSet params_;

    Linear wm_linear_;
    Conv stem_, down1_, down2_;
    std::vector<std::pair<Conv, Conv>> res_blocks_;
    Conv up1_, up2_;
    Conv post1_, post2_, post3_;
    Var gain_;

    struct Block {
        Conv dw;
        NormAffine norm;
        Conv pw1, pw2;
        Var layer_scale;
    };
    Conv patchify_;
    NormAffine stem_norm_;
    std::vector<Block> stage1_, stage2_;
    NormAffine down_norm_;
    Conv downsample_;
    NormAffine head_norm_;
    Linear head_;

    Var block(const Block& b, const Var& x) const;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything persisted by a training run: config, named tensors, and a JSON
/// document with training metadata (stage, step, optimizer moments are tensors).
struct Checkpoint {
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

/// Writes to a temporary sibling and renames over `path`.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies model parameters into a checkpoint tensor list and back.
void store_params(const ParamSet& params, Checkpoint& ck);
void restore_params(ParamSet& params, const Checkpoint& ck);

/// Loads a checkpoint and builds the model it describes.
WatermarkModel load_model(const std::filesystem::path& path);

} // namespace wmlab
