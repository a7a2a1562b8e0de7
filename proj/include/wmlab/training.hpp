#pragma once

#include "wmlab/model.hpp"
#include "wmlab/noiser.hpp"

#include <json.hpp>

#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace wmlab {

enum class Stage { Extraction, Reconstruction, Robustness };

std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);

struct LossWeights {
    double alpha_q_low = 0.1;
    double alpha_q_max = 10.0;
    double alpha_r = 1.0;
    double beta_yuv = 1.0;
    double beta_perceptual = 1.0;
    double beta_ffl = 1.0;
    double beta_gan = 1.0;
    double gamma = 0.5; // weight of each active noise term
    int k = 2;
    int reeval_interval = 200;
    double ffl_alpha = 1.0;
};

struct ScheduleConfig {
    double stage1_threshold = 0.95;
    int stage1_window = 50;
    double ramp_fraction = 0.2;
};

struct OptimConfig {
    double lr = 1e-4;
    double min_lr_fraction = 0.0; // cosine decays to lr * min_lr_fraction
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double critic_lr = 1e-4;
    double critic_beta1 = 0.5;
    double critic_beta2 = 0.9;
    double gp_lambda = 10.0;
    int critic_channels = 16;
};

struct TrainConfig {
    ModelConfig model;
    LossWeights loss;
    ScheduleConfig schedule;
    OptimConfig optim;
    NoiseRanges noise;
    std::vector<NoiseKind> suite{kSuiteKinds.begin(), kSuiteKinds.end()};
    int batch_size = 8;
    int total_steps = 2000;
    int log_every = 10;
    int checkpoint_every = 250;
    /// When set, training stops as soon as this stage would be entered.
    std::optional<Stage> stop_before;
    std::uint64_t seed = 0;

    void validate() const;
    int ramp_steps() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults, so partial files act as overrides.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adam with bias correction over every tensor of a ParamSet.
class Adam {
public:
    Adam(ParamSet& params, double beta1, double beta2, double eps);
    void step(double lr);
    long steps() const { return t_; }
    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);

private:
    ParamSet& params_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Four strided convolutions with LeakyReLU; one score per sample.
class Critic {
public:
    Critic(int channels, std::uint64_t seed);
    Var score(const Var& x) const;
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    ParamSet params_;
    std::vector<Conv> layers_;
};

/// Fixed, randomly initialised convolutional feature stack for the perceptual
/// distance (channel-normalised feature differences summed over layers).
class PerceptualNet {
public:
    explicit PerceptualNet(std::uint64_t seed = 0x9E3779B9ULL);
    Var distance(const Var& a, const Var& b) const;

private:
    std::vector<Conv> layers_;
};

struct QualityTerms {
    Var total;
    double yuv = 0, perceptual = 0, ffl = 0, gan = 0;
};

QualityTerms quality_loss(const Var& x, const Var& xt, const PerceptualNet& perceptual, const Critic& critic,
                          const LossWeights& w);

/// BCE(clean) + gamma * sum of BCE(noised) given decoder outputs.
Var recovery_from_probs(const Var& p_clean, const std::vector<Var>& p_noised, const Tensor& bits, double gamma);
Var recovery_loss(const WatermarkModel& model, const Var& xt, const Tensor& bits, const std::vector<NoiseSpec>& active,
                  double gamma, Rng& rng);

/// Indices of the k largest losses (ties resolved towards lower indices), ascending.
std::vector<int> select_worst_k(const std::vector<double>& losses, int k);

struct WorstK {
    std::vector<int> indices;
    std::vector<double> losses;
};
WorstK reevaluate_worst_k(const WatermarkModel& model, const Tensor& x, const Tensor& bits,
                          const std::vector<NoiseKind>& suite, const NoiseRanges& ranges, int k, Rng& rng);

struct CriticStats {
    double loss = 0, wasserstein = 0, penalty = 0;
};
/// Gradient-penalty term alone (no parameter update).
double gradient_penalty(Critic& critic, const Tensor& real, const Tensor& fake, double lambda, Rng& rng);
/// One WGAN-GP update on batches of equal shape.
CriticStats critic_step(Critic& critic, Adam& opt, const Tensor& real, const Tensor& fake, double lambda, double lr,
                        Rng& rng);

struct TrainState {
    Stage stage = Stage::Extraction;
    int step = 0;
    std::vector<int> active;
    int stage2_start = -1;
    int last_reeval = -1;
    std::deque<double> recent_acc;
};

double alpha_q(const TrainState& s, const TrainConfig& c);

struct LossBreakdown {
    Var total;
    QualityTerms quality;
    Var recovery;
    Var xt; // pre-clamp watermarked batch
    Var p_clean;
    double alpha_q = 0;
    double bit_acc = 0;
};

/// alpha_q * quality + alpha_r * recovery for x [N,3,R,R] and bits [N,l].
LossBreakdown total_loss(const WatermarkModel& model, const Tensor& x, const Tensor& bits, const TrainState& state,
                         const TrainConfig& cfg, const PerceptualNet& perceptual, const Critic& critic,
                         const std::vector<NoiseSpec>& active, Rng& rng);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    TrainState state;
    bool stopped_early = false;
};

/// Owns the model, critic, optimisers and schedule state of one run.
class Trainer {
public:
    /// `images` must already be at the working resolution.
    Trainer(TrainConfig cfg, std::vector<ImageBuffer> images);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Restores model, critic, optimiser and schedule state.
    void resume(const Checkpoint& ck);
    /// Runs until total_steps (or stop_before). Appends JSON records to `log`.
    TrainResult run(const std::filesystem::path& checkpoint_path, std::ostream* log, std::ostream* progress = nullptr);

    Checkpoint checkpoint() const;
    const TrainState& state() const { return state_; }
    const TrainConfig& config() const { return cfg_; }
    WatermarkModel& model() { return model_; }

private:
    nlohmann::json step_once(std::ostream* log);
    void enter(Stage s, std::ostream* log);
    void reevaluate(const Tensor& x, const Tensor& bits, std::ostream* log);
    double lr_at(int step, double base) const;

    TrainConfig cfg_;
    std::vector<ImageBuffer> images_;
    WatermarkModel model_;
    Critic critic_;
    PerceptualNet perceptual_;
    Adam opt_, critic_opt_;
    TrainState state_;
};

/// Loads every readable image in `dir` (sorted by name) resized to `resolution`.
std::vector<ImageBuffer> load_training_images(const std::filesystem::path& dir, int resolution,
                                              std::ostream* warnings = nullptr);

} // namespace wmlab
