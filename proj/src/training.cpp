#include "wmlab/training.hpp"

#include "wmlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace wmlab {

std::string_view stage_name(Stage s)
{
    switch (s) {
    case Stage::Extraction: return "Extraction";
    case Stage::Reconstruction: return "Reconstruction";
    case Stage::Robustness: return "Robustness";
    }
    return "?";
}

Stage stage_from_name(std::string_view name)
{
    for (Stage s : {Stage::Extraction, Stage::Reconstruction, Stage::Robustness})
        if (stage_name(s) == name) return s;
    throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

void TrainConfig::validate() const
{
    model.validate();
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
    if (suite.empty()) throw std::invalid_argument("train: noise suite is empty");
    if (loss.k < 1 || loss.k > static_cast<int>(suite.size()))
        throw std::invalid_argument("train: k must be between 1 and the suite size");
    if (loss.reeval_interval < 1) throw std::invalid_argument("train: reeval_interval must be >= 1");
    for (double v : {loss.alpha_q_low, loss.alpha_q_max, loss.alpha_r, loss.beta_yuv, loss.beta_perceptual,
                     loss.beta_ffl, loss.beta_gan, loss.gamma})
        if (!(v >= 0.0)) throw std::invalid_argument("train: loss weights must be >= 0");
    if (loss.alpha_q_low > loss.alpha_q_max) throw std::invalid_argument("train: alpha_q_low exceeds alpha_q_max");
    if (schedule.stage1_window < 1) throw std::invalid_argument("train: stage1_window must be >= 1");
    if (!(schedule.ramp_fraction > 0.0 && schedule.ramp_fraction <= 1.0))
        throw std::invalid_argument("train: ramp_fraction must be in (0, 1]");
    if (!(optim.lr > 0.0) || !(optim.critic_lr > 0.0)) throw std::invalid_argument("train: learning rates must be > 0");
    if (log_every < 1 || checkpoint_every < 1) throw std::invalid_argument("train: log/checkpoint intervals must be >= 1");
}

int TrainConfig::ramp_steps() const
{
    return std::max(1, static_cast<int>(std::lround(schedule.ramp_fraction * total_steps)));
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    nlohmann::json suite = nlohmann::json::array();
    for (NoiseKind k : c.suite) suite.push_back(noise_name(k));
    j = nlohmann::json{
        {"model", c.model},
        {"loss",
         {{"alpha_q_low", c.loss.alpha_q_low},
          {"alpha_q_max", c.loss.alpha_q_max},
          {"alpha_r", c.loss.alpha_r},
          {"beta_yuv", c.loss.beta_yuv},
          {"beta_perceptual", c.loss.beta_perceptual},
          {"beta_ffl", c.loss.beta_ffl},
          {"beta_gan", c.loss.beta_gan},
          {"gamma", c.loss.gamma},
          {"k", c.loss.k},
          {"reeval_interval", c.loss.reeval_interval},
          {"ffl_alpha", c.loss.ffl_alpha}}},
        {"schedule",
         {{"stage1_threshold", c.schedule.stage1_threshold},
          {"stage1_window", c.schedule.stage1_window},
          {"ramp_fraction", c.schedule.ramp_fraction}}},
        {"optim",
         {{"lr", c.optim.lr},
          {"min_lr_fraction", c.optim.min_lr_fraction},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps},
          {"critic_lr", c.optim.critic_lr},
          {"critic_beta1", c.optim.critic_beta1},
          {"critic_beta2", c.optim.critic_beta2},
          {"gp_lambda", c.optim.gp_lambda},
          {"critic_channels", c.optim.critic_channels}}},
        {"noise", c.noise},
        {"suite", suite},
        {"batch_size", c.batch_size},
        {"total_steps", c.total_steps},
        {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every},
        {"stop_before", c.stop_before ? nlohmann::json(stage_name(*c.stop_before)) : nlohmann::json(nullptr)},
        {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    static const std::vector<std::string> kTop = {"model", "loss", "schedule", "optim", "noise", "suite",
                                                  "batch_size", "total_steps", "log_every", "checkpoint_every",
                                                  "stop_before", "seed"};
    for (const auto& [key, _] : j.items())
        if (std::find(kTop.begin(), kTop.end(), key) == kTop.end())
            throw std::invalid_argument("unknown config key '" + key + "'");

    auto known = [](const nlohmann::json& obj, const char* section, std::initializer_list<const char*> keys) {
        for (const auto& [key, _] : obj.items())
            if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; }))
                throw std::invalid_argument("unknown config key '" + std::string(section) + "." + key + "'");
    };
    auto read = [](const nlohmann::json& obj, const char* key, auto& field) {
        if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("model")) {
        nlohmann::json merged = c.model;
        merged.update(j.at("model"));
        c.model = merged.get<ModelConfig>();
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        known(l, "loss", {"alpha_q_low", "alpha_q_max", "alpha_r", "beta_yuv", "beta_perceptual", "beta_ffl", "beta_gan",
                          "gamma", "k", "reeval_interval", "ffl_alpha"});
        read(l, "alpha_q_low", c.loss.alpha_q_low);
        read(l, "alpha_q_max", c.loss.alpha_q_max);
        read(l, "alpha_r", c.loss.alpha_r);
        read(l, "beta_yuv", c.loss.beta_yuv);
        read(l, "beta_perceptual", c.loss.beta_perceptual);
        read(l, "beta_ffl", c.loss.beta_ffl);
        read(l, "beta_gan", c.loss.beta_gan);
        read(l, "gamma", c.loss.gamma);
        read(l, "k", c.loss.k);
        read(l, "reeval_interval", c.loss.reeval_interval);
        read(l, "ffl_alpha", c.loss.ffl_alpha);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        known(s, "schedule", {"stage1_threshold", "stage1_window", "ramp_fraction"});
        read(s, "stage1_threshold", c.schedule.stage1_threshold);
        read(s, "stage1_window", c.schedule.stage1_window);
        read(s, "ramp_fraction", c.schedule.ramp_fraction);
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        known(o, "optim", {"lr", "min_lr_fraction", "beta1", "beta2", "eps", "critic_lr", "critic_beta1", "critic_beta2",
                           "gp_lambda", "critic_channels"});
        read(o, "lr", c.optim.lr);
        read(o, "min_lr_fraction", c.optim.min_lr_fraction);
        read(o, "beta1", c.optim.beta1);
        read(o, "beta2", c.optim.beta2);
        read(o, "eps", c.optim.eps);
        read(o, "critic_lr", c.optim.critic_lr);
        read(o, "critic_beta1", c.optim.critic_beta1);
        read(o, "critic_beta2", c.optim.critic_beta2);
        read(o, "gp_lambda", c.optim.gp_lambda);
        read(o, "critic_channels", c.optim.critic_channels);
    }
    if (j.contains("noise")) {
        nlohmann::json merged = c.noise;
        merged.update(j.at("noise"));
        c.noise = merged.get<NoiseRanges>();
    }
    if (j.contains("suite")) {
        c.suite.clear();
        for (const auto& name : j.at("suite")) {
            const auto k = noise_from_name(name.get<std::string>());
            if (!k || *k == NoiseKind::Identity) throw std::invalid_argument("unknown noise '" + name.get<std::string>() + "'");
            c.suite.push_back(*k);
        }
    }
    read(j, "batch_size", c.batch_size);
    read(j, "total_steps", c.total_steps);
    read(j, "log_every", c.log_every);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "seed", c.seed);
    if (j.contains("stop_before")) {
        const auto& s = j.at("stop_before");
        c.stop_before = s.is_null() ? std::nullopt : std::optional<Stage>(stage_from_name(s.get<std::string>()));
    }
}

Adam::Adam(ParamSet& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& item : params_.items()) {
        m_.emplace_back(item.second.value().shape());
        v_.emplace_back(item.second.value().shape());
    }
}

void Adam::step(double lr)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& items = params_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        Var& var = items[p].second;
        if (var.grad().empty()) continue;
        Tensor& w = var.mutable_value();
        const Tensor& g = var.grad();
        Tensor& m = m_[p];
        Tensor& v = v_[p];
        for (std::size_t i = 0; i < w.numel(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

void Adam::save(Checkpoint& ck, const std::string& prefix) const
{
    const auto& items = params_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        ck.tensors.emplace_back(prefix + ".m." + items[p].first, m_[p]);
        ck.tensors.emplace_back(prefix + ".v." + items[p].first, v_[p]);
    }
    ck.meta[prefix + ".t"] = t_;
}

void Adam::load(const Checkpoint& ck, const std::string& prefix)
{
    const auto& items = params_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        const Tensor* m = ck.find(prefix + ".m." + items[p].first);
        const Tensor* v = ck.find(prefix + ".v." + items[p].first);
        if (!m || !v) throw CheckpointError("checkpoint lacks optimiser state for " + items[p].first);
        if (!m->same_shape(m_[p]) || !v->same_shape(v_[p]))
            throw CheckpointError("optimiser state shape mismatch for " + items[p].first);
        m_[p] = *m;
        v_[p] = *v;
    }
    t_ = ck.meta.value(prefix + ".t", 0L);
}

Critic::Critic(int channels, std::uint64_t seed)
{
    LayerFactory f(params_, mix_seed(seed, 3));
    const int c = channels;
    layers_.push_back(f.conv("critic.conv0", 3, c, 4, 2, 1));
    layers_.push_back(f.conv("critic.conv1", c, 2 * c, 4, 2, 1));
    layers_.push_back(f.conv("critic.conv2", 2 * c, 4 * c, 4, 2, 1));
    layers_.push_back(f.conv("critic.conv3", 4 * c, 1, 4, 2, 1));
}

Var Critic::score(const Var& x) const
{
    Var h = ops::scale(ops::add_scalar(x, -0.5), 2.0);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = ops::leaky_relu(layers_[i](h), 0.2);
    return ops::mean_per_sample(layers_.back()(h));
}

PerceptualNet::PerceptualNet(std::uint64_t seed)
{
    ParamSet scratch;
    LayerFactory f(scratch, seed);
    layers_.push_back(f.conv("p0", 3, 8, 3, 1, 1));
    layers_.push_back(f.conv("p1", 8, 16, 3, 2, 1));
    layers_.push_back(f.conv("p2", 16, 16, 3, 2, 1));
    // frozen: detach into constants
    for (Conv& c : layers_) {
        c.weight = constant(c.weight.value());
        c.bias = constant(c.bias.value());
    }
}

Var PerceptualNet::distance(const Var& a, const Var& b) const
{
    constexpr double kEps = 1e-8;
    Var ha = ops::scale(ops::add_scalar(a, -0.5), 2.0);
    Var hb = ops::scale(ops::add_scalar(b, -0.5), 2.0);
    Var total;
    for (const Conv& c : layers_) {
        ha = ops::relu(c(ha));
        hb = ops::relu(c(hb));
        const int channels = ha.value().c();
        const Var d = ops::scale(ops::mse(ops::normalize_channels(ha, kEps), ops::normalize_channels(hb, kEps)), channels);
        total = total.defined() ? ops::add(total, d) : d;
    }
    return total;
}

namespace {

const std::array<std::array<double, 3>, 3> kToYuv = {{{0.299, 0.587, 0.114},
                                                      {-0.168735891647856, -0.331264108352144, 0.5},
                                                      {0.5, -0.418687589158345, -0.081312410841655}}};

double scalar(const Var& v) { return v.value()[0]; }

double hard_accuracy(const Tensor& probs, const Tensor& bits)
{
    std::size_t eq = 0;
    for (std::size_t i = 0; i < bits.numel(); ++i) eq += (probs[i] >= 0.5 ? 1.0 : 0.0) == bits[i];
    return static_cast<double>(eq) / static_cast<double>(bits.numel());
}

Tensor random_bits(int n, int l, Rng& rng)
{
    Tensor t({n, l});
    for (double& v : t.vec()) v = static_cast<double>(rng.next() >> 63);
    return t;
}

double batch_psnr(const Tensor& a, const Tensor& b)
{
    const int n = a.n();
    const std::size_t per = a.numel() / n;
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        double se = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            const double d = std::clamp(b[s * per + i], 0.0, 1.0) - a[s * per + i];
            se += d * d;
        }
        const double mse = se / per;
        total += mse > 0 ? 10.0 * std::log10(1.0 / mse) : 100.0;
    }
    return total / n;
}

} // namespace

QualityTerms quality_loss(const Var& x, const Var& xt, const PerceptualNet& perceptual, const Critic& critic,
                          const LossWeights& w)
{
    const Var yuv = ops::mse(ops::mix_channels(x, kToYuv, {0, 0, 0}), ops::mix_channels(xt, kToYuv, {0, 0, 0}));
    const Var per = perceptual.distance(x, xt);
    const Var ffl = ops::focal_frequency(ops::sub(xt, x), w.ffl_alpha);
    const Var gan = ops::scale(ops::mean(critic.score(xt)), -1.0);
    QualityTerms q;
    q.total = ops::add(ops::add(ops::scale(yuv, w.beta_yuv), ops::scale(per, w.beta_perceptual)),
                       ops::add(ops::scale(ffl, w.beta_ffl), ops::scale(gan, w.beta_gan)));
    q.yuv = scalar(yuv);
    q.perceptual = scalar(per);
    q.ffl = scalar(ffl);
    q.gan = scalar(gan);
    return q;
}

Var recovery_from_probs(const Var& p_clean, const std::vector<Var>& p_noised, const Tensor& bits, double gamma)
{
    Var total = ops::bce(p_clean, bits);
    for (const Var& p : p_noised) total = ops::add(total, ops::scale(ops::bce(p, bits), gamma));
    return total;
}

Var recovery_loss(const WatermarkModel& model, const Var& xt, const Tensor& bits, const std::vector<NoiseSpec>& active,
                  double gamma, Rng& rng)
{
    std::vector<Var> noised;
    for (const NoiseSpec& spec : active) noised.push_back(model.decode_batch(apply_noise(spec, xt, rng)));
    return recovery_from_probs(model.decode_batch(xt), noised, bits, gamma);
}

std::vector<int> select_worst_k(const std::vector<double>& losses, int k)
{
    if (k < 0 || k > static_cast<int>(losses.size())) throw std::invalid_argument("select_worst_k: bad k");
    std::vector<int> idx(losses.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return losses[a] > losses[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

WorstK reevaluate_worst_k(const WatermarkModel& model, const Tensor& x, const Tensor& bits,
                          const std::vector<NoiseKind>& suite, const NoiseRanges& ranges, int k, Rng& rng)
{
    NoGradGuard guard;
    const Var xv = constant(x);
    WorstK out;
    for (NoiseKind kind : suite) {
        const NoiseSpec spec = sample_spec(kind, ranges, NoiseMode::TrainDifferentiable, rng);
        out.losses.push_back(scalar(ops::bce(model.decode_batch(apply_noise(spec, xv, rng)), bits)));
    }
    out.indices = select_worst_k(out.losses, k);
    return out;
}

namespace {

/// Stops gradient accumulation into a parameter set while in scope.
class Frozen {
public:
    explicit Frozen(ParamSet& p) : params_(&p) { p.set_trainable(false); }
    Frozen(const Frozen&) = delete;
    Frozen& operator=(const Frozen&) = delete;
    ~Frozen() { release(); }
    void release()
    {
        if (params_) params_->set_trainable(true);
        params_ = nullptr;
    }

private:
    ParamSet* params_;
};

struct PenaltyParts {
    Tensor interp;
    Tensor grads;           // d(sum of scores)/d(interp)
    std::vector<double> coef; // per-sample multiplier for the parameter gradient
    double penalty = 0.0;
};

PenaltyParts penalty_parts(Critic& critic, const Tensor& real, const Tensor& fake, double lambda, Rng& rng)
{
    require_same_shape(real, fake, "gradient penalty");
    const int n = real.n();
    const std::size_t per = real.numel() / n;
    PenaltyParts p;
    p.interp = Tensor(real.shape());
    for (int s = 0; s < n; ++s) {
        const double e = rng.uniform();
        for (std::size_t i = 0; i < per; ++i) p.interp[s * per + i] = e * real[s * per + i] + (1.0 - e) * fake[s * per + i];
    }
    Var xi(p.interp, true);
    {
        const Frozen frozen(critic.params());
        ops::sum(critic.score(xi)).backward();
    }
    p.grads = xi.grad();
    p.coef.resize(n);
    for (int s = 0; s < n; ++s) {
        double sq = 0.0;
        for (std::size_t i = 0; i < per; ++i) sq += p.grads[s * per + i] * p.grads[s * per + i];
        const double norm = std::sqrt(sq);
        p.penalty += lambda * (norm - 1.0) * (norm - 1.0) / n;
        p.coef[s] = norm > 0.0 ? 2.0 * lambda * (norm - 1.0) / norm / n : 0.0;
    }
    return p;
}

} // namespace

double gradient_penalty(Critic& critic, const Tensor& real, const Tensor& fake, double lambda, Rng& rng)
{
    const PenaltyParts p = penalty_parts(critic, real, fake, lambda, rng);
    critic.params().zero_grad();
    return p.penalty;
}

CriticStats critic_step(Critic& critic, Adam& opt, const Tensor& real, const Tensor& fake, double lambda, double lr,
                        Rng& rng)
{
    const PenaltyParts p = penalty_parts(critic, real, fake, lambda, rng);
    critic.params().zero_grad();

    // The penalty's parameter gradient is sum_i c_i (dg_i/dtheta)^T g_i, a
    // Hessian-vector product; take it as a central difference of the
    // parameter gradient of the directional derivative along v_i = c_i g_i.
    const int n = real.n();
    const std::size_t per = real.numel() / n;
    Tensor v(real.shape());
    double vmax = 0.0;
    for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < per; ++i) {
            v[s * per + i] = p.coef[s] * p.grads[s * per + i];
            vmax = std::max(vmax, std::abs(v[s * per + i]));
        }
    Var objective = ops::sub(ops::mean(critic.score(constant(fake))), ops::mean(critic.score(constant(real))));
    const double w = scalar(objective);
    if (vmax > 0.0) {
        const double h = 1e-5 / vmax;
        Tensor plus = p.interp, minus = p.interp;
        for (std::size_t i = 0; i < plus.numel(); ++i) {
            plus[i] += h * v[i];
            minus[i] -= h * v[i];
        }
        const Var dd = ops::scale(ops::sub(ops::sum(critic.score(constant(plus))), ops::sum(critic.score(constant(minus)))),
                                  0.5 / h);
        objective = ops::add(objective, dd);
    }
    objective.backward();
    opt.step(lr);
    return CriticStats{w + p.penalty, -w, p.penalty};
}

double alpha_q(const TrainState& s, const TrainConfig& c)
{
    switch (s.stage) {
    case Stage::Extraction: return c.loss.alpha_q_low;
    case Stage::Reconstruction: {
        const double f = std::clamp(static_cast<double>(s.step - s.stage2_start) / c.ramp_steps(), 0.0, 1.0);
        return c.loss.alpha_q_low + f * (c.loss.alpha_q_max - c.loss.alpha_q_low);
    }
    case Stage::Robustness: return c.loss.alpha_q_max;
    }
    return c.loss.alpha_q_max;
}

LossBreakdown total_loss(const WatermarkModel& model, const Tensor& x, const Tensor& bits, const TrainState& state,
                         const TrainConfig& cfg, const PerceptualNet& perceptual, const Critic& critic,
                         const std::vector<NoiseSpec>& active, Rng& rng)
{
    LossBreakdown out;
    const Var xv = constant(x);
    out.xt = ops::add(xv, model.residual(xv, bits));
    out.quality = quality_loss(xv, out.xt, perceptual, critic, cfg.loss);
    std::vector<Var> noised;
    for (const NoiseSpec& spec : active) noised.push_back(model.decode_batch(apply_noise(spec, out.xt, rng)));
    out.p_clean = model.decode_batch(out.xt);
    out.recovery = recovery_from_probs(out.p_clean, noised, bits, cfg.loss.gamma);
    out.alpha_q = alpha_q(state, cfg);
    out.total = ops::add(ops::scale(out.quality.total, out.alpha_q), ops::scale(out.recovery, cfg.loss.alpha_r));
    out.bit_acc = hard_accuracy(out.p_clean.value(), bits);
    return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<ImageBuffer> images)
    : cfg_(std::move(cfg)), images_(std::move(images)), model_(cfg_.model),
      critic_(cfg_.optim.critic_channels, cfg_.model.seed), perceptual_(),
      opt_(model_.params(), cfg_.optim.beta1, cfg_.optim.beta2, cfg_.optim.eps),
      critic_opt_(critic_.params(), cfg_.optim.critic_beta1, cfg_.optim.critic_beta2, cfg_.optim.eps)
{
    cfg_.validate();
    if (images_.empty()) throw std::invalid_argument("train: no training images");
    const int r = cfg_.model.working_resolution;
    for (const auto& img : images_)
        if (img.height() != r || img.width() != r)
            throw std::invalid_argument("train: images must be " + std::to_string(r) + "x" + std::to_string(r));
}

double Trainer::lr_at(int step, double base) const
{
    const double f = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, static_cast<double>(step) / cfg_.total_steps)));
    return base * (cfg_.optim.min_lr_fraction + (1.0 - cfg_.optim.min_lr_fraction) * f);
}

void Trainer::enter(Stage s, std::ostream* log)
{
    state_.stage = s;
    if (s == Stage::Reconstruction) state_.stage2_start = state_.step;
    if (log) {
        *log << nlohmann::json{{"event", "stage"}, {"stage", stage_name(s)}, {"step", state_.step}}.dump() << '\n';
        log->flush();
    }
}

void Trainer::reevaluate(const Tensor& x, const Tensor& bits, std::ostream* log)
{
    Rng rng(mix_seed(cfg_.seed, 0xE7A1000ULL + static_cast<std::uint64_t>(state_.step)));
    const WorstK wk = reevaluate_worst_k(model_, x, bits, cfg_.suite, cfg_.noise, cfg_.loss.k, rng);
    state_.active = wk.indices;
    state_.last_reeval = state_.step;
    if (log) {
        nlohmann::json names = nlohmann::json::array();
        for (int i : wk.indices) names.push_back(noise_name(cfg_.suite[i]));
        nlohmann::json losses = nlohmann::json::object();
        for (std::size_t i = 0; i < wk.losses.size(); ++i) losses[std::string(noise_name(cfg_.suite[i]))] = wk.losses[i];
        *log << nlohmann::json{{"event", "reevaluate"}, {"step", state_.step}, {"active", names}, {"losses", losses}}.dump()
             << '\n';
        log->flush();
    }
}

nlohmann::json Trainer::step_once(std::ostream* log)
{
    Rng rng(mix_seed(cfg_.seed, 0x57E9000ULL + static_cast<std::uint64_t>(state_.step)));
    const int r = cfg_.model.working_resolution, b = cfg_.batch_size;
    const int count = static_cast<int>(images_.size());

    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    for (int i = count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    Tensor x({b, 3, r, r});
    const std::size_t per = static_cast<std::size_t>(3) * r * r;
    for (int i = 0; i < b; ++i) {
        const Tensor& src = images_[order[i % count]].tensor();
        std::copy_n(src.data(), per, x.data() + i * per);
    }
    const Tensor bits = random_bits(b, cfg_.model.bit_length, rng);

    if (state_.stage == Stage::Robustness &&
        (state_.last_reeval < 0 || state_.step - state_.last_reeval >= cfg_.loss.reeval_interval))
        reevaluate(x, bits, log);

    std::vector<NoiseSpec> active;
    if (state_.stage == Stage::Robustness)
        for (int i : state_.active) active.push_back(sample_spec(cfg_.suite[i], cfg_.noise, NoiseMode::TrainDifferentiable, rng));

    model_.params().zero_grad();
    Frozen frozen(critic_.params());
    const LossBreakdown lb = total_loss(model_, x, bits, state_, cfg_, perceptual_, critic_, active, rng);
    const double total = lb.total.value()[0];
    nlohmann::json rec{{"step", state_.step},
                       {"stage", stage_name(state_.stage)},
                       {"loss", total},
                       {"quality", lb.quality.total.value()[0]},
                       {"yuv", lb.quality.yuv},
                       {"perceptual", lb.quality.perceptual},
                       {"ffl", lb.quality.ffl},
                       {"gan", lb.quality.gan},
                       {"recovery", lb.recovery.value()[0]},
                       {"alpha_q", lb.alpha_q},
                       {"bit_acc", lb.bit_acc},
                       {"psnr", batch_psnr(x, lb.xt.value())},
                       {"lr", lr_at(state_.step, cfg_.optim.lr)}};
    if (!std::isfinite(total)) return rec;

    lb.total.backward();
    opt_.step(lr_at(state_.step, cfg_.optim.lr));

    frozen.release();
    Tensor fake = lb.xt.value();
    for (double& v : fake.vec()) v = std::clamp(v, 0.0, 1.0);
    critic_.params().zero_grad();
    const CriticStats cs = critic_step(critic_, critic_opt_, x, fake, cfg_.optim.gp_lambda,
                                       lr_at(state_.step, cfg_.optim.critic_lr), rng);
    rec["critic_loss"] = cs.loss;
    rec["wasserstein"] = cs.wasserstein;
    rec["gp"] = cs.penalty;

    state_.recent_acc.push_back(lb.bit_acc);
    while (static_cast<int>(state_.recent_acc.size()) > cfg_.schedule.stage1_window) state_.recent_acc.pop_front();
    ++state_.step;
    return rec;
}

TrainResult Trainer::run(const std::filesystem::path& checkpoint_path, std::ostream* log, std::ostream* progress)
{
    if (state_.step == 0 && log) enter(Stage::Extraction, log);
    TrainResult result;
    while (state_.step < cfg_.total_steps) {
        // stage transitions are decided from the state left by the previous step
        Stage next = state_.stage;
        if (state_.stage == Stage::Extraction && static_cast<int>(state_.recent_acc.size()) >= cfg_.schedule.stage1_window) {
            const double mean = std::accumulate(state_.recent_acc.begin(), state_.recent_acc.end(), 0.0) /
                                static_cast<double>(state_.recent_acc.size());
            if (mean >= cfg_.schedule.stage1_threshold) next = Stage::Reconstruction;
        } else if (state_.stage == Stage::Reconstruction && state_.step - state_.stage2_start >= cfg_.ramp_steps()) {
            next = Stage::Robustness;
        }
        if (next != state_.stage) {
            if (cfg_.stop_before && *cfg_.stop_before == next) {
                result.stopped_early = true;
                break;
            }
            enter(next, log);
        }

        const nlohmann::json rec = step_once(log);
        if (!std::isfinite(rec.at("loss").get<double>())) {
            const auto dump = std::filesystem::path(checkpoint_path.string() + ".diverged.json");
            std::ofstream(dump) << rec.dump(2) << '\n';
            throw TrainingError("non-finite loss at step " + std::to_string(rec.at("step").get<int>()) +
                                "; diagnostics written to " + dump.string());
        }
        const int done = state_.step;
        if (log && (done % cfg_.log_every == 0 || done == cfg_.total_steps)) {
            *log << rec.dump() << '\n';
            log->flush();
        }
        if (progress && done % (cfg_.log_every * 10) == 0)
            *progress << "step " << done << " stage " << stage_name(state_.stage) << " loss " << rec["loss"].get<double>()
                      << " acc " << rec["bit_acc"].get<double>() << " psnr " << rec["psnr"].get<double>() << std::endl;
        if (done % cfg_.checkpoint_every == 0) save_checkpoint(checkpoint(), checkpoint_path);
    }
    save_checkpoint(checkpoint(), checkpoint_path);
    result.state = state_;
    return result;
}

Checkpoint Trainer::checkpoint() const
{
    Checkpoint ck;
    ck.config = cfg_.model;
    store_params(model_.params(), ck);
    store_params(critic_.params(), ck);
    opt_.save(ck, "adam");
    critic_opt_.save(ck, "critic_adam");
    ck.meta["train_config"] = cfg_;
    ck.meta["stage"] = stage_name(state_.stage);
    ck.meta["step"] = state_.step;
    ck.meta["active"] = state_.active;
    ck.meta["stage2_start"] = state_.stage2_start;
    ck.meta["last_reeval"] = state_.last_reeval;
    ck.meta["recent_acc"] = std::vector<double>(state_.recent_acc.begin(), state_.recent_acc.end());
    ck.meta["alpha_q"] = alpha_q(state_, cfg_);
    return ck;
}

void Trainer::resume(const Checkpoint& ck)
{
    restore_params(model_.params(), ck);
    restore_params(critic_.params(), ck);
    opt_.load(ck, "adam");
    critic_opt_.load(ck, "critic_adam");
    state_.stage = stage_from_name(ck.meta.at("stage").get<std::string>());
    state_.step = ck.meta.at("step").get<int>();
    state_.active = ck.meta.at("active").get<std::vector<int>>();
    state_.stage2_start = ck.meta.at("stage2_start").get<int>();
    state_.last_reeval = ck.meta.at("last_reeval").get<int>();
    const auto acc = ck.meta.at("recent_acc").get<std::vector<double>>();
    state_.recent_acc.assign(acc.begin(), acc.end());
    for (int i : state_.active)
        if (i < 0 || i >= static_cast<int>(cfg_.suite.size()))
            throw CheckpointError("checkpoint active noise index out of range for the configured suite");
}

std::vector<ImageBuffer> load_training_images(const std::filesystem::path& dir, int resolution, std::ostream* warnings)
{
    std::vector<ImageBuffer> out;
    for (const NamedImage& img : load_image_dir(dir, warnings)) out.push_back(resize(img.image, resolution, resolution));
    return out;
}

} // namespace wmlab
