#include "support.hpp"

#include "wmlab/synth.hpp"
#include "wmlab/training.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

std::vector<int> brute_force_worst(const std::vector<double>& losses, int k)
{
    const int n = static_cast<int>(losses.size());
    std::vector<int> best;
    double best_sum = -1.0;
    // subsets in lexicographic order, so ties keep the lowest indices
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + k, true);
    do {
        std::vector<int> idx;
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            if (pick[i]) {
                idx.push_back(i);
                s += losses[i];
            }
        if (s > best_sum) {
            best_sum = s;
            best = idx;
        }
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return best;
}

double subset_sum(const std::vector<double>& losses, const std::vector<int>& idx)
{
    double s = 0.0;
    for (int i : idx) s += losses[i];
    return s;
}

TrainConfig tiny_train_config()
{
    TrainConfig c;
    c.model.working_resolution = 32;
    c.model.bit_length = 8;
    c.model.encoder_base_channels = 4;
    c.model.watermark_plane_channels = 2;
    c.model.decoder_width = 8;
    c.model.seed = 2;
    c.optim.critic_channels = 4;
    c.optim.lr = 1e-3;
    c.suite = {NoiseKind::Flip, NoiseKind::GaussianBlur, NoiseKind::Brightness};
    c.loss.k = 2;
    c.loss.reeval_interval = 3;
    c.schedule.stage1_threshold = 0.0;
    c.schedule.stage1_window = 2;
    c.schedule.ramp_fraction = 0.25;
    c.batch_size = 2;
    c.total_steps = 12;
    c.log_every = 1;
    c.checkpoint_every = 4;
    c.seed = 9;
    return c;
}

std::vector<ImageBuffer> tiny_images()
{
    std::vector<ImageBuffer> out;
    for (int i = 0; i < 3; ++i) out.push_back(synthetic_image(32, 32, 100 + i));
    return out;
}

std::filesystem::path temp_path(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "wmlab_test_training";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::vector<double>> param_values(WatermarkModel& m)
{
    std::vector<std::vector<double>> out;
    for (const auto& [name, v] : m.params().items()) out.push_back(v.value().vec());
    return out;
}

} // namespace

TEST_CASE("worst-k selection agrees with exhaustive enumeration")
{
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> losses(14);
        for (double& v : losses) v = trial % 3 == 0 ? std::floor(rng.uniform(0.0, 4.0)) : rng.uniform(0.0, 2.0);
        for (int k : {1, 2, 3}) {
            const auto fast = select_worst_k(losses, k);
            const auto slow = brute_force_worst(losses, k);
            CHECK(subset_sum(losses, fast) == subset_sum(losses, slow));
            CHECK(fast == slow);
        }
    }
    CHECK(select_worst_k({0.1, 0.5, 0.3}, 0).empty());
    CHECK_THROWS_AS(select_worst_k({0.1, 0.2}, 3), std::invalid_argument);
}

TEST_CASE("quality weight ramps linearly through the second stage")
{
    TrainConfig c;
    c.total_steps = 1000;
    c.schedule.ramp_fraction = 0.2;
    TrainState s;
    s.stage = Stage::Extraction;
    CHECK(alpha_q(s, c) == c.loss.alpha_q_low);
    s.stage = Stage::Reconstruction;
    s.stage2_start = 300;
    s.step = 300;
    CHECK(alpha_q(s, c) == doctest::Approx(0.1));
    s.step = 400;
    CHECK(alpha_q(s, c) == doctest::Approx(0.1 + 0.5 * 9.9));
    s.step = 500;
    CHECK(alpha_q(s, c) == doctest::Approx(10.0));
    s.step = 900;
    CHECK(alpha_q(s, c) == doctest::Approx(10.0));
    s.stage = Stage::Robustness;
    CHECK(alpha_q(s, c) == c.loss.alpha_q_max);
}

TEST_CASE("training config merges partial files and rejects unknown keys")
{
    TrainConfig c;
    from_json(nlohmann::json::parse(R"({"model": {"bit_length": 16}, "optim": {"lr": 0.01}, "suite": ["Flip"],
                                        "loss": {"k": 1}, "stop_before": "Robustness"})"),
              c);
    CHECK(c.model.bit_length == 16);
    CHECK(c.model.working_resolution == 256);
    CHECK(c.optim.lr == 0.01);
    CHECK(c.optim.critic_lr == 1e-4);
    REQUIRE(c.suite.size() == 1);
    CHECK(c.suite[0] == NoiseKind::Flip);
    CHECK(c.stop_before == Stage::Robustness);
    CHECK_NOTHROW(c.validate());

    const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(c));

    TrainConfig d;
    CHECK_THROWS_AS(from_json(nlohmann::json{{"epochs", 3}}, d), std::invalid_argument);
    CHECK_THROWS_AS(from_json(nlohmann::json{{"optim", {{"learning_rate", 3}}}}, d), std::invalid_argument);
    CHECK_THROWS_AS(from_json(nlohmann::json{{"suite", {"Sharpen"}}}, d), std::invalid_argument);
    CHECK_THROWS_AS(from_json(nlohmann::json{{"stop_before", "Done"}}, d), std::invalid_argument);

    TrainConfig bad;
    bad.loss.k = 20;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = TrainConfig{};
    bad.schedule.ramp_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("recovery loss weights noised terms by gamma")
{
    const Tensor bits({1, 2}, std::vector<double>{1.0, 0.0});
    const Var clean = constant(Tensor({1, 2}, std::vector<double>{0.8, 0.3}));
    const Var noised = constant(Tensor({1, 2}, std::vector<double>{0.6, 0.4}));
    const double bce_clean = -(std::log(0.8) + std::log(0.7));
    const double bce_noised = -(std::log(0.6) + std::log(0.6));
    const Var r = recovery_from_probs(clean, {noised, noised}, bits, 0.5);
    CHECK(r.value()[0] == doctest::Approx(bce_clean + 2 * 0.5 * bce_noised).epsilon(1e-12));
}

TEST_CASE("critic sees no distance between identical batches")
{
    Critic critic(4, 3);
    Rng rng(4);
    const Tensor real = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    Adam opt(critic.params(), 0.5, 0.9, 1e-8);
    const CriticStats s = critic_step(critic, opt, real, real, 10.0, 1e-4, rng);
    CHECK(std::abs(s.wasserstein) < 1e-12);
    CHECK(s.penalty >= 0.0);
}

TEST_CASE("a tiny run walks through all three stages")
{
    Trainer trainer(tiny_train_config(), tiny_images());
    std::ostringstream log;
    const auto ckpt = temp_path("tiny.ckpt");
    const TrainResult r = trainer.run(ckpt, &log);
    CHECK_FALSE(r.stopped_early);
    CHECK(r.state.step == 12);
    CHECK(r.state.stage == Stage::Robustness);
    CHECK(r.state.stage2_start == 2);
    CHECK(r.state.active.size() == 2);

    std::vector<std::pair<std::string, int>> stages;
    int reevals = 0, steps = 0;
    std::istringstream in(log.str());
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        if (j.value("event", "") == "stage") stages.emplace_back(j["stage"], j["step"]);
        else if (j.value("event", "") == "reevaluate") ++reevals;
        else ++steps;
    }
    REQUIRE(stages.size() == 3);
    CHECK(stages[0] == std::pair<std::string, int>{"Extraction", 0});
    CHECK(stages[1] == std::pair<std::string, int>{"Reconstruction", 2});
    CHECK(stages[2] == std::pair<std::string, int>{"Robustness", 5});
    CHECK(reevals == 3); // steps 5, 8, 11
    CHECK(steps == 12);

    const Checkpoint ck = load_checkpoint(ckpt);
    CHECK(ck.meta.at("step") == 12);
    CHECK(ck.meta.at("stage") == "Robustness");
}

TEST_CASE("stopping and resuming reproduces an uninterrupted run")
{
    Trainer full(tiny_train_config(), tiny_images());
    full.run(temp_path("full.ckpt"), nullptr);

    TrainConfig staged = tiny_train_config();
    staged.stop_before = Stage::Robustness;
    Trainer first(staged, tiny_images());
    const auto ckpt = temp_path("staged.ckpt");
    const TrainResult r = first.run(ckpt, nullptr);
    CHECK(r.stopped_early);
    CHECK(r.state.step == 5);
    CHECK(r.state.stage == Stage::Reconstruction);

    Trainer second(tiny_train_config(), tiny_images());
    second.resume(load_checkpoint(ckpt));
    CHECK(second.state().step == 5);
    second.run(ckpt, nullptr);
    CHECK(param_values(second.model()) == param_values(full.model()));
}

TEST_CASE("trainer rejects unusable inputs")
{
    CHECK_THROWS_AS(Trainer(tiny_train_config(), {}), std::invalid_argument);
    CHECK_THROWS_AS(Trainer(tiny_train_config(), {synthetic_image(40, 40, 1)}), std::invalid_argument);
}
