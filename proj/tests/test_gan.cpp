#include <cmath>
#include <limits>

#include "doctest.h"
#include "sinogan/errors.hpp"
#include "sinogan/gan.hpp"
#include "sinogan/phantom.hpp"
#include "sinogan/projector.hpp"
#include "support.hpp"

using namespace sinogan;
using testing::random_tensor;

namespace {

// Smallest layout that still exercises every layer and skip connection.
constexpr double kTinyScale = 1.0 / 128.0;

std::vector<TrainingSample> tiny_dataset(std::size_t n, std::size_t views = 8, std::size_t bins = 16) {
  const Geometry g{views, bins, bins};
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    PhantomConfig pc;
    pc.seed = 100 + i;
    pc.size = bins;
    const Sinogram clean = forward_project(generate_random_phantom(pc), g);
    out.push_back({clean, {add_poisson_noise(clean, 200, 2 * i), add_poisson_noise(clean, 10, 2 * i + 1)}});
  }
  return out;
}

TrainConfig tiny_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.channel_scale = kTinyScale;
  c.seed = 5;
  return c;
}

std::size_t conv_params(std::size_t cin, std::size_t cout) { return 9 * cin * cout + cout; }

}  // namespace

TEST_CASE("channel scaling rounds and never drops below one") {
  CHECK(scaled_channels(128, 1.0) == 128);
  CHECK(scaled_channels(128, 0.25) == 32);
  CHECK(scaled_channels(64, 0.125) == 8);
  CHECK(scaled_channels(64, 0.001) == 1);
  CHECK_THROWS_AS(scaled_channels(64, 0.0), ConfigError);
  CHECK_THROWS_AS(scaled_channels(64, 1.5), ConfigError);
}

TEST_CASE("full-width parameter counts follow the skip wiring table") {
  const ParameterList gen = init_generator(GeneratorLayout::with_scale(1.0), 1);
  REQUIRE(gen.size() == 18);
  CHECK(gen[0].name == "gen.e1.weight");
  CHECK(gen[0].value.numel() + gen[1].value.numel() == 1280);
  // (cin, cout) per conv: encoder, decoder with concatenated skips, output.
  const std::size_t table[9][2] = {{1, 128},          {128, 256},       {256, 512},      {512, 512}, {512, 512},
                                   {512 + 512, 256}, {256 + 256, 128}, {128 + 128, 64}, {64, 1}};
  std::size_t expected = 0;
  for (const auto& row : table) expected += conv_params(row[0], row[1]);
  CHECK(expected == 9293825);
  CHECK(parameter_count(gen) == expected);
  CHECK(gen[8].value.shape() == Shape{512, 512, 3, 3});

  const ParameterList disc = init_discriminator(DiscriminatorLayout::with_scale(1.0, 32, 128), 1);
  CHECK(disc[6].value.shape() == Shape{1, 256 * 4 * 16});
}

TEST_CASE("weights are He-uniform per layer and biases start at zero") {
  const ParameterList gen = init_generator(GeneratorLayout::with_scale(0.25), 3);
  for (std::size_t i = 0; i < gen.size(); i += 2) {
    const Tensor& w = gen[i].value;
    const double fan_in = static_cast<double>(w.dim(1) * 9);
    const double bound = std::sqrt(6.0 / fan_in);
    double sum = 0.0, sq = 0.0, peak = 0.0;
    for (double v : w.values()) {
      sum += v;
      sq += v * v;
      peak = std::max(peak, std::abs(v));
    }
    const double n = static_cast<double>(w.numel());
    CHECK(peak <= bound);
    if (n >= 1000) {
      // Uniform(-b, b): mean 0, variance b^2/3. Five standard errors.
      const double var = bound * bound / 3.0;
      CHECK(std::abs(sum / n) < 5.0 * std::sqrt(var / n));
      CHECK(std::abs(sq / n - var) < 5.0 * std::sqrt(4.0 * var * var / 5.0 / n));
      CHECK(peak > 0.9 * bound);
    }
    for (double v : gen[i + 1].value.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("generator preserves shape for spatial sizes divisible by eight") {
  const ParameterList gen = init_generator(GeneratorLayout::with_scale(kTinyScale), 2);
  for (auto [v, b] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 24}, {32, 128}}) {
    const Tensor y = generator_apply(gen, random_tensor({2, 1, v, b}, v + b, 0, 1));
    CHECK(y.shape() == Shape{2, 1, v, b});
  }
  CHECK_THROWS_AS(generator_apply(gen, Tensor({1, 1, 12, 16})), DimensionError);
}

TEST_CASE("zero generator weights output the output-layer bias") {
  ParameterList gen = init_generator(GeneratorLayout::with_scale(kTinyScale), 2);
  for (auto& p : gen) p.value.fill(0.0);
  gen[17].value[0] = 0.37;
  const Tensor y = generator_apply(gen, random_tensor({1, 1, 8, 16}, 9, 0, 1));
  for (double v : y.values()) CHECK(v == 0.37);
}

TEST_CASE("discriminator outputs probabilities independent of batch companions") {
  ParameterList disc = init_discriminator(DiscriminatorLayout::with_scale(kTinyScale * 8, 8, 16), 4);
  const Tensor cond = random_tensor({3, 1, 8, 16}, 10, 0, 1);
  const Tensor cand = random_tensor({3, 1, 8, 16}, 11, 0, 1);
  const Tensor p = discriminator_apply(disc, cond, cand);
  REQUIRE(p.shape() == Shape{3, 1});
  for (double v : p.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  Tensor c1({1, 1, 8, 16}), d1({1, 1, 8, 16});
  std::copy_n(cond.data() + 128, 128, c1.data());
  std::copy_n(cand.data() + 128, 128, d1.data());
  CHECK(discriminator_apply(disc, c1, d1)[0] == doctest::Approx(p[1]).epsilon(1e-14));
  CHECK_THROWS_AS(discriminator_apply(disc, cond, Tensor({3, 1, 8, 8})), DimensionError);

  for (auto& t : disc) t.value.fill(0.0);
  CHECK(discriminator_apply(disc, cond, cand)[0] == 0.5);
}

TEST_CASE("gan loss closed forms") {
  ad::Graph g;
  const ad::Var clean = g.constant(random_tensor({1, 1, 8, 8}, 12));
  const ad::Var half = g.constant(Tensor({1, 1}, 0.5));
  const GanLossTerms t = gan_losses(half, half, clean, clean, 100.0);
  CHECK(t.generator.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const ad::Var other = g.constant(random_tensor({1, 1, 8, 8}, 13));
  const GanLossTerms pure = gan_losses(half, half, other, clean, 0.0);
  CHECK(pure.generator.value().item() == pure.generator_adv.value().item());

  const double eps = 1e-6;
  const GanLossTerms perfect =
      gan_losses(g.constant(Tensor({1, 1}, 1.0 - eps)), g.constant(Tensor({1, 1}, eps)), clean, clean, 100.0);
  CHECK(perfect.discriminator.value().item() == doctest::Approx(2.0 * eps).epsilon(1e-5));
}

TEST_CASE("whole-network finite-difference checks") {
  const ParameterList gen = init_generator(GeneratorLayout::with_scale(kTinyScale), 6);
  const ParameterList disc = init_discriminator(DiscriminatorLayout::with_scale(kTinyScale * 8, 8, 16), 6);
  const Tensor noisy = random_tensor({2, 1, 8, 16}, 14, 0, 1);
  std::vector<Tensor> inputs;
  for (const auto& p : gen) inputs.push_back(p.value);
  for (auto& t : inputs) t = t.reshaped(t.shape());
  // Nonzero biases.
  for (std::size_t i = 1; i < inputs.size(); i += 2) inputs[i] = random_tensor(inputs[i].shape(), 200 + i, -0.1, 0.1);

  SUBCASE("generator") {
    const double err = testing::gradient_check(
        [&](ad::Graph& g, const std::vector<ad::Var>& p) {
          return testing::project_to_scalar(g, generator_forward(p, g.constant(noisy)), 15);
        },
        inputs);
    CHECK(err < 1e-4);
  }
  SUBCASE("discriminator") {
    std::vector<Tensor> dp;
    for (const auto& p : disc) dp.push_back(p.value);
    dp.push_back(random_tensor({2, 1, 8, 16}, 16, 0, 1));
    const double err = testing::gradient_check(
        [&](ad::Graph& g, const std::vector<ad::Var>& p) {
          const std::vector<ad::Var> params(p.begin(), p.begin() + 8);
          return ad::bce_loss(discriminator_forward(params, g.constant(noisy), p[8]), 1.0);
        },
        dp);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("one training step reaches every layer of both networks") {
  GanModel m = init_model(tiny_config(1), 8, 16);
  const auto data = tiny_dataset(2);
  const std::vector<std::size_t> idx{0, 1}, lv{0, 1};
  const TrainingBatch batch = make_batch(data, idx, lv);

  ad::Graph g;
  const auto gp = bind_parameters(g, m.generator, true);
  const auto dp = bind_parameters(g, m.discriminator, true);
  const ad::Var noisy = g.constant(batch.noisy);
  const ad::Var fake = generator_forward(gp, noisy);
  const GanLossTerms t = gan_losses(discriminator_forward(dp, noisy, g.constant(batch.clean)),
                                    discriminator_forward(dp, noisy, fake), fake, g.constant(batch.clean), 100.0);
  auto any_nonzero = [](const Tensor& x) {
    for (double v : x.values())
      if (v != 0.0) return true;
    return false;
  };
  g.backward(t.generator);
  for (std::size_t i = 0; i < gp.size(); ++i) CHECK_MESSAGE(any_nonzero(g.grad(gp[i])), m.generator[i].name);
  g.backward(t.discriminator);
  for (std::size_t i = 0; i < dp.size(); ++i) CHECK_MESSAGE(any_nonzero(g.grad(dp[i])), m.discriminator[i].name);

  const GanModel before = m;
  train_step(m, batch);
  CHECK(m.steps == 1);
  CHECK(m.adam_generator.step_count == 1);
  CHECK(m.adam_discriminator.step_count == 1);
  for (std::size_t i = 0; i < m.generator.size(); i += 2) CHECK_FALSE(m.generator[i].value == before.generator[i].value);
}

TEST_CASE("batches are normalised by the clean maximum") {
  const auto data = tiny_dataset(2);
  const std::vector<std::size_t> idx{1}, lv{1};
  const TrainingBatch b = make_batch(data, idx, lv);
  const double peak = data[1].clean.max();
  double mx = 0.0;
  for (double v : b.clean.values()) mx = std::max(mx, v);
  CHECK(mx == 1.0);
  CHECK(b.noisy[5] == data[1].noisy[1].values[5] / peak);
}

TEST_CASE("training is deterministic and zero epochs keep the initialisation") {
  const auto data = tiny_dataset(3);
  std::vector<LossRecord> a, b;
  TrainHooks ha, hb;
  ha.on_step = [&](const LossRecord& r) { a.push_back(r); };
  hb.on_step = [&](const LossRecord& r) { b.push_back(r); };
  const GanModel ma = train(tiny_config(2), data, ha);
  const GanModel mb = train(tiny_config(2), data, hb);
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].step == i + 1);
    CHECK(a[i].loss_d == b[i].loss_d);
    CHECK(a[i].loss_g_adv == b[i].loss_g_adv);
    CHECK(a[i].loss_g_l1 == b[i].loss_g_l1);
  }
  CHECK(to_checkpoint(ma) == to_checkpoint(mb));

  const GanModel zero = train(tiny_config(0), data);
  CHECK(to_checkpoint(zero) == to_checkpoint(init_model(tiny_config(0), 8, 16)));
  CHECK_THROWS_AS(train(tiny_config(1), {}), ConfigError);
}

TEST_CASE("resuming after an interruption matches an uninterrupted run") {
  const auto data = tiny_dataset(3);
  const GanModel full = train(tiny_config(3), data);

  GanModel part = init_model(tiny_config(3), 8, 16);
  TrainHooks stop;
  stop.max_epochs_this_call = 1;
  train(part, data, stop);
  CHECK(part.epochs_completed == 1);
  GanModel resumed = from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(part))));
  train(resumed, data);
  CHECK(encode_checkpoint(to_checkpoint(resumed)) == encode_checkpoint(to_checkpoint(full)));
}

TEST_CASE("divergence raises and hands the state to the hook") {
  const auto data = tiny_dataset(2);
  TrainConfig c = tiny_config(3);
  c.learning_rate = 1e300;
  bool dumped = false;
  TrainHooks h;
  h.on_diverge = [&](const GanModel&) { dumped = true; };
  CHECK_THROWS_AS(train(c, data, h), TrainingDiverged);
  CHECK(dumped);
}

TEST_CASE("checkpoint round trip preserves forward outputs bit for bit") {
  const auto data = tiny_dataset(2);
  const GanModel m = train(tiny_config(1), data);
  const ModelCheckpoint ck = to_checkpoint(m);
  CHECK(ck.require("format") == "sinogan-cgan");
  CHECK(ck.require("epochs_completed") == "1");
  CHECK(ck.require("channel_scale") == "0.0078125");
  const GanModel back = from_checkpoint(decode_checkpoint(encode_checkpoint(ck)));
  CHECK(back.config == m.config);
  CHECK(back.steps == m.steps);
  const Tensor x = random_tensor({1, 1, 8, 16}, 17, 0, 1);
  CHECK(generator_apply(back.generator, x) == generator_apply(m.generator, x));

  ModelCheckpoint broken = ck;
  broken.tensors[0].value = Tensor({1});
  CHECK_THROWS_AS(from_checkpoint(broken), FormatError);
}

TEST_CASE("denoise keeps shape and metadata and clamps at zero") {
  const auto data = tiny_dataset(2);
  const GanModel m = train(tiny_config(1), data);
  const Sinogram& noisy = data[0].noisy[1];
  const Sinogram out = denoise(m, noisy);
  CHECK(out.views == noisy.views);
  CHECK(out.bins == noisy.bins);
  CHECK(out.counts_scale == noisy.counts_scale);
  for (double v : out.values) CHECK(v >= 0.0);
  const Sinogram again = denoise(m, out);
  CHECK(again.values.size() == out.values.size());
  CHECK_THROWS_AS(denoise(m, Sinogram(16, 16)), CheckpointIncompatible);
}
