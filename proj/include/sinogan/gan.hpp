#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sinogan/adam.hpp"
#include "sinogan/autodiff.hpp"
#include "sinogan/checkpoint.hpp"
#include "sinogan/image.hpp"

namespace sinogan {

using ParameterList = std::vector<NamedTensor>;

// Full-width channel counts of the transformation network and discriminator.
inline constexpr std::array<std::size_t, 4> kEncoderChannels{128, 256, 512, 512};
inline constexpr std::array<std::size_t, 4> kDecoderChannels{512, 256, 128, 64};
inline constexpr std::array<std::size_t, 3> kDiscriminatorChannels{64, 128, 256};

// round(base * scale), at least 1.
std::size_t scaled_channels(std::size_t base, double channel_scale);

struct GeneratorLayout {
  std::array<std::size_t, 4> encoder;
  std::array<std::size_t, 4> decoder;

  static GeneratorLayout with_scale(double channel_scale);
};

struct DiscriminatorLayout {
  std::array<std::size_t, 3> conv;
  std::size_t views;
  std::size_t bins;

  static DiscriminatorLayout with_scale(double channel_scale, std::size_t views, std::size_t bins);
  std::size_t dense_inputs() const { return conv[2] * (views / 8) * (bins / 8); }
};

// Parameter order: e1..e4, d1..d4, out; each as (weight, bias).
// Skip wiring: d2 sees [up(d1), e3], d3 sees [up(d2), e2], d4 sees [up(d3), e1],
// with encoder taps taken before pooling.
ParameterList init_generator(const GeneratorLayout& layout, std::uint64_t seed);
// Parameter order: c1..c3, dense; each as (weight, bias).
ParameterList init_discriminator(const DiscriminatorLayout& layout, std::uint64_t seed);

std::size_t parameter_count(const ParameterList& params);

// Leaf nodes for every parameter, trainable or constant.
std::vector<ad::Var> bind_parameters(ad::Graph& graph, const ParameterList& params, bool trainable);

// noisy [b,1,V,B] -> [b,1,V,B]; V and B divisible by 8.
ad::Var generator_forward(std::span<const ad::Var> params, ad::Var noisy);
// condition, candidate [b,1,V,B] -> probabilities [b,1].
ad::Var discriminator_forward(std::span<const ad::Var> params, ad::Var condition, ad::Var candidate);

Tensor generator_apply(const ParameterList& generator, const Tensor& noisy);
Tensor discriminator_apply(const ParameterList& discriminator, const Tensor& condition, const Tensor& candidate);

struct GanLossTerms {
  ad::Var generator;      // adversarial + lambda * l1
  ad::Var generator_adv;  // bce(disc_fake, 1)
  ad::Var generator_l1;   // l1(denoised, clean)
  ad::Var discriminator;  // bce(disc_real, 1) + bce(disc_fake, 0)
};

ad::Var discriminator_loss(ad::Var disc_real, ad::Var disc_fake);
GanLossTerms gan_losses(ad::Var disc_real, ad::Var disc_fake, ad::Var denoised, ad::Var clean, double lambda_l1);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_l1 = 100.0;
  double channel_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, 1e-8}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One phantom: its clean sinogram and noisy realisations (one per noise level).
struct TrainingSample {
  Sinogram clean;
  std::vector<Sinogram> noisy;
};

struct GanModel {
  TrainConfig config;
  std::size_t views = 0;
  std::size_t bins = 0;
  ParameterList generator;
  ParameterList discriminator;
  AdamState adam_generator;
  AdamState adam_discriminator;
  std::size_t epochs_completed = 0;
  std::uint64_t steps = 0;
};

GanModel init_model(const TrainConfig& config, std::size_t views, std::size_t bins);

struct LossRecord {
  std::uint64_t step = 0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double loss_g_l1 = 0.0;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const GanModel&)> on_epoch;
  // Receives the model state right before a divergence error propagates.
  std::function<void(const GanModel&)> on_diverge;
  // Caps the number of epochs run by this call (0 = no cap). Used to simulate
  // interruption.
  std::size_t max_epochs_this_call = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs from model.epochs_completed up to model.config.epochs. Each batch makes
// one discriminator step then one generator step. Pairs are normalised by the
// clean sinogram maximum; each epoch draws one noise level per phantom.
void train(GanModel& model, std::span<const TrainingSample> dataset, const TrainHooks& hooks = {});
GanModel train(const TrainConfig& config, std::span<const TrainingSample> dataset, const TrainHooks& hooks = {});

// Batch of normalised pairs for (epoch, batch) as used by train().
struct TrainingBatch {
  Tensor noisy;
  Tensor clean;
};
TrainingBatch make_batch(std::span<const TrainingSample> dataset, std::span<const std::size_t> indices,
                         std::span<const std::size_t> levels);

// One discriminator + generator update on a batch; returns the losses.
LossRecord train_step(GanModel& model, const TrainingBatch& batch);

ModelCheckpoint to_checkpoint(const GanModel& model);
GanModel from_checkpoint(const ModelCheckpoint& checkpoint);

class CheckpointIncompatible : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Normalises by the noisy maximum, runs the generator, clamps at 0 and
// rescales. counts_scale is copied from the input.
Sinogram denoise(const GanModel& model, const Sinogram& noisy);

}  // namespace sinogan
