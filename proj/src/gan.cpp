#include "sinogan/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sinogan/errors.hpp"
#include "sinogan/random.hpp"

namespace sinogan {

using ad::Graph;
using ad::Var;

namespace {

constexpr std::uint64_t kGeneratorInitStream = 0x6e00;
constexpr std::uint64_t kDiscriminatorInitStream = 0xd100;
constexpr std::uint64_t kShuffleStream = 0x5100000;
constexpr std::uint64_t kLevelStream = 0x1e0000000;

// He-uniform weights, zero bias.
void push_layer(ParameterList& params, const std::string& name, Shape weight_shape, std::size_t fan_in,
                std::uint64_t seed, std::uint64_t stream) {
  Tensor w(weight_shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  CounterRng rng(seed, stream);
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  params.push_back({name + ".weight", std::move(w)});
  params.push_back({name + ".bias", Tensor({weight_shape[0]}, 0.0)});
}

void push_conv(ParameterList& params, const std::string& name, std::size_t cin, std::size_t cout, std::uint64_t seed,
               std::uint64_t stream) {
  push_layer(params, name, {cout, cin, 3, 3}, cin * 9, seed, stream);
}

Var conv_relu(std::span<const Var> p, std::size_t layer, Var x) {
  return ad::relu(ad::conv2d(x, p[2 * layer], p[2 * layer + 1]));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const ModelCheckpoint& c, const std::string& key) {
  const std::string& s = c.require(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint metadata '" + key + "' is not a number: " + s);
  }
}

std::uint64_t parse_u64(const ModelCheckpoint& c, const std::string& key) {
  const std::string& s = c.require(key);
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint metadata '" + key + "' is not an integer: " + s);
  }
}

std::vector<Tensor*> tensor_ptrs(ParameterList& params) {
  std::vector<Tensor*> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(&p.value);
  return out;
}

std::vector<Tensor> collect_grads(const Graph& g, std::span<const Var> vars) {
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(g.grad(v));
  return grads;
}

void require_finite_params(const ParameterList& params, const char* net) {
  for (const auto& p : params) {
    if (!p.value.all_finite()) throw TrainingDiverged(std::string(net) + " parameter '" + p.name + "' became non-finite");
  }
}

void validate_dataset(std::span<const TrainingSample> dataset, std::size_t views, std::size_t bins) {
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    auto bad = [&](const Sinogram& x) { return x.views != views || x.bins != bins || x.values.size() != views * bins; };
    if (bad(s.clean)) throw DimensionError("train: sample " + std::to_string(i) + " clean sinogram has wrong shape");
    if (s.noisy.empty()) throw ConfigError("train: sample " + std::to_string(i) + " has no noisy sinogram");
    for (const auto& n : s.noisy) {
      if (bad(n)) throw DimensionError("train: sample " + std::to_string(i) + " noisy sinogram has wrong shape");
    }
  }
}

}  // namespace

std::size_t scaled_channels(std::size_t base, double channel_scale) {
  if (!(channel_scale > 0.0) || channel_scale > 1.0) throw ConfigError("channel_scale must be in (0, 1]");
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(base) * channel_scale));
  return std::max<std::size_t>(c, 1);
}

GeneratorLayout GeneratorLayout::with_scale(double s) {
  GeneratorLayout l{};
  for (std::size_t i = 0; i < 4; ++i) {
    l.encoder[i] = scaled_channels(kEncoderChannels[i], s);
    l.decoder[i] = scaled_channels(kDecoderChannels[i], s);
  }
  return l;
}

DiscriminatorLayout DiscriminatorLayout::with_scale(double s, std::size_t views, std::size_t bins) {
  if (views % 8 || bins % 8 || views == 0 || bins == 0) {
    throw DimensionError("discriminator input " + std::to_string(views) + "x" + std::to_string(bins) +
                         " is not divisible by 8");
  }
  DiscriminatorLayout l{};
  for (std::size_t i = 0; i < 3; ++i) l.conv[i] = scaled_channels(kDiscriminatorChannels[i], s);
  l.views = views;
  l.bins = bins;
  return l;
}

ParameterList init_generator(const GeneratorLayout& l, std::uint64_t seed) {
  ParameterList p;
  const auto& e = l.encoder;
  const auto& d = l.decoder;
  std::uint64_t stream = kGeneratorInitStream;
  push_conv(p, "gen.e1", 1, e[0], seed, stream++);
  push_conv(p, "gen.e2", e[0], e[1], seed, stream++);
  push_conv(p, "gen.e3", e[1], e[2], seed, stream++);
  push_conv(p, "gen.e4", e[2], e[3], seed, stream++);
  push_conv(p, "gen.d1", e[3], d[0], seed, stream++);
  push_conv(p, "gen.d2", d[0] + e[2], d[1], seed, stream++);
  push_conv(p, "gen.d3", d[1] + e[1], d[2], seed, stream++);
  push_conv(p, "gen.d4", d[2] + e[0], d[3], seed, stream++);
  push_conv(p, "gen.out", d[3], 1, seed, stream++);
  return p;
}

ParameterList init_discriminator(const DiscriminatorLayout& l, std::uint64_t seed) {
  ParameterList p;
  std::uint64_t stream = kDiscriminatorInitStream;
  push_conv(p, "disc.c1", 2, l.conv[0], seed, stream++);
  push_conv(p, "disc.c2", l.conv[0], l.conv[1], seed, stream++);
  push_conv(p, "disc.c3", l.conv[1], l.conv[2], seed, stream++);
  push_layer(p, "disc.dense", {1, l.dense_inputs()}, l.dense_inputs(), seed, stream++);
  return p;
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

std::vector<Var> bind_parameters(Graph& graph, const ParameterList& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(trainable ? graph.variable(p.value) : graph.constant(p.value));
  return vars;
}

Var generator_forward(std::span<const Var> p, Var noisy) {
  if (p.size() != 18) throw DimensionError("generator expects 18 parameter tensors");
  const Tensor& x = noisy.value();
  if (x.rank() != 4 || x.dim(1) != 1) throw DimensionError("generator input must be [b,1,V,B], got " + shape_string(x.shape()));
  if (x.dim(2) % 8 || x.dim(3) % 8) {
    throw DimensionError("generator input spatial dims " + shape_string(x.shape()) + " must be divisible by 8");
  }
  const Var e1 = conv_relu(p, 0, noisy);
  const Var e2 = conv_relu(p, 1, ad::maxpool2(e1));
  const Var e3 = conv_relu(p, 2, ad::maxpool2(e2));
  const Var e4 = conv_relu(p, 3, ad::maxpool2(e3));
  const Var d1 = conv_relu(p, 4, e4);
  const Var d2 = conv_relu(p, 5, ad::concat_channels(ad::upsample2(d1), e3));
  const Var d3 = conv_relu(p, 6, ad::concat_channels(ad::upsample2(d2), e2));
  const Var d4 = conv_relu(p, 7, ad::concat_channels(ad::upsample2(d3), e1));
  return ad::linear(ad::conv2d(d4, p[16], p[17]));
}

Var discriminator_forward(std::span<const Var> p, Var condition, Var candidate) {
  if (p.size() != 8) throw DimensionError("discriminator expects 8 parameter tensors");
  if (condition.shape() != candidate.shape()) {
    throw DimensionError("discriminator: condition " + shape_string(condition.shape()) + " vs candidate " +
                         shape_string(candidate.shape()));
  }
  Var x = ad::concat_channels(condition, candidate);
  x = ad::maxpool2(conv_relu(p, 0, x));
  x = ad::maxpool2(conv_relu(p, 1, x));
  x = ad::maxpool2(conv_relu(p, 2, x));
  return ad::sigmoid(ad::dense(ad::flatten(x), p[6], p[7]));
}

Tensor generator_apply(const ParameterList& generator, const Tensor& noisy) {
  Graph g;
  const auto p = bind_parameters(g, generator, false);
  return generator_forward(p, g.constant(noisy)).value();
}

Tensor discriminator_apply(const ParameterList& discriminator, const Tensor& condition, const Tensor& candidate) {
  Graph g;
  const auto p = bind_parameters(g, discriminator, false);
  return discriminator_forward(p, g.constant(condition), g.constant(candidate)).value();
}

Var discriminator_loss(Var disc_real, Var disc_fake) {
  return ad::add(ad::bce_loss(disc_real, 1.0), ad::bce_loss(disc_fake, 0.0));
}

GanLossTerms gan_losses(Var disc_real, Var disc_fake, Var denoised, Var clean, double lambda_l1) {
  GanLossTerms t;
  t.discriminator = discriminator_loss(disc_real, disc_fake);
  t.generator_adv = ad::bce_loss(disc_fake, 1.0);
  t.generator_l1 = ad::l1_loss(denoised, clean);
  t.generator = ad::add(t.generator_adv, ad::scale(t.generator_l1, lambda_l1));
  return t;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0,1)");
  if (!(lambda_l1 >= 0.0)) throw ConfigError("train: lambda_l1 must be non-negative");
  scaled_channels(1, channel_scale);
}

GanModel init_model(const TrainConfig& config, std::size_t views, std::size_t bins) {
  config.validate();
  GanModel m;
  m.config = config;
  m.views = views;
  m.bins = bins;
  m.generator = init_generator(GeneratorLayout::with_scale(config.channel_scale), config.seed);
  m.discriminator = init_discriminator(DiscriminatorLayout::with_scale(config.channel_scale, views, bins), config.seed);
  std::vector<Tensor> gv, dv;
  for (const auto& p : m.generator) gv.push_back(p.value);
  for (const auto& p : m.discriminator) dv.push_back(p.value);
  m.adam_generator = AdamState::for_parameters(gv, config.adam());
  m.adam_discriminator = AdamState::for_parameters(dv, config.adam());
  return m;
}

TrainingBatch make_batch(std::span<const TrainingSample> dataset, std::span<const std::size_t> indices,
                         std::span<const std::size_t> levels) {
  if (indices.size() != levels.size() || indices.empty()) throw ContractError("make_batch: bad index/level lists");
  const std::size_t views = dataset[indices[0]].clean.views, bins = dataset[indices[0]].clean.bins;
  const std::size_t plane = views * bins;
  TrainingBatch b{Tensor({indices.size(), 1, views, bins}), Tensor({indices.size(), 1, views, bins})};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const TrainingSample& s = dataset[indices[k]];
    const Sinogram& noisy = s.noisy.at(levels[k]);
    const double peak = s.clean.max();
    const double inv = peak > 0.0 ? 1.0 / peak : 1.0;
    for (std::size_t i = 0; i < plane; ++i) {
      b.noisy[k * plane + i] = noisy.values[i] * inv;
      b.clean[k * plane + i] = s.clean.values[i] * inv;
    }
  }
  return b;
}

LossRecord train_step(GanModel& model, const TrainingBatch& batch) {
  const TrainConfig& cfg = model.config;
  LossRecord rec;
  rec.step = model.steps + 1;

  Graph gg;
  const auto gparams = bind_parameters(gg, model.generator, true);
  const Var noisy = gg.constant(batch.noisy);
  const Var fake = generator_forward(gparams, noisy);

  {
    Graph gd;
    const auto dparams = bind_parameters(gd, model.discriminator, true);
    const Var cond = gd.constant(batch.noisy);
    const Var real = discriminator_forward(dparams, cond, gd.constant(batch.clean));
    const Var fake_d = discriminator_forward(dparams, cond, gd.constant(fake.value()));
    const Var loss_d = discriminator_loss(real, fake_d);
    rec.loss_d = loss_d.value().item();
    if (!std::isfinite(rec.loss_d)) {
      throw TrainingDiverged("discriminator loss is non-finite at step " + std::to_string(rec.step));
    }
    gd.backward(loss_d);
    const auto grads = collect_grads(gd, dparams);
    adam_update(tensor_ptrs(model.discriminator), grads, model.adam_discriminator);
  }

  const auto dparams = bind_parameters(gg, model.discriminator, false);
  const Var prob = discriminator_forward(dparams, noisy, fake);
  const Var adv = ad::bce_loss(prob, 1.0);
  const Var l1 = ad::l1_loss(fake, gg.constant(batch.clean));
  const Var loss_g = ad::add(adv, ad::scale(l1, cfg.lambda_l1));
  rec.loss_g_adv = adv.value().item();
  rec.loss_g_l1 = l1.value().item();
  if (!std::isfinite(loss_g.value().item())) {
    throw TrainingDiverged("generator loss is non-finite at step " + std::to_string(rec.step));
  }
  gg.backward(loss_g);
  const auto grads = collect_grads(gg, gparams);
  adam_update(tensor_ptrs(model.generator), grads, model.adam_generator);

  require_finite_params(model.discriminator, "discriminator");
  require_finite_params(model.generator, "generator");
  model.steps = rec.step;
  return rec;
}

void train(GanModel& model, std::span<const TrainingSample> dataset, const TrainHooks& hooks) {
  const TrainConfig& cfg = model.config;
  cfg.validate();
  validate_dataset(dataset, model.views, model.bins);
  const std::size_t n = dataset.size();
  std::size_t ran = 0;
  try {
    for (std::size_t epoch = model.epochs_completed; epoch < cfg.epochs; ++epoch) {
      if (hooks.max_epochs_this_call && ran >= hooks.max_epochs_this_call) break;
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng shuffle(cfg.seed, kShuffleStream + epoch);
      for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
      }
      CounterRng level_rng(cfg.seed, kLevelStream + epoch);
      std::vector<std::size_t> level(n);
      for (std::size_t i = 0; i < n; ++i) {
        level[i] = static_cast<std::size_t>(
            level_rng.uniform_int(0, static_cast<std::int64_t>(dataset[i].noisy.size()) - 1));
      }
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t end = std::min(n, start + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        std::vector<std::size_t> lv;
        for (std::size_t i : idx) lv.push_back(level[i]);
        const LossRecord rec = train_step(model, make_batch(dataset, idx, lv));
        if (hooks.on_step) hooks.on_step(rec);
      }
      model.epochs_completed = epoch + 1;
      ++ran;
      if (hooks.on_epoch) hooks.on_epoch(model);
    }
  } catch (const TrainingDiverged&) {
    if (hooks.on_diverge) hooks.on_diverge(model);
    throw;
  }
}

GanModel train(const TrainConfig& config, std::span<const TrainingSample> dataset, const TrainHooks& hooks) {
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  GanModel model = init_model(config, dataset[0].clean.views, dataset[0].clean.bins);
  train(model, dataset, hooks);
  return model;
}

ModelCheckpoint to_checkpoint(const GanModel& m) {
  ModelCheckpoint c;
  const TrainConfig& t = m.config;
  c.set("format", "sinogan-cgan");
  c.set("views", std::to_string(m.views));
  c.set("bins", std::to_string(m.bins));
  c.set("epochs_completed", std::to_string(m.epochs_completed));
  c.set("steps", std::to_string(m.steps));
  c.set("seed", std::to_string(t.seed));
  c.set("epochs", std::to_string(t.epochs));
  c.set("batch_size", std::to_string(t.batch_size));
  c.set("learning_rate", fmt_double(t.learning_rate));
  c.set("beta1", fmt_double(t.beta1));
  c.set("beta2", fmt_double(t.beta2));
  c.set("lambda_l1", fmt_double(t.lambda_l1));
  c.set("channel_scale", fmt_double(t.channel_scale));
  c.set("adam_generator_steps", std::to_string(m.adam_generator.step_count));
  c.set("adam_discriminator_steps", std::to_string(m.adam_discriminator.step_count));
  for (const auto& p : m.generator) c.tensors.push_back(p);
  for (const auto& p : m.discriminator) c.tensors.push_back(p);
  for (std::size_t i = 0; i < m.generator.size(); ++i) {
    c.tensors.push_back({"adam.m." + m.generator[i].name, m.adam_generator.first_moment[i]});
    c.tensors.push_back({"adam.v." + m.generator[i].name, m.adam_generator.second_moment[i]});
  }
  for (std::size_t i = 0; i < m.discriminator.size(); ++i) {
    c.tensors.push_back({"adam.m." + m.discriminator[i].name, m.adam_discriminator.first_moment[i]});
    c.tensors.push_back({"adam.v." + m.discriminator[i].name, m.adam_discriminator.second_moment[i]});
  }
  return c;
}

GanModel from_checkpoint(const ModelCheckpoint& c) {
  if (c.require("format") != "sinogan-cgan") throw FormatError("checkpoint format is not sinogan-cgan");
  TrainConfig t;
  t.seed = parse_u64(c, "seed");
  t.epochs = parse_u64(c, "epochs");
  t.batch_size = parse_u64(c, "batch_size");
  t.learning_rate = parse_double(c, "learning_rate");
  t.beta1 = parse_double(c, "beta1");
  t.beta2 = parse_double(c, "beta2");
  t.lambda_l1 = parse_double(c, "lambda_l1");
  t.channel_scale = parse_double(c, "channel_scale");
  GanModel m = init_model(t, parse_u64(c, "views"), parse_u64(c, "bins"));
  m.epochs_completed = parse_u64(c, "epochs_completed");
  m.steps = parse_u64(c, "steps");
  m.adam_generator.step_count = parse_u64(c, "adam_generator_steps");
  m.adam_discriminator.step_count = parse_u64(c, "adam_discriminator_steps");

  auto load = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = c.find(name);
    if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(src->shape()) + ", expected " +
                        shape_string(dst.shape()));
    }
    dst = *src;
  };
  for (std::size_t i = 0; i < m.generator.size(); ++i) {
    auto& p = m.generator[i];
    load(p.name, p.value);
    load("adam.m." + p.name, m.adam_generator.first_moment[i]);
    load("adam.v." + p.name, m.adam_generator.second_moment[i]);
  }
  for (std::size_t i = 0; i < m.discriminator.size(); ++i) {
    auto& p = m.discriminator[i];
    load(p.name, p.value);
    load("adam.m." + p.name, m.adam_discriminator.first_moment[i]);
    load("adam.v." + p.name, m.adam_discriminator.second_moment[i]);
  }
  return m;
}

Sinogram denoise(const GanModel& model, const Sinogram& noisy) {
  if (noisy.views != model.views || noisy.bins != model.bins || noisy.values.size() != noisy.views * noisy.bins) {
    throw CheckpointIncompatible("denoise: sinogram " + std::to_string(noisy.views) + "x" + std::to_string(noisy.bins) +
                                 " does not match checkpoint " + std::to_string(model.views) + "x" +
                                 std::to_string(model.bins));
  }
  Sinogram out(noisy.views, noisy.bins);
  out.counts_scale = noisy.counts_scale;
  const double peak = noisy.max();
  if (!(peak > 0.0)) return out;
  Tensor x({1, 1, noisy.views, noisy.bins});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = noisy.values[i] / peak;
  const Tensor y = generator_apply(model.generator, x);
  for (std::size_t i = 0; i < y.numel(); ++i) out.values[i] = std::max(0.0, y[i]) * peak;
  return out;
}

}  // namespace sinogan
