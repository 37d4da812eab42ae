#include "idalab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

namespace idalab {

void TrainConfig::validate() const {
  if (lambda < 0.0 || mu < 0.0 || gamma < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(h_m > 0.0)) throw std::invalid_argument("h_m must be positive");
  if (pretrain_epochs <= 0 || pretrain_epochs >= epochs) {
    throw std::invalid_argument("need 0 < pretrain_epochs < epochs");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (lr_alpha < 0.0 || lr_beta < 0.0) throw std::invalid_argument("lr_alpha and lr_beta must be non-negative");
  if (confidence_threshold < 0.0 || confidence_threshold >= 1.0) {
    throw std::invalid_argument("confidence_threshold must lie in [0, 1)");
  }
  if (!(ema_coeff > 0.0 && ema_coeff <= 1.0)) throw std::invalid_argument("ema_coeff must lie in (0, 1]");
  if (reestimate_period < 0) throw std::invalid_argument("reestimate_period must be >= 0");
}

double lr_schedule(double lr0, double progress, double alpha, double beta) {
  if (progress < 0.0 || progress > 1.0) throw std::invalid_argument("lr_schedule: progress outside [0, 1]");
  return lr0 / std::pow(1.0 + alpha * progress, beta);
}

double grl_ramp(double progress) { return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0; }

namespace {

std::vector<double> row_max(const Tensor& probs) {
  std::vector<double> out(probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto r = probs.row(i);
    out[i] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

std::string describe_failure(const StepLosses& l, const TrainBatch& batch) {
  std::ostringstream os;
  os << "non-finite training loss: L_C=" << l.classification << " L_DSM=" << l.centroid
     << " L_DFA=" << l.discriminative << " L_DC=" << l.domain << "; source labels [";
  for (std::size_t i = 0; i < batch.source_y.size(); ++i) os << (i ? "," : "") << batch.source_y[i];
  os << "]; non-finite inputs: source=" << !batch.source_x.all_finite() << " target=" << !batch.target_x.all_finite();
  return os.str();
}

}  // namespace

StepLosses train_step(ModelState& state, const TrainBatch& batch, CentroidBank& bank, const LabelShiftState* shift,
                      const TrainConfig& cfg, double progress) {
  if (batch.source_x.rows() != batch.target_x.rows()) {
    throw std::invalid_argument("train_step: source and target batches must have equal size");
  }
  Tape tape;
  Var fs = features(tape, state, tape.constant(batch.source_x));
  Var ft = features(tape, state, tape.constant(batch.target_x));
  Var ps = classify(tape, state, fs);
  Var pt = classify(tape, state, ft);

  StepLosses out;
  Var lc = cross_entropy(ps, batch.source_y);
  Var total = lc;
  out.classification = lc.value()[0];

  if (cfg.lambda > 0.0 || cfg.mu > 0.0) {
    const auto pseudo = shift ? calibrate(pt.value(), shift->weights) : pseudo_labels(pt.value());
    WeightedBatch src{fs, batch.source_y, row_max(ps.value())};
    WeightedBatch tgt{ft, {}, {}};
    tgt.labels.reserve(pseudo.size());
    tgt.weights.reserve(pseudo.size());
    for (const auto& p : pseudo) {
      tgt.labels.push_back(p.calibrated_label);
      tgt.weights.push_back(shift && cfg.calibrated_weights ? p.calibrated_confidence : p.raw_confidence);
    }
    if (cfg.lambda > 0.0) {
      const auto cs = update_centroids(bank, src, Domain::source);
      const auto ct = update_centroids(bank, tgt, Domain::target);
      const auto dsm = centroid_alignment_loss(cs, ct);
      out.centroid = dsm.value.value()[0];
      out.centroid_degenerate = dsm.degenerate;
      total = add(total, affine(dsm.value, cfg.lambda, 0.0));
    }
    if (cfg.mu > 0.0) {
      const auto dfa = discriminative_alignment_loss(src, tgt);
      out.discriminative = dfa.value.value()[0];
      out.discriminative_degenerate = dfa.degenerate;
      total = add(total, affine(dfa.value, cfg.mu, 0.0));
    }
  }
  if (cfg.gamma > 0.0) {
    const double coeff = cfg.grl_schedule ? grl_ramp(progress) : 1.0;
    Var ldc = domain_adversarial_loss(discriminate(tape, state, fs, coeff), discriminate(tape, state, ft, coeff));
    out.domain = ldc.value()[0];
    total = add(total, affine(ldc, cfg.gamma, 0.0));
  }
  out.total = total.value()[0];
  if (!std::isfinite(out.total)) throw NumericFailure(describe_failure(out, batch));

  tape.backward(total);
  const auto params = state.parameters();
  sgd_step(params, lr_schedule(cfg.lr0, progress, cfg.lr_alpha, cfg.lr_beta), cfg.momentum, state.velocity);
  return out;
}

Tensor infer(ModelState& state, const DomainDataset& ds) { return predict_proba(state, ds.features()); }

namespace {

void check_compatible(const DomainDataset& source, const DomainDataset& target, const ModelConfig& model_cfg) {
  if (source.domain() != Domain::source || target.domain() != Domain::target) {
    throw std::invalid_argument("run: expected a source and a target dataset");
  }
  if (source.dim() != target.dim() || source.num_classes() != target.num_classes()) {
    throw std::invalid_argument("run: source and target differ in feature dimension or class count");
  }
  if (model_cfg.input_dim != source.dim() || model_cfg.num_classes != source.num_classes()) {
    throw std::invalid_argument("run: model config does not match the datasets");
  }
}

std::size_t steps_per_epoch(std::size_t target_size, std::size_t batch_size) {
  return std::max<std::size_t>(1, target_size / batch_size);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{seed, purpose};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kSourceStream = 2;
constexpr std::uint64_t kTargetStream = 3;

LabelShiftState estimate_shift(ModelState& state, const DomainDataset& source, const DomainDataset& target,
                               const TrainConfig& cfg) {
  const Tensor probs = infer(state, target);
  const auto pseudo = pseudo_labels(probs);
  auto p_t = estimate_target_distribution(pseudo, cfg.confidence_threshold, target.num_classes());
  auto p_s = source_distribution(source.labels(), source.num_classes());
  return LabelShiftState::build(std::move(p_s), std::move(p_t), cfg.h_m);
}

}  // namespace

RunResult run(const DomainDataset& source, const DomainDataset& target, const ModelConfig& model_cfg,
              const TrainConfig& cfg, EpochObserver* observer) {
  cfg.validate();
  model_cfg.validate();
  check_compatible(source, target, model_cfg);

  RunResult result{init_model(model_cfg, cfg.seed), {}, std::nullopt};
  ModelState& state = result.state;
  CentroidBank bank(model_cfg.num_classes, model_cfg.bottleneck_dim, cfg.ema_coeff);
  BalancedSampler sampler(source, cfg.batch_size, stream(cfg.seed, kSourceStream)());
  auto target_rng = stream(cfg.seed, kTargetStream);
  const auto src_labels = source.labels();

  const std::size_t per_epoch = steps_per_epoch(target.size(), cfg.batch_size);
  const std::size_t batch = std::min(cfg.batch_size, target.size());
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  std::vector<std::size_t> order(target.size());
  std::size_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool stage2 = epoch > cfg.pretrain_epochs;
    const LabelShiftState* active = stage2 && cfg.use_lsc && result.shift ? &*result.shift : nullptr;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), target_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage2 ? 2 : 1;
    for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
      const double progress = static_cast<double>(step) / total_steps;
      auto src_idx = sampler.next();
      src_idx.resize(batch);
      TrainBatch tb;
      tb.source_x = source.rows(src_idx);
      for (auto i : src_idx) tb.source_y.push_back(src_labels[i]);
      tb.target_x = target.rows(std::span<const std::size_t>(order).subspan(s * batch, batch));

      const StepLosses l = train_step(state, tb, bank, active, cfg, progress);
      rec.mean_losses.classification += l.classification;
      rec.mean_losses.centroid += l.centroid;
      rec.mean_losses.discriminative += l.discriminative;
      rec.mean_losses.domain += l.domain;
      rec.mean_losses.total += l.total;
      rec.centroid_degenerate_steps += l.centroid_degenerate;
      rec.discriminative_degenerate_steps += l.discriminative_degenerate;
      rec.learning_rate = lr_schedule(cfg.lr0, progress, cfg.lr_alpha, cfg.lr_beta);
      rec.grl_coeff = cfg.grl_schedule ? grl_ramp(progress) : 1.0;
    }
    const double n = static_cast<double>(per_epoch);
    for (double* v : {&rec.mean_losses.classification, &rec.mean_losses.centroid, &rec.mean_losses.discriminative,
                      &rec.mean_losses.domain, &rec.mean_losses.total})
      *v /= n;

    const Tensor probs = infer(state, target);
    const auto pseudo = result.shift ? calibrate(probs, result.shift->weights) : pseudo_labels(probs);
    if (result.shift) {
      const auto flips = std::count_if(pseudo.begin(), pseudo.end(), [](const PseudoLabel& p) { return p.calibrated(); });
      rec.calibrated_proportion = static_cast<double>(flips) / static_cast<double>(pseudo.size());
    }
    if (observer) observer->observe(EpochView{epoch, active != nullptr, probs, pseudo}, rec);
    spdlog::debug("epoch {} stage {} total {:.5f} L_C {:.5f}", epoch, rec.stage, rec.mean_losses.total,
                  rec.mean_losses.classification);
    result.records.push_back(std::move(rec));

    const bool boundary = epoch == cfg.pretrain_epochs;
    const bool reestimate = cfg.reestimate_period > 0 && stage2 && epoch < cfg.epochs &&
                            (epoch - cfg.pretrain_epochs) % cfg.reestimate_period == 0;
    if (boundary || reestimate) result.shift = estimate_shift(state, source, target, cfg);
  }
  return result;
}

ModelState run_source_only(const DomainDataset& source, std::size_t target_size, const ModelConfig& model_cfg,
                           const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  ModelState state = init_model(model_cfg, cfg.seed);
  BalancedSampler sampler(source, cfg.batch_size, stream(cfg.seed, kSourceStream)());
  const auto labels = source.labels();
  const std::size_t per_epoch = steps_per_epoch(target_size, cfg.batch_size);
  const std::size_t batch = std::min(cfg.batch_size, target_size);
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  auto params = state.parameters();
  for (std::size_t step = 0; step < per_epoch * static_cast<std::size_t>(cfg.epochs); ++step) {
    auto idx = sampler.next();
    idx.resize(batch);
    std::vector<int> y;
    for (auto i : idx) y.push_back(labels[i]);
    Tape tape;
    Var probs = classify(tape, state, features(tape, state, tape.constant(source.rows(idx))));
    tape.backward(cross_entropy(probs, y));
    const double progress = static_cast<double>(step) / total_steps;
    sgd_step(params, lr_schedule(cfg.lr0, progress, cfg.lr_alpha, cfg.lr_beta), cfg.momentum, state.velocity);
  }
  return state;
}

}  // namespace idalab
