#include "modbal/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "modbal/errors.hpp"
#include "modbal/rng.hpp"

namespace modbal {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0xDA7A;
constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr double kInferenceScoreEma = 0.99;

void axpy(ModelParams& dst, const ModelParams& src, double a) {
  std::vector<double> flat = dst.flatten();
  const std::vector<double> add = src.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += a * add[i];
  dst.assign(flat);
}

template <class R, class F>
double windowed_bias(std::span<const R> records, int window, F diff) {
  if (records.empty()) throw std::invalid_argument("gradient_bias of an empty record sequence");
  if (window < 1) throw std::invalid_argument("gradient_bias window must be >= 1");
  const auto w = static_cast<std::size_t>(window);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t start = 0; start < records.size(); start += w) {
    const std::size_t end = std::min(records.size(), start + w);
    double s = 0.0;
    for (std::size_t i = start; i < end; ++i) s += diff(records[i]);
    total += s / static_cast<double>(end - start);
    ++windows;
  }
  return total / static_cast<double>(windows);
}

}  // namespace

std::uint64_t init_seed(std::uint64_t run_seed) { return derive_seed(run_seed, kInitStream); }

std::uint64_t train_data_seed(std::uint64_t run_seed, std::int64_t index) {
  return derive_seed(derive_seed(run_seed, kTrainStream), static_cast<std::uint64_t>(index));
}

std::uint64_t eval_data_seed(std::uint64_t run_seed, std::int64_t index) {
  return derive_seed(derive_seed(run_seed, kEvalStream), static_cast<std::uint64_t>(index));
}

void sgd_step(ToyModel& model, const ModelParams& grad, const RunConfig& run,
              ModelParams* velocity) {
  std::vector<double> theta = model.params.flatten();
  std::vector<double> g = grad.flatten();
  if (run.weight_decay > 0.0)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += run.weight_decay * theta[i];
  if (velocity != nullptr && run.momentum > 0.0) {
    std::vector<double> v = velocity->flatten();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = run.momentum * v[i] + g[i];
    velocity->assign(v);
    g = std::move(v);
  }
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= run.lr * g[i];
  model.params.assign(theta);
  ++model.version;
}

TrainResult train(const GeneratorConfig& gen, const RunConfig& run, const StepCallback& on_step) {
  run.validate();
  return train(ToyModel::init(run.model, init_seed(run.seed)), gen, run, on_step);
}

TrainResult train(ToyModel model, const GeneratorConfig& gen, const RunConfig& run,
                  const StepCallback& on_step) {
  run.validate();
  gen.validate();
  TrainResult out;
  out.records.reserve(static_cast<std::size_t>(run.steps));
  out.feature_grads.reserve(static_cast<std::size_t>(run.steps));
  ModelParams velocity = model.params.zeros_like();
  const double inv_b = 1.0 / run.batch_size;
  DominanceScores smoothed{0.5, 0.5, run.delta};

  for (int t = 0; t < run.steps; ++t) {
    ModelParams grad = model.params.zeros_like();
    ModelParams task_grad = model.params.zeros_like();
    AuxParamGrad probe_a{Matrix(1, run.model.feature_channels), 0.0};
    AuxParamGrad probe_b{Matrix(1, run.model.feature_channels), 0.0};
    StepRecord rec;
    rec.step = t;
    FeatureGradRecord fg;
    for (int b = 0; b < run.batch_size; ++b) {
      const SyntheticSample sample =
          gen_sample(gen, train_data_seed(run.seed, static_cast<std::int64_t>(t) * run.batch_size + b));
      const ForwardCache cache =
          forward(model, sample, run, Phase::Train, nullptr, t == 0 ? nullptr : &smoothed);
      if (!std::isfinite(cache.total_loss)) {
        throw NumericError("training diverged at step " + std::to_string(t) +
                           ": total loss is " + std::to_string(cache.total_loss));
      }
      const BackwardResult bw = backward(model, cache, run);
      axpy(grad, bw.grad, inv_b);
      axpy(task_grad, bw.task_grad, inv_b);
      rec.task_loss += inv_b * cache.task_loss;
      rec.distill_loss += inv_b * (cache.distill ? cache.distill->loss : 0.0);
      rec.s_a += inv_b * cache.scores.s_rgb;
      rec.s_b += inv_b * cache.scores.s_ir;
      rec.entropy_a += inv_b * diversity(cache.enc_a.out, &sample.gt);
      rec.entropy_b += inv_b * diversity(cache.enc_b.out, &sample.gt);
      if (run.enable_mdi && run.aux_weight == 0.0) {
        const auto pa = aux_loss_param_grad(cache.enc_a.out, model.params.aux_a, sample.gt);
        const auto pb = aux_loss_param_grad(cache.enc_b.out, model.params.aux_b, sample.gt);
        for (std::size_t i = 0; i < pa.d_weights.values().size(); ++i) {
          probe_a.d_weights.values()[i] += inv_b * pa.d_weights.values()[i];
          probe_b.d_weights.values()[i] += inv_b * pb.d_weights.values()[i];
        }
        probe_a.d_bias += inv_b * pa.d_bias;
        probe_b.d_bias += inv_b * pb.d_bias;
      }
      fg.a += inv_b * bw.feat_grad_a;
      fg.b += inv_b * bw.feat_grad_b;
    }
    const std::vector<double> flat = grad.flatten();
    if (!all_finite(flat)) {
      throw NumericError("training diverged at step " + std::to_string(t) +
                         ": non-finite parameter gradient");
    }
    rec.grad_a = group_norm(task_grad, ParamGroup::EncoderA);
    rec.grad_b = group_norm(task_grad, ParamGroup::EncoderB);

    if (run.enable_mdi) {
      smoothed = {rec.s_a, rec.s_b, run.delta};
      // Inference has no mask to score against; it uses a slow average of the
      // training-time scores.
      const double k = t == 0 ? 0.0 : kInferenceScoreEma;
      auto& s = model.inference_scores;
      s.s_rgb = k * s.s_rgb + (1.0 - k) * rec.s_a;
      s.s_ir = k * s.s_ir + (1.0 - k) * rec.s_b;
      s.delta = run.delta;
    }
    if (run.enable_mdi && run.aux_weight == 0.0) {
      // The detectors still have to be fit for the response term; as probes on
      // their own loss they leave the encoders untouched.
      grad.aux_a.weights = probe_a.d_weights;
      grad.aux_a.bias = probe_a.d_bias;
      grad.aux_b.weights = probe_b.d_weights;
      grad.aux_b.bias = probe_b.d_bias;
    }
    sgd_step(model, grad, run, run.momentum > 0.0 ? &velocity : nullptr);

    out.records.push_back(rec);
    out.feature_grads.push_back(fg);
    if (on_step) on_step(rec);
  }
  out.model = std::move(model);
  return out;
}

std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::Both: return "both";
    case EvalMode::AOnly: return "a_only";
    case EvalMode::BOnly: return "b_only";
  }
  return "unknown";
}

double thresholded_iou(std::span<const double> pred, const GroundTruthMask& gt, double tau) {
  if (pred.size() != gt.values().size()) {
    throw ShapeError("thresholded_iou: prediction has " + std::to_string(pred.size()) +
                     " pixels, mask has " + std::to_string(gt.values().size()));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const bool a = pred[p] > tau;
    const bool b = gt[p] > 0.5;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double eval_restricted(const ToyModel& model, std::span<const SyntheticSample> samples,
                       EvalMode mode, const RunConfig& run) {
  if (samples.empty()) throw std::invalid_argument("eval_restricted needs at least one sample");
  double total = 0.0;
  for (const SyntheticSample& s : samples) {
    SyntheticSample x = s;
    if (mode == EvalMode::AOnly) x.mod_b *= 0.0;
    if (mode == EvalMode::BOnly) x.mod_a *= 0.0;
    const ForwardCache c = forward(model, x, run, Phase::Infer);
    total += thresholded_iou(c.pred, s.gt);
  }
  return total / static_cast<double>(samples.size());
}

std::vector<SyntheticSample> eval_set(const GeneratorConfig& gen, const RunConfig& run) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(run.eval_samples));
  for (int i = 0; i < run.eval_samples; ++i) out.push_back(gen_sample(gen, eval_data_seed(run.seed, i)));
  return out;
}

double gradient_bias(std::span<const StepRecord> records, int window) {
  return windowed_bias(records, window,
                       [](const StepRecord& r) { return std::abs(r.grad_a - r.grad_b); });
}

double gradient_bias(std::span<const FeatureGradRecord> records, int window) {
  return windowed_bias(records, window,
                       [](const FeatureGradRecord& r) { return std::abs(r.a - r.b); });
}

}  // namespace modbal
