#include "modbal/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "modbal/errors.hpp"
#include "modbal/rng.hpp"

namespace modbal {

namespace {

void fill_uniform(std::span<double> v, SplitMix64& rng, double bound) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}

Conv3x3Kernel init_conv(std::size_t out, std::size_t in, SplitMix64& rng) {
  Conv3x3Kernel k(out, in);
  fill_uniform(k.weights, rng, std::sqrt(3.0 / static_cast<double>(in * 9)));
  return k;
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

EncoderTrace run_encoder(const EncoderParams& p, const FeatureMap& x) {
  EncoderTrace t;
  t.input = x;
  t.pre1 = conv3x3(x, p.stage1);
  t.h1 = t.pre1;
  for (double& v : t.h1.values()) v = std::tanh(v);
  t.pre2 = conv3x3(t.h1, p.stage2);
  t.out = t.pre2;
  for (double& v : t.out.values()) v = std::tanh(v);
  return t;
}

void encoder_backward(const EncoderParams& p, const EncoderTrace& t, const FeatureMap& d_out,
                      EncoderParams& grad) {
  FeatureMap d_pre2 = d_out;
  for (std::size_t i = 0; i < d_pre2.size(); ++i) d_pre2[i] *= 1.0 - t.out[i] * t.out[i];
  auto g2 = conv3x3_backward(t.h1, p.stage2, d_pre2);
  FeatureMap d_pre1 = std::move(g2.d_input);
  for (std::size_t i = 0; i < d_pre1.size(); ++i) d_pre1[i] *= 1.0 - t.h1[i] * t.h1[i];
  auto g1 = conv3x3_backward(t.input, p.stage1, d_pre1);
  for (std::size_t i = 0; i < grad.stage2.weights.size(); ++i)
    grad.stage2.weights[i] += g2.d_kernel.weights[i];
  for (std::size_t i = 0; i < grad.stage2.bias.size(); ++i) grad.stage2.bias[i] += g2.d_kernel.bias[i];
  for (std::size_t i = 0; i < grad.stage1.weights.size(); ++i)
    grad.stage1.weights[i] += g1.d_kernel.weights[i];
  for (std::size_t i = 0; i < grad.stage1.bias.size(); ++i) grad.stage1.bias[i] += g1.d_kernel.bias[i];
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.values().size(); ++i) dst.values()[i] += src.values()[i];
}

void add_into(Conv3x3Kernel& dst, const Conv3x3Kernel& src) {
  for (std::size_t i = 0; i < dst.weights.size(); ++i) dst.weights[i] += src.weights[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

struct Objectives {
  bool task = true;
  bool distill = true;
  bool aux = true;
};

struct PassResult {
  ModelParams grad;
  FeatureMap d_f_a;
  FeatureMap d_f_b;
};

PassResult backward_pass(const ToyModel& model, const ForwardCache& c, const RunConfig& run,
                         Objectives use) {
  const ModelParams& p = model.params;
  PassResult r{p.zeros_like(), FeatureMap(c.enc_a.out.shape()), FeatureMap(c.enc_b.out.shape())};
  ModelParams& g = r.grad;
  const Shape3 fs = c.fused.shape();
  const std::size_t hw = fs.pixels();

  FeatureMap d_dom(fs);
  FeatureMap d_non_refined(fs);
  if (use.task) {
    const double inv_n = 1.0 / static_cast<double>(hw);
    FeatureMap d_fused(fs);
    for (std::size_t px = 0; px < hw; ++px) {
      const double dz = (c.pred[px] - c.gt[px]) * inv_n;
      g.head_b[0] += dz;
      for (std::size_t ch = 0; ch < fs.c; ++ch) {
        g.head_w(0, ch) += dz * c.fused[ch * hw + px];
        d_fused[ch * hw + px] = dz * p.head_w(0, ch);
      }
    }
    for (std::size_t i = 0; i < d_fused.size(); ++i) {
      d_dom[i] = c.coeff.on_dominant * d_fused[i];
      d_non_refined[i] = c.coeff.on_non_dominant * d_fused[i];
    }
  }
  if (use.distill && c.distill) d_non_refined += c.distill->grad_student;

  const FeatureMap& f_dom = c.dom_feature();
  const FeatureMap& f_non = c.non_feature();
  FeatureMap d_non(fs);
  if (c.refine) {
    auto rg = refine_backward(*c.refine, p.refine, d_non_refined);
    add_into(g.refine.conv, rg.d_conv);
    d_non += rg.d_input;
    auto pg = reproject_backward(c.corr->corr, f_non, rg.d_input);
    d_non += pg.d_f_non;
    auto cg = correlation_backward(f_non, f_dom, p.qk, *c.corr, pg.d_corr);
    d_non += cg.d_f_non;
    d_dom += cg.d_f_dom;
    add_into(g.qk.w_q, cg.d_w_q);
    add_into(g.qk.w_k, cg.d_w_k);
  } else {
    d_non += d_non_refined;
  }

  if (c.dom == Modality::Rgb) {
    r.d_f_a = std::move(d_dom);
    r.d_f_b = std::move(d_non);
  } else {
    r.d_f_a = std::move(d_non);
    r.d_f_b = std::move(d_dom);
  }

  if (use.aux && run.aux_weight > 0.0) {
    FeatureMap ga = aux_loss_grad(c.enc_a.out, p.aux_a, c.gt);
    FeatureMap gb = aux_loss_grad(c.enc_b.out, p.aux_b, c.gt);
    ga *= run.aux_weight;
    gb *= run.aux_weight;
    r.d_f_a += ga;
    r.d_f_b += gb;
    const auto pa = aux_loss_param_grad(c.enc_a.out, p.aux_a, c.gt);
    const auto pb = aux_loss_param_grad(c.enc_b.out, p.aux_b, c.gt);
    for (std::size_t i = 0; i < pa.d_weights.values().size(); ++i) {
      g.aux_a.weights.values()[i] += run.aux_weight * pa.d_weights.values()[i];
      g.aux_b.weights.values()[i] += run.aux_weight * pb.d_weights.values()[i];
    }
    g.aux_a.bias += run.aux_weight * pa.d_bias;
    g.aux_b.bias += run.aux_weight * pb.d_bias;
  }

  encoder_backward(p.enc_a, c.enc_a, r.d_f_a, g.enc_a);
  encoder_backward(p.enc_b, c.enc_b, r.d_f_b, g.enc_b);
  return r;
}

void scale_group(ModelParams& p, ParamGroup group, double s) {
  for_each_tensor(p, [&](ParamGroup g, std::span<double> v) {
    if (g != group) return;
    for (double& x : v) x *= s;
  });
}

}  // namespace

void RunConfig::validate() const {
  if (!(grad_boost_lambda >= 1.0)) throw std::invalid_argument("grad_boost_lambda must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in [0, 1]");
  if (enable_hcg_high) distill_weights().validate();
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (aux_weight < 0.0) throw std::invalid_argument("aux weight must be >= 0");
  if (score_ema < 0.0 || score_ema >= 1.0) throw std::invalid_argument("score_ema must lie in [0, 1)");
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
  if (model.hidden_channels < 1 || model.feature_channels < 1 || model.qk_dim < 1 ||
      model.qk_dim > model.feature_channels) {
    throw std::invalid_argument("model widths must be >= 1 with qk_dim <= feature_channels");
  }
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::EncoderA: return "encoder_a";
    case ParamGroup::EncoderB: return "encoder_b";
    case ParamGroup::Guidance: return "guidance";
    case ParamGroup::Aux: return "aux";
    case ParamGroup::Head: return "head";
  }
  return "unknown";
}

void for_each_tensor(ModelParams& p, const std::function<void(ParamGroup, std::span<double>)>& fn) {
  fn(ParamGroup::EncoderA, p.enc_a.stage1.weights);
  fn(ParamGroup::EncoderA, p.enc_a.stage1.bias);
  fn(ParamGroup::EncoderA, p.enc_a.stage2.weights);
  fn(ParamGroup::EncoderA, p.enc_a.stage2.bias);
  fn(ParamGroup::EncoderB, p.enc_b.stage1.weights);
  fn(ParamGroup::EncoderB, p.enc_b.stage1.bias);
  fn(ParamGroup::EncoderB, p.enc_b.stage2.weights);
  fn(ParamGroup::EncoderB, p.enc_b.stage2.bias);
  fn(ParamGroup::Guidance, p.qk.w_q.values());
  fn(ParamGroup::Guidance, p.qk.w_k.values());
  fn(ParamGroup::Guidance, p.refine.conv.weights);
  fn(ParamGroup::Guidance, p.refine.conv.bias);
  fn(ParamGroup::Aux, p.aux_a.weights.values());
  fn(ParamGroup::Aux, std::span<double>(&p.aux_a.bias, 1));
  fn(ParamGroup::Aux, p.aux_b.weights.values());
  fn(ParamGroup::Aux, std::span<double>(&p.aux_b.bias, 1));
  fn(ParamGroup::Head, p.head_w.values());
  fn(ParamGroup::Head, p.head_b);
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(ParamGroup, std::span<const double>)>& fn) {
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](ParamGroup g, std::span<double> v) { fn(g, v); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for_each_tensor(z, [](ParamGroup, std::span<double> v) {
    for (double& x : v) x = 0.0;
  });
  return z;
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](ParamGroup, std::span<const double> v) { n += v.size(); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for_each_tensor(*this, [&](ParamGroup, std::span<const double> v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != size()) {
    throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " values, model needs " +
                     std::to_string(size()));
  }
  std::size_t at = 0;
  for_each_tensor(*this, [&](ParamGroup, std::span<double> v) {
    for (double& x : v) x = flat[at++];
  });
}

double group_norm(const ModelParams& p, ParamGroup group) {
  double s = 0.0;
  for_each_tensor(p, [&](ParamGroup g, std::span<const double> v) {
    if (g != group) return;
    for (double x : v) s += x * x;
  });
  return std::sqrt(s);
}

ToyModel ToyModel::init(const ModelConfig& cfg, std::uint64_t seed, bool mirrored) {
  SplitMix64 rng(seed);
  const std::size_t C = cfg.feature_channels;
  ToyModel m;
  m.config = cfg;
  auto& p = m.params;
  p.enc_a = {init_conv(cfg.hidden_channels, 1, rng), init_conv(C, cfg.hidden_channels, rng)};
  p.enc_b = mirrored ? p.enc_a
                     : EncoderParams{init_conv(cfg.hidden_channels, 1, rng),
                                     init_conv(C, cfg.hidden_channels, rng)};
  const double proj_bound = std::sqrt(3.0 / static_cast<double>(C));
  Matrix wq(cfg.qk_dim, C), wk(cfg.qk_dim, C);
  fill_uniform(wq.values(), rng, proj_bound);
  fill_uniform(wk.values(), rng, proj_bound);
  p.qk = QKProjection(std::move(wq), std::move(wk));

  // Near-identity refinement so enabling guidance starts close to F_non + F_reproj.
  Conv3x3Kernel rk = Conv3x3Kernel::delta(C);
  for (double& w : rk.weights) w += rng.uniform(-0.05, 0.05);
  p.refine = RefineBlock(std::move(rk));

  Matrix aw(1, C);
  fill_uniform(aw.values(), rng, proj_bound);
  p.aux_a = AuxDetector(aw, 0.0);
  if (mirrored) {
    p.aux_b = p.aux_a;
  } else {
    Matrix bw(1, C);
    fill_uniform(bw.values(), rng, proj_bound);
    p.aux_b = AuxDetector(std::move(bw), 0.0);
  }
  p.head_w = Matrix(1, C);
  fill_uniform(p.head_w.values(), rng, proj_bound);
  p.head_b = {0.0};
  return m;
}

Detached ForwardCache::detached() const {
  return {scores, teacher, distill ? distill->components.scale : 1.0};
}

double heatmap_bce(std::span<const double> logits, const GroundTruthMask& gt) {
  double s = 0.0;
  for (std::size_t p = 0; p < logits.size(); ++p) s += softplus(logits[p]) - gt[p] * logits[p];
  return s / static_cast<double>(logits.size());
}

ForwardCache forward(const ToyModel& model, const SyntheticSample& sample, const RunConfig& run,
                     Phase phase, const Detached* pinned, const DominanceScores* prior) {
  const ModelParams& p = model.params;
  ForwardCache c;
  c.model_version = model.version;
  c.run = run;
  c.gt = sample.gt;
  c.enc_a = run_encoder(p.enc_a, sample.mod_a);
  c.enc_b = run_encoder(p.enc_b, sample.mod_b);

  if (pinned != nullptr) {
    c.scores = pinned->scores;
  } else if (!run.enable_mdi) {
    c.scores = {0.5, 0.5, run.delta};
  } else if (phase == Phase::Train) {
    c.scores = mdi_scores(c.enc_a.out, c.enc_b.out, p.aux_a, p.aux_b, sample.gt, run.delta);
    if (prior != nullptr && run.score_ema > 0.0) {
      const double k = run.score_ema;
      c.scores.s_rgb = k * prior->s_rgb + (1.0 - k) * c.scores.s_rgb;
      c.scores.s_ir = k * prior->s_ir + (1.0 - k) * c.scores.s_ir;
    }
  } else {
    c.scores = model.inference_scores;
  }
  c.dom = dominant(c.scores);
  const FeatureMap& f_dom = c.dom_feature();
  const FeatureMap& f_non = c.non_feature();

  if (run.enable_hcg_low) {
    c.corr = correlation_traced(f_non, f_dom, p.qk);
    c.reproj = reproject(c.corr->corr, f_non);
    c.refine = refine_traced(f_non, c.reproj, p.refine);
    c.non_refined = c.refine->out;
  } else {
    c.non_refined = f_non;
  }

  const RoleScores roles = role_scores(c.scores);
  const WeightingStrategy strategy = run.effective_strategy();
  c.coeff = fusion_coefficients(roles, strategy);
  c.fused = fuse(f_dom, c.non_refined, roles, strategy);

  const std::vector<double> no_bias(1, p.head_b[0]);
  const FeatureMap logit_map = conv1x1(c.fused, p.head_w, no_bias);
  c.logits.assign(logit_map.values().begin(), logit_map.values().end());
  c.pred.resize(c.logits.size());
  for (std::size_t i = 0; i < c.logits.size(); ++i) c.pred[i] = sigmoid(c.logits[i]);
  c.task_loss = heatmap_bce(c.logits, sample.gt);
  c.total_loss = c.task_loss;

  if (phase == Phase::Train) {
    if (run.enable_hcg_high) {
      c.teacher = pinned != nullptr ? pinned->teacher : f_dom;
      c.distill = pinned != nullptr
                      ? loss_distill_pinned(c.non_refined, c.teacher, run.distill_weights(), pinned->scale)
                      : loss_distill(c.non_refined, c.teacher, run.distill_weights());
      c.total_loss += c.distill->loss;
    }
    if (run.aux_weight > 0.0) {
      c.aux_loss_a = aux_loss(c.enc_a.out, p.aux_a, sample.gt);
      c.aux_loss_b = aux_loss(c.enc_b.out, p.aux_b, sample.gt);
      c.total_loss += run.aux_weight * (c.aux_loss_a + c.aux_loss_b);
    }
  }
  return c;
}

BackwardResult backward(const ToyModel& model, const ForwardCache& cache, const RunConfig& run) {
  if (cache.model_version != model.version) {
    throw InvalidState("forward cache is from model version " + std::to_string(cache.model_version) +
                       ", model is at " + std::to_string(model.version));
  }
  if (cache.run.enable_hcg_low != run.enable_hcg_low ||
      cache.run.enable_hcg_high != run.enable_hcg_high || cache.run.aux_weight != run.aux_weight) {
    throw InvalidState("forward cache was produced under a different run configuration");
  }
  PassResult full = backward_pass(model, cache, run, {});
  const bool extra_terms = cache.distill.has_value() || run.aux_weight > 0.0;
  PassResult task_only = extra_terms ? backward_pass(model, cache, run, {true, false, false}) : full;

  const double lambda = run.grad_boost_lambda;
  scale_group(full.grad, ParamGroup::EncoderA, lambda);
  if (extra_terms) scale_group(task_only.grad, ParamGroup::EncoderA, lambda);
  BackwardResult r{std::move(full.grad), std::move(task_only.grad), 0.0, 0.0,
                   frobenius_norm(task_only.d_f_a), frobenius_norm(task_only.d_f_b)};
  r.grad_contrib_a = group_norm(r.task_grad, ParamGroup::EncoderA);
  r.grad_contrib_b = group_norm(r.task_grad, ParamGroup::EncoderB);
  return r;
}

}  // namespace modbal
