#include "sdcnet/model.hpp"

#include <cmath>
#include <thread>

#include "sdcnet/ops.hpp"

namespace sdcnet {

std::string to_string(Method m) {
  switch (m) {
    case Method::deterministic: return "deterministic";
    case Method::dropout: return "dropout";
    case Method::dropconnect: return "dropconnect";
    case Method::sdc: return "sdc";
    case Method::sdc_strong: return "sdc_strong";
    case Method::sdc_weak: return "sdc_weak";
    case Method::bbb: return "bbb";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "deterministic") return Method::deterministic;
  if (s == "dropout") return Method::dropout;
  if (s == "dropconnect") return Method::dropconnect;
  if (s == "sdc") return Method::sdc;
  if (s == "sdc_strong") return Method::sdc_strong;
  if (s == "sdc_weak") return Method::sdc_weak;
  if (s == "bbb") return Method::bbb;
  throw ConfigError("unknown method: " + s);
}

bool is_connect_method(Method m) {
  return m == Method::dropconnect || m == Method::sdc || m == Method::sdc_strong ||
         m == Method::sdc_weak;
}

MaskPlacement MaskPlacement::defaults_for(Method m) {
  MaskPlacement p;
  if (m == Method::dropout) {
    p.block1_activations = true;
    p.block2_activations = true;
  } else if (is_connect_method(m)) {
    p.fc1_weights = true;
    p.fc2_weights = true;
  }
  return p;
}

namespace {

// Lineage layer ids; part of the replay contract, do not renumber.
constexpr std::uint64_t kLayerBlock1Act = 0;
constexpr std::uint64_t kLayerBlock2Act = 1;
constexpr std::uint64_t kLayerFc1 = 2;
constexpr std::uint64_t kLayerFc2 = 3;
constexpr std::uint64_t kLayerConv1 = 4;

MaskMethod to_mask_method(Method m) {
  switch (m) {
    case Method::dropout: return MaskMethod::dropout;
    case Method::dropconnect: return MaskMethod::dropconnect;
    case Method::sdc: return MaskMethod::sdc;
    case Method::sdc_strong: return MaskMethod::sdc_strong;
    case Method::sdc_weak: return MaskMethod::sdc_weak;
    default: throw ConfigError("method " + to_string(m) + " has no mask law");
  }
}

void init_fan_in_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

struct BnParams {
  TensorPtr gamma, beta, running_mean, running_var;
};

// Common machinery for both architectures.
class ModelBase : public Model {
 public:
  ModelBase(Method method, double p, const MaskPlacement* placement)
      : method_(method), p_(p) {
    placement_ = placement ? *placement : MaskPlacement::defaults_for(method);
    if (method != Method::deterministic && method != Method::bbb)
      spec_ = MaskSpec::make(to_mask_method(method), p);
    if (method == Method::bbb && p != 0.0)
      throw ConfigError("bbb has no leave-out rate");
  }

  ParamStore& params() override { return store_; }
  Method method() const override { return method_; }
  double leave_out_rate() const override { return p_; }

  bool stochastic() const override {
    if (method_ == Method::bbb) return true;
    return method_ != Method::deterministic && p_ > 0.0;
  }

 protected:
  bool masks_active(const ForwardCtx& ctx) const {
    return ctx.mode != RunMode::deterministic_eval && stochastic();
  }

  SeedLineage lineage(const ForwardCtx& ctx, std::uint64_t layer) const {
    return SeedLineage{ctx.master_seed, ctx.pass, layer};
  }

  TensorPtr apply_dropout(const TensorPtr& h, const ForwardCtx& ctx, std::uint64_t layer) const {
    Shape per_sample(h->shape.begin() + 1, h->shape.end());
    auto mask = sample_mask(spec_, per_sample, lineage(ctx, layer), ctx.stream_tag);
    return dropout_forward(h, spec_, mask, ctx.tape);
  }

  TensorPtr dense(const TensorPtr& h, const std::string& name, std::uint64_t layer, bool masked,
                  const ForwardCtx& ctx) const {
    if (method_ == Method::bbb) return bbb_dense(h, name, layer, ctx);
    const auto& w = store_.at(name + ".weight");
    const auto& b = store_.at(name + ".bias");
    if (masked && masks_active(ctx)) {
      auto mask = sample_mask(spec_, w->shape, lineage(ctx, layer), ctx.stream_tag);
      return masked_dense_forward(h, w, b, spec_, mask, ctx.tape);
    }
    return ops::add_bias(ops::matmul(h, w, ctx.tape), b, ctx.tape);
  }

  TensorPtr conv(const TensorPtr& h, const std::string& name, std::uint64_t layer,
                 const ForwardCtx& ctx) const {
    const auto& k = store_.at(name + ".kernels");
    const auto& b = store_.at(name + ".bias");
    if (placement_.conv_kernels && is_connect_method(method_) && masks_active(ctx)) {
      auto mask = sample_mask(spec_, k->shape, lineage(ctx, layer), ctx.stream_tag);
      return masked_conv_forward(h, k, b, spec_, mask, ctx.tape);
    }
    return ops::conv2d(h, k, b, ctx.tape);
  }

  TensorPtr bbb_dense(const TensorPtr& h, const std::string& name, std::uint64_t layer,
                      const ForwardCtx& ctx) const {
    VariationalWeight vw{store_.at(name + ".w_mu"), store_.at(name + ".w_rho"), prior_};
    VariationalWeight vb{store_.at(name + ".b_mu"), store_.at(name + ".b_rho"), prior_};
    if (ctx.mode == RunMode::deterministic_eval) {
      // Collapsed posterior: use the means.
      return ops::add_bias(ops::matmul(h, vw.mu, ctx.tape), vb.mu, ctx.tape);
    }
    Rng rng(derive_seed({ctx.master_seed, ctx.stream_tag, ctx.pass, ctx.draw, layer}));
    auto eps_w = standard_normal_like(vw.mu->shape, rng);
    auto eps_b = standard_normal_like(vb.mu->shape, rng);
    auto cached_sigma = [&](const std::string& key, const TensorPtr& rho) {
      if (!ctx.sigma_cache) return ops::softplus(rho, ctx.tape);
      auto it = ctx.sigma_cache->by_name.find(key);
      if (it != ctx.sigma_cache->by_name.end()) return it->second;
      auto sigma = ops::softplus(rho, ctx.tape);
      ctx.sigma_cache->by_name.emplace(key, sigma);
      return sigma;
    };
    auto sigma_w = cached_sigma(name + ".w", vw.rho);
    auto sigma_b = cached_sigma(name + ".b", vb.rho);
    auto w = ops::muladd(vw.mu, sigma_w, eps_w, ctx.tape);
    auto b = ops::muladd(vb.mu, sigma_b, eps_b, ctx.tape);
    if (ctx.bbb) {
      auto lq = ops::add(log_gaussian(w, vw.mu, sigma_w, ctx.tape),
                         log_gaussian(b, vb.mu, sigma_b, ctx.tape), ctx.tape);
      auto lp = ops::add(log_mixture_prior(w, prior_, ctx.tape),
                         log_mixture_prior(b, prior_, ctx.tape), ctx.tape);
      ctx.bbb->log_q = ctx.bbb->log_q ? ops::add(ctx.bbb->log_q, lq, ctx.tape) : lq;
      ctx.bbb->log_prior = ctx.bbb->log_prior ? ops::add(ctx.bbb->log_prior, lp, ctx.tape) : lp;
    }
    return ops::add_bias(ops::matmul(h, w, ctx.tape), b, ctx.tape);
  }

  void add_dense_params(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    if (method_ == Method::bbb) {
      auto w_mu = make_tensor({in, out});
      init_fan_in_uniform(*w_mu, in, rng);
      store_.add(name + ".w_mu", w_mu);
      store_.add(name + ".w_rho", make_tensor({in, out}, kRhoInit));
      store_.add(name + ".b_mu", make_tensor({out}));
      store_.add(name + ".b_rho", make_tensor({out}, kRhoInit));
    } else {
      auto w = make_tensor({in, out});
      init_fan_in_uniform(*w, in, rng);
      store_.add(name + ".weight", w);
      store_.add(name + ".bias", make_tensor({out}));
    }
  }

  void add_conv_params(const std::string& name, std::size_t co, std::size_t ci, Rng& rng) {
    auto k = make_tensor({co, ci, 3, 3});
    init_fan_in_uniform(*k, ci * 9, rng);
    store_.add(name + ".kernels", k);
    store_.add(name + ".bias", make_tensor({co}));
  }

  BnParams add_bn_params(const std::string& name, std::size_t c) {
    BnParams bn;
    bn.gamma = store_.add(name + ".gamma", make_tensor({c}, 1.0));
    bn.beta = store_.add(name + ".beta", make_tensor({c}));
    bn.running_mean = store_.add_buffer(name + ".running_mean", make_tensor({c}, 0.0));
    bn.running_var = store_.add_buffer(name + ".running_var", make_tensor({c}, 1.0));
    return bn;
  }

  static constexpr double kRhoInit = -5.0;  // softplus(-5) ~ 0.0067

  Method method_;
  double p_;
  MaskPlacement placement_;
  MaskSpec spec_;
  ScaleMixturePrior prior_;
  ParamStore store_;
};

class MnistModel : public ModelBase {
 public:
  MnistModel(Method method, double p, std::uint64_t init_seed, const MaskPlacement* placement)
      : ModelBase(method, p, placement) {
    Rng rng(derive_seed({init_seed, stream::kInit}));
    add_conv_params("conv1", 32, 1, rng);
    add_conv_params("conv2", 32, 32, rng);
    bn1_ = add_bn_params("bn1", 32);
    add_conv_params("conv3", 64, 32, rng);
    add_conv_params("conv4", 64, 64, rng);
    bn2_ = add_bn_params("bn2", 64);
    add_dense_params("fc1", 3136, 1024, rng);
    add_dense_params("fc2", 1024, 10, rng);
  }

  std::size_t num_classes() const override { return 10; }
  std::size_t segment_count() const override { return 4; }

  std::size_t first_stochastic_segment() const override {
    if (!stochastic()) return segment_count();
    if (placement_.conv_kernels && is_connect_method(method_)) return 0;
    if (method_ == Method::dropout) {
      if (placement_.block1_activations) return 0;
      if (placement_.block2_activations) return 1;
      return segment_count();
    }
    // connect family / bbb on the fully-connected tail
    if (placement_.fc1_weights || method_ == Method::bbb) return 2;
    if (placement_.fc2_weights) return 3;
    return segment_count();
  }

  TensorPtr run_segments(const TensorPtr& x, std::size_t begin, std::size_t end,
                         const ForwardCtx& ctx) override {
    const bool train_bn = ctx.mode == RunMode::train;
    TensorPtr h = x;
    for (std::size_t seg = begin; seg < end; ++seg) {
      switch (seg) {
        case 0:
          h = conv(h, "conv1", kLayerConv1 + 0, ctx);
          h = conv(h, "conv2", kLayerConv1 + 1, ctx);
          h = ops::batchnorm(h, bn1_.gamma, bn1_.beta, bn1_.running_mean, bn1_.running_var,
                             train_bn, 0.1, 1e-5, ctx.tape);
          h = ops::relu(h, ctx.tape);
          h = ops::maxpool2d(h, ctx.tape);
          if (method_ == Method::dropout && placement_.block1_activations && masks_active(ctx))
            h = apply_dropout(h, ctx, kLayerBlock1Act);
          break;
        case 1:
          h = conv(h, "conv3", kLayerConv1 + 2, ctx);
          h = conv(h, "conv4", kLayerConv1 + 3, ctx);
          h = ops::batchnorm(h, bn2_.gamma, bn2_.beta, bn2_.running_mean, bn2_.running_var,
                             train_bn, 0.1, 1e-5, ctx.tape);
          h = ops::relu(h, ctx.tape);
          h = ops::maxpool2d(h, ctx.tape);
          if (method_ == Method::dropout && placement_.block2_activations && masks_active(ctx))
            h = apply_dropout(h, ctx, kLayerBlock2Act);
          h = ops::reshape(h, {h->shape[0], 3136}, ctx.tape);
          break;
        case 2:
          h = dense(h, "fc1", kLayerFc1, placement_.fc1_weights, ctx);
          h = ops::relu(h, ctx.tape);
          break;
        case 3:
          h = dense(h, "fc2", kLayerFc2, placement_.fc2_weights, ctx);
          break;
        default:
          throw DimensionError("segment index out of range");
      }
    }
    return h;
  }

 private:
  BnParams bn1_, bn2_;
};

class TinyDenseModel : public ModelBase {
 public:
  TinyDenseModel(Method method, double p, std::size_t classes, std::uint64_t init_seed,
                 const MaskPlacement* placement)
      : ModelBase(method, p, placement), classes_(classes) {
    Rng rng(derive_seed({init_seed, stream::kInit}));
    add_dense_params("fc1", 2, kHidden, rng);
    add_dense_params("fc2", kHidden, classes, rng);
  }

  std::size_t num_classes() const override { return classes_; }
  std::size_t segment_count() const override { return 3; }

  std::size_t first_stochastic_segment() const override {
    if (!stochastic()) return segment_count();
    if (method_ == Method::dropout) return 1;  // mask on the hidden activations
    if (placement_.fc1_weights || method_ == Method::bbb) return 1;
    if (placement_.fc2_weights) return 2;
    return segment_count();
  }

  TensorPtr run_segments(const TensorPtr& x, std::size_t begin, std::size_t end,
                         const ForwardCtx& ctx) override {
    TensorPtr h = x;
    for (std::size_t seg = begin; seg < end; ++seg) {
      switch (seg) {
        case 0:
          h = ops::reshape(h, {h->shape[0], 2}, ctx.tape);
          break;
        case 1:
          h = dense(h, "fc1", kLayerFc1, placement_.fc1_weights, ctx);
          h = ops::relu(h, ctx.tape);
          if (method_ == Method::dropout && masks_active(ctx))
            h = apply_dropout(h, ctx, kLayerBlock1Act);
          break;
        case 2:
          h = dense(h, "fc2", kLayerFc2, placement_.fc2_weights, ctx);
          break;
        default:
          throw DimensionError("segment index out of range");
      }
    }
    return h;
  }

 private:
  static constexpr std::size_t kHidden = 32;
  std::size_t classes_;
};

}  // namespace

std::unique_ptr<Model> build_mnist_model(Method method, double p, std::uint64_t init_seed,
                                         const MaskPlacement* placement) {
  return std::make_unique<MnistModel>(method, p, init_seed, placement);
}

std::unique_ptr<Model> build_tiny_dense_model(Method method, double p, std::size_t classes,
                                              std::uint64_t init_seed,
                                              const MaskPlacement* placement) {
  return std::make_unique<TinyDenseModel>(method, p, classes, init_seed, placement);
}

std::unique_ptr<Model> build_model(const std::string& architecture, Method method, double p,
                                   std::size_t classes, std::uint64_t init_seed,
                                   const MaskPlacement* placement) {
  if (architecture == "mnist_cnn") {
    if (classes != 10) throw ConfigError("mnist_cnn is a 10-class architecture");
    return build_mnist_model(method, p, init_seed, placement);
  }
  if (architecture == "tiny_dense")
    return build_tiny_dense_model(method, p, classes, init_seed, placement);
  throw ConfigError("unknown architecture: " + architecture);
}

ElboResult elbo_minibatch(Model& model, const TensorPtr& x, const std::vector<std::size_t>& labels,
                          std::size_t n_train_samples, double kl_weight, Tape* tape,
                          const ForwardCtx& base_ctx) {
  if (x->shape.empty() || x->shape[0] == 0) throw ConfigError("elbo_minibatch: empty batch");
  if (n_train_samples < 1) throw ConfigError("elbo_minibatch: need at least one draw");
  const auto batch = static_cast<double>(x->shape[0]);

  const std::size_t split = model.first_stochastic_segment();
  ForwardCtx trunk_ctx = base_ctx;
  trunk_ctx.tape = tape;
  TensorPtr features = model.run_segments(x, 0, split, trunk_ctx);

  TensorPtr log_q_sum, log_prior_sum, nll_sum;
  ForwardCtx::SigmaCache sigma_cache;
  for (std::size_t d = 0; d < n_train_samples; ++d) {
    ForwardCtx ctx = base_ctx;
    ctx.tape = tape;
    ctx.draw = d;
    ctx.sigma_cache = &sigma_cache;
    ForwardCtx::BbbCollector collector;
    ctx.bbb = &collector;
    auto logits = model.run_segments(features, split, model.segment_count(), ctx);
    auto probs = ops::softmax(logits, tape);
    auto nll = ops::scale(ops::cross_entropy(probs, labels, tape), batch, tape);
    if (!collector.log_q || !collector.log_prior)
      throw ConfigError("elbo_minibatch requires a variational (bbb) model");
    log_q_sum = log_q_sum ? ops::add(log_q_sum, collector.log_q, tape) : collector.log_q;
    log_prior_sum =
        log_prior_sum ? ops::add(log_prior_sum, collector.log_prior, tape) : collector.log_prior;
    nll_sum = nll_sum ? ops::add(nll_sum, nll, tape) : nll;
  }
  const double inv = 1.0 / static_cast<double>(n_train_samples);
  auto log_q = ops::scale(log_q_sum, inv, tape);
  auto log_prior = ops::scale(log_prior_sum, inv, tape);
  auto nll = ops::scale(nll_sum, inv, tape);

  ElboResult result;
  result.total = ops::add(ops::scale(ops::sub(log_q, log_prior, tape), kl_weight, tape), nll, tape);
  result.breakdown.log_q = log_q->scalar();
  result.breakdown.log_prior = log_prior->scalar();
  result.breakdown.nll = nll->scalar();
  result.breakdown.kl_weight = kl_weight;
  result.breakdown.total = result.total->scalar();
  return result;
}

PredictiveSummary mc_predict(Model& model, const TensorPtr& input, std::size_t T,
                             std::uint64_t master_seed, std::uint64_t stream_tag) {
  auto summaries = mc_predict_batch(model, input, T, master_seed, stream_tag, 1);
  if (summaries.size() != 1)
    throw DimensionError("mc_predict expects a single input, got " + shape_str(input->shape));
  return summaries[0];
}

std::vector<PredictiveSummary> mc_predict_batch(Model& model, const TensorPtr& inputs,
                                                std::size_t T, std::uint64_t master_seed,
                                                std::uint64_t stream_tag, std::size_t n_threads) {
  if (T < 1) throw ConfigError("mc_predict needs T >= 1");
  const std::size_t n = inputs->shape[0];
  const std::size_t k = model.num_classes();

  ForwardCtx fixed_ctx;
  fixed_ctx.mode = RunMode::mc_sample;
  fixed_ctx.master_seed = master_seed;
  fixed_ctx.stream_tag = stream_tag;

  const std::size_t split = model.first_stochastic_segment();
  TensorPtr prefix = model.run_segments(inputs, 0, split, fixed_ctx);

  // pass-major softmax rows: rows[t] is [n,k]
  std::vector<std::vector<double>> rows(T);
  auto run_pass = [&](std::size_t t, ForwardCtx::SigmaCache* cache) {
    ForwardCtx ctx = fixed_ctx;
    ctx.pass = t;
    ctx.sigma_cache = cache;
    auto logits = model.run_segments(prefix, split, model.segment_count(), ctx);
    rows[t] = ops::softmax(logits)->data;
  };

  if (n_threads <= 1 || T == 1) {
    ForwardCtx::SigmaCache cache;
    for (std::size_t t = 0; t < T; ++t) run_pass(t, &cache);
  } else {
    const std::size_t workers = std::min(n_threads, T);
    std::vector<std::thread> pool;
    for (std::size_t wkr = 0; wkr < workers; ++wkr) {
      pool.emplace_back([&, wkr] {
        ForwardCtx::SigmaCache cache;  // per-thread; sigma is pass-independent
        for (std::size_t t = wkr; t < T; t += workers) run_pass(t, &cache);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<PredictiveSummary> summaries;
  summaries.reserve(n);
  std::vector<std::vector<double>> passes(T, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < k; ++j) passes[t][j] = rows[t][i * k + j];
    summaries.push_back(summarize_passes(passes, !model.stochastic()));
  }
  return summaries;
}

}  // namespace sdcnet
