#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sdcnet/bayes.hpp"
#include "sdcnet/masking.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/uncertainty.hpp"

namespace sdcnet {

enum class Method { deterministic, dropout, dropconnect, sdc, sdc_strong, sdc_weak, bbb };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool is_connect_method(Method m);  // dropconnect / sdc / sdc_strong / sdc_weak

// Which layers carry stochastic masks. Defaults: connect-family methods mask
// both fully-connected weight matrices; dropout masks the activations leaving
// each convolutional block; conv kernels are unmasked.
struct MaskPlacement {
  bool block1_activations = false;
  bool block2_activations = false;
  bool fc1_weights = false;
  bool fc2_weights = false;
  bool conv_kernels = false;

  static MaskPlacement defaults_for(Method m);
};

enum class RunMode { train, mc_sample, deterministic_eval };

// Everything one forward pass needs to know about its stochasticity. Mask and
// epsilon draws are keyed by (master_seed, stream_tag, pass, draw, layer), so
// a pass replays bit-for-bit from its coordinates.
struct ForwardCtx {
  Tape* tape = nullptr;
  RunMode mode = RunMode::deterministic_eval;
  std::uint64_t master_seed = 0;
  std::uint64_t stream_tag = stream::kTrainMask;
  std::uint64_t pass = 0;  // training step or MC pass index
  std::uint64_t draw = 0;  // variational draw index within one step

  // Filled by variational layers during the pass when set.
  struct BbbCollector {
    TensorPtr log_q;
    TensorPtr log_prior;
  };
  BbbCollector* bbb = nullptr;

  // softplus(rho) is draw-independent; callers that run several draws or
  // passes against fixed parameters hand in a cache to share it.
  struct SigmaCache {
    std::map<std::string, TensorPtr> by_name;
  };
  SigmaCache* sigma_cache = nullptr;
};

class Model {
 public:
  virtual ~Model() = default;

  // Logits [n, classes].
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) {
    return run_segments(x, 0, segment_count(), ctx);
  }

  // The forward pass is cut into segments at the maskable points; segments
  // before first_stochastic_segment() are pass-independent in mc_sample mode
  // and may be computed once and reused across Monte-Carlo passes.
  virtual std::size_t segment_count() const = 0;
  virtual std::size_t first_stochastic_segment() const = 0;
  virtual TensorPtr run_segments(const TensorPtr& x, std::size_t begin, std::size_t end,
                                 const ForwardCtx& ctx) = 0;

  virtual ParamStore& params() = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Method method() const = 0;
  virtual double leave_out_rate() const = 0;

  // False for plain models and for masked models at p = 0 (their passes are
  // all identical).
  virtual bool stochastic() const = 0;
};

// The paper-scale digit network: two conv blocks (2x conv3x3 + batchnorm +
// relu, maxpool 2/2) of 32 and 64 kernels, then fc 3136 -> 1024 -> 10.
std::unique_ptr<Model> build_mnist_model(Method method, double p, std::uint64_t init_seed,
                                         const MaskPlacement* placement = nullptr);

// Small dense net for 2-feature inputs [n,1,2,1]: fc 2 -> 32 -> classes.
// Same masking semantics; used by fast tests and the synthetic dataset.
std::unique_ptr<Model> build_tiny_dense_model(Method method, double p, std::size_t classes,
                                              std::uint64_t init_seed,
                                              const MaskPlacement* placement = nullptr);

std::unique_ptr<Model> build_model(const std::string& architecture, Method method, double p,
                                   std::size_t classes, std::uint64_t init_seed,
                                   const MaskPlacement* placement = nullptr);

struct ElboResult {
  ElboBreakdown breakdown;
  TensorPtr total;  // scalar on the tape; backward() trains mu/rho
};

// Monte-Carlo minibatch objective: kl_weight * mean_draws(log_q - log_prior)
// plus mean_draws(summed batch NLL). The deterministic trunk is evaluated
// once and shared by all draws.
ElboResult elbo_minibatch(Model& model, const TensorPtr& x, const std::vector<std::size_t>& labels,
                          std::size_t n_train_samples, double kl_weight, Tape* tape,
                          const ForwardCtx& base_ctx);

// T Monte-Carlo passes over one input ([1,c,h,w]); pass t uses lineage
// (master_seed, stream_tag, t, layer).
PredictiveSummary mc_predict(Model& model, const TensorPtr& input, std::size_t T,
                             std::uint64_t master_seed,
                             std::uint64_t stream_tag = stream::kTestPass);

// Batched variant: same per-pass mask lineage (masks are shared across the
// batch within one pass), one summary per input row. Passes may be evaluated
// on n_threads; summaries are reduced in pass order either way.
std::vector<PredictiveSummary> mc_predict_batch(Model& model, const TensorPtr& inputs,
                                                std::size_t T, std::uint64_t master_seed,
                                                std::uint64_t stream_tag = stream::kTestPass,
                                                std::size_t n_threads = 1);

}  // namespace sdcnet
