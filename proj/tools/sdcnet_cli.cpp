#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdcnet/checkpoint.hpp"
#include "sdcnet/finite_diff.hpp"
#include "sdcnet/idx.hpp"
#include "sdcnet/masking.hpp"
#include "sdcnet/ops.hpp"
#include "sdcnet/train.hpp"

namespace {

using namespace sdcnet;

int cmd_train(const std::string& config_path, bool paper_scale) {
  ExperimentConfig cfg = load_config(config_path);
  if (paper_scale) apply_paper_scale(cfg);
  TrainResult result = train(cfg);
  std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
  if (!result.epochs.empty()) {
    const auto& last = result.epochs.back();
    std::printf("final epoch %zu: train_loss=%.6f val_accuracy=%.4f\n", last.epoch,
                last.train_loss, last.val_accuracy);
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint) {
  ExperimentConfig cfg = load_config(config_path);
  EvalResult result = evaluate(cfg, checkpoint, true);
  std::printf("test accuracy: %.4f\n", result.accuracy);
  std::printf("mean mutual information: %.6f bits\n", result.mean_mi_bits);
  std::printf("mean entropy: %.6f bits\n", result.mean_entropy_bits);
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths, const std::string& out_dir,
                std::size_t workers) {
  std::vector<ExperimentConfig> configs;
  for (const auto& path : config_paths) configs.push_back(load_config(path));
  CompareReport report = compare_methods(configs, out_dir, workers);
  std::printf("%-12s %6s %5s %18s %18s\n", "method", "p", "runs", "accuracy (mean+-sd)",
              "MI bits (mean+-sd)");
  for (const auto& r : report.rows)
    std::printf("%-12s %6.2f %5zu %9.4f +- %.4f %9.4f +- %.4f\n", r.method.c_str(), r.p, r.runs,
                r.accuracy_mean, r.accuracy_sd, r.mi_mean, r.mi_sd);
  std::printf("tables in %s\n", out_dir.c_str());
  return 0;
}

// Finite-difference sweep over the layer zoo and the full digit network.
int cmd_gradcheck() {
  int failures = 0;
  auto report_line = [&](const std::string& name, const FiniteDiffReport& report, double tol) {
    const bool ok = report.pass(tol);
    failures += !ok;
    std::printf("%-34s max_rel_err=%.3e  %s\n", name.c_str(), report.worst, ok ? "ok" : "FAIL");
  };

  {
    ParamStore params;
    Rng rng(7);
    auto w = params.add("w", make_tensor({4, 3}));
    auto x = make_tensor({2, 4});
    for (auto* t : {&w, &x})
      for (double& v : (*t)->data) v = rng.uniform(-1.0, 1.0);
    auto loss_fn = [&](bool with_grad) {
      Tape tape;
      auto out = ops::matmul(x, w, with_grad ? &tape : nullptr);
      auto loss = ops::sum(out, with_grad ? &tape : nullptr);
      if (with_grad) tape.backward(loss);
      return loss->scalar();
    };
    report_line("matmul", finite_diff_check(loss_fn, params), 1e-4);
  }

  for (Method method : {Method::deterministic, Method::dropout, Method::dropconnect, Method::sdc,
                        Method::sdc_weak, Method::bbb}) {
    auto model = build_mnist_model(method, method == Method::bbb ? 0.0 : 0.4, 11);
    auto x = make_tensor({2, 1, 28, 28});
    Rng rng(13);
    for (double& v : x->data) v = rng.uniform(0.0, 1.0);
    std::vector<std::size_t> labels{3, 7};
    auto loss_fn = [&](bool with_grad) {
      Tape tape;
      ForwardCtx ctx;
      ctx.tape = with_grad ? &tape : nullptr;
      ctx.mode = RunMode::train;
      ctx.master_seed = 5;
      ctx.pass = 1;  // frozen masks / epsilons via fixed lineage
      auto probs = ops::softmax(model->forward(x, ctx), ctx.tape);
      auto loss = ops::cross_entropy(probs, labels, ctx.tape);
      if (with_grad) tape.backward(loss);
      return loss->scalar();
    };
    report_line("mnist_cnn[" + to_string(method) + "]",
                finite_diff_check(loss_fn, model->params(), 1e-6, 6), 1e-4);
  }

  std::printf(failures ? "gradient check FAILED\n" : "gradient check passed\n");
  return failures ? 1 : 0;
}

// Fast smoke checks of the numeric core.
int cmd_selftest() {
  int failures = 0;
  auto check = [&](bool ok, const char* what) {
    failures += !ok;
    std::printf("%-46s %s\n", what, ok ? "ok" : "FAIL");
  };

  check(std::abs(entropy_bits({0.5, 0.5}) - 1.0) < 1e-12, "entropy of a fair coin is 1 bit");
  check(std::abs(mutual_information_bits({{0.8, 0.2}, {0.6, 0.4}}) - 0.0349) < 5e-5,
        "mutual information worked example");

  MaskSpec dc = MaskSpec::make(MaskMethod::dropconnect, 0.25);
  check(std::abs(expected_mask_value(dc) - 0.75) < 1e-15, "dropconnect expected mask value");
  auto mask = sample_mask(dc, {200000}, SeedLineage{1, 2, 3});
  double mean = 0.0;
  for (double v : mask.values->data) mean += v;
  mean /= static_cast<double>(mask.values->size());
  check(std::abs(mean - 0.75) < 0.005, "dropconnect empirical mask mean");

  IdxArray arr;
  arr.dims = {2, 3};
  arr.payload = {1, 2, 3, 4, 5, 6};
  auto round = parse_idx(serialize_idx(arr));
  check(round.dims == arr.dims && round.payload == arr.payload, "idx round-trip");

  auto probs = softmax_logits({0.0, 0.0, 0.0, 0.0});
  check(std::abs(probs[0] - 0.25) < 1e-12, "uniform softmax");

  std::printf(failures ? "selftest FAILED\n" : "selftest passed\n");
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic connection-masking networks: training, Monte-Carlo evaluation and "
               "uncertainty analysis"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_dir = "compare_out";
  std::vector<std::string> config_paths;
  bool paper_scale = false;
  std::size_t workers = 1;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config_path, "config file (JSON or key=value)")->required();
  train_cmd->add_flag("--paper-scale", paper_scale,
                      "use the full-scale protocol (500 epochs, lr 1e-3, full split)");

  auto* eval_cmd = app.add_subcommand("eval", "Monte-Carlo evaluation of a checkpoint");
  eval_cmd->add_option("--config", config_path, "config file")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* compare_cmd = app.add_subcommand("compare", "Train+evaluate several configs and tabulate");
  compare_cmd->add_option("--configs", config_paths, "config files")->required()->expected(-1);
  compare_cmd->add_option("--out", out_dir, "directory for comparison tables");
  compare_cmd->add_option("--workers", workers, "parallel runs");

  app.add_subcommand("gradcheck", "Finite-difference check of every layer's gradients");
  app.add_subcommand("selftest", "Fast smoke checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return cmd_train(config_path, paper_scale);
    if (app.got_subcommand("eval")) return cmd_eval(config_path, checkpoint_path);
    if (app.got_subcommand("compare")) return cmd_compare(config_paths, out_dir, workers);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const sdcnet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const sdcnet::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const sdcnet::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
