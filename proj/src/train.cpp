#include "sdcnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "sdcnet/adadelta.hpp"
#include "sdcnet/checkpoint.hpp"
#include "sdcnet/ops.hpp"

namespace sdcnet {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

double kl_weight_for_batch(const std::string& schedule, std::size_t batch_index,
                           std::size_t n_batches) {
  const double m = static_cast<double>(n_batches);
  if (schedule == "geometric") {
    // 2^(M-i) / (2^M - 1) for the i-th batch (1-based), computed in a form
    // that does not overflow for large M.
    const double i = static_cast<double>(batch_index + 1);
    return std::pow(0.5, i) / (1.0 - std::pow(0.5, m));
  }
  return 1.0 / m;
}

struct ValMetrics {
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double mean_mi = std::numeric_limits<double>::quiet_NaN();
  double mean_entropy = std::numeric_limits<double>::quiet_NaN();
};

ValMetrics run_mc_metrics(Model& model, const Dataset& ds, std::size_t passes,
                          std::uint64_t master_seed, std::uint64_t stream_tag,
                          std::size_t chunk, std::size_t threads,
                          std::vector<PredictiveSummary>* out_summaries) {
  ValMetrics m;
  if (ds.size() == 0) return m;
  std::vector<PredictiveSummary> summaries;
  summaries.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t count = std::min(chunk, ds.size() - start);
    auto part = mc_predict_batch(model, ds.slice(start, count), passes, master_seed, stream_tag,
                                 threads);
    for (auto& s : part) summaries.push_back(std::move(s));
  }
  m.accuracy = popular_vote_accuracy(summaries, ds.labels);
  double mi = 0.0, ent = 0.0;
  for (const auto& s : summaries) {
    mi += s.mutual_information;
    ent += s.mean_entropy;
  }
  m.mean_mi = mi / static_cast<double>(summaries.size());
  m.mean_entropy = ent / static_cast<double>(summaries.size());
  if (out_summaries) *out_summaries = std::move(summaries);
  return m;
}

}  // namespace

Dataset load_split(const ExperimentConfig& cfg, Split split) {
  if (cfg.dataset == "blobs") {
    const std::size_t n = split == Split::train  ? cfg.train_items
                          : split == Split::val ? cfg.val_items
                                                : cfg.test_items;
    const std::size_t per_class = std::max<std::size_t>(1, n / cfg.blob_classes);
    Dataset ds = synth_blobs(cfg.blob_classes, per_class, cfg.blob_noise,
                             derive_seed({cfg.seed, static_cast<std::uint64_t>(split)}));
    ds.split = split;
    return ds;
  }
  SplitSpec spec{cfg.train_items, cfg.val_items, cfg.test_items};
  return load_mnist(cfg.data_dir, split, spec);
}

std::pair<TensorPtr, std::vector<std::size_t>> make_batch(const Dataset& ds,
                                                          const std::vector<std::size_t>& indices) {
  const Shape& s = ds.inputs->shape;
  const std::size_t item = numel(Shape(s.begin() + 1, s.end()));
  Shape shape = s;
  shape[0] = indices.size();
  auto x = make_tensor(shape);
  std::vector<std::size_t> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(ds.inputs->data.begin() + static_cast<std::ptrdiff_t>(indices[i] * item),
              ds.inputs->data.begin() + static_cast<std::ptrdiff_t>((indices[i] + 1) * item),
              x->data.begin() + static_cast<std::ptrdiff_t>(i * item));
    labels[i] = ds.labels[indices[i]];
  }
  return {std::move(x), std::move(labels)};
}

double popular_vote_accuracy(const std::vector<PredictiveSummary>& summaries,
                             const std::vector<std::size_t>& labels) {
  if (summaries.size() != labels.size())
    throw DimensionError("accuracy: summary/label count mismatch");
  if (summaries.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < summaries.size(); ++i)
    correct += summaries[i].popular_class == labels[i];
  return static_cast<double>(correct) / static_cast<double>(summaries.size());
}

TrainResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  Dataset train_ds = load_split(cfg, Split::train);
  Dataset val_ds;
  if (cfg.val_items > 0) val_ds = load_split(cfg, Split::val);

  const Method method = method_from_string(cfg.method);
  auto model = build_model(cfg.architecture, method, cfg.leave_out_rate(), train_ds.classes,
                           cfg.seed);

  AdadeltaState opt;  // rho 0.9, eps 1e-6
  TrainResult result;
  std::uint64_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = batch_iter(train_ds.size(), cfg.batch_size,
                              derive_seed({cfg.seed, stream::kShuffle, epoch}));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b, ++global_step) {
      auto [x, labels] = make_batch(train_ds, batches[b]);
      Tape tape;
      ForwardCtx ctx;
      ctx.tape = &tape;
      ctx.mode = RunMode::train;
      ctx.master_seed = cfg.seed;
      ctx.stream_tag = method == Method::bbb ? stream::kTrainEps : stream::kTrainMask;
      ctx.pass = global_step;

      double loss_value;
      if (method == Method::bbb) {
        const double kl_w = kl_weight_for_batch(cfg.kl_schedule, b, batches.size());
        auto elbo = elbo_minibatch(*model, x, labels, cfg.bbb_train_samples, kl_w, &tape, ctx);
        loss_value = elbo.breakdown.total;
        if (!std::isfinite(loss_value))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                               std::to_string(b));
        tape.backward(elbo.total);
      } else {
        auto logits = model->forward(x, ctx);
        auto probs = ops::softmax(logits, &tape);
        auto loss = ops::cross_entropy(probs, labels, &tape);
        loss_value = loss->scalar();
        if (!std::isfinite(loss_value))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                               std::to_string(b));
        tape.backward(loss);
      }
      adadelta_step(model->params(), opt, cfg.learning_rate);
      model->params().zero_grads();
      loss_sum += loss_value;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches.size());
    if (val_ds.size() > 0 && cfg.val_passes > 0) {
      ValMetrics vm = run_mc_metrics(*model, val_ds, cfg.val_passes,
                                     derive_seed({cfg.seed, stream::kValPass, epoch}),
                                     stream::kValPass, cfg.eval_chunk, cfg.threads, nullptr);
      log.val_accuracy = vm.accuracy;
      log.val_mean_mi_bits = vm.mean_mi;
    } else {
      log.val_accuracy = std::numeric_limits<double>::quiet_NaN();
      log.val_mean_mi_bits = std::numeric_limits<double>::quiet_NaN();
    }
    result.epochs.push_back(log);
  }

  result.checkpoint_path = cfg.output_dir + "/checkpoint.bin";
  save_checkpoint(result.checkpoint_path, *model, cfg);

  std::ostringstream log_csv;
  log_csv << "epoch,train_loss,val_accuracy,val_mean_mi_bits\n";
  for (const auto& e : result.epochs)
    log_csv << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_accuracy) << ','
            << fmt(e.val_mean_mi_bits) << '\n';
  write_text(cfg.output_dir + "/train_log.csv", log_csv.str());
  return result;
}

EvalResult evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    bool write_outputs) {
  cfg.validate();
  auto loaded = load_checkpoint(checkpoint_path);
  if (loaded.config.method != cfg.method || loaded.config.architecture != cfg.architecture ||
      loaded.config.leave_out_rate() != cfg.leave_out_rate())
    throw ConfigError("checkpoint was trained as method=" + loaded.config.method +
                      " p=" + std::to_string(loaded.config.leave_out_rate()) + " arch=" +
                      loaded.config.architecture + ", which does not match the eval config");

  Dataset test_ds = load_split(cfg, Split::test);

  EvalResult result;
  ValMetrics tm = run_mc_metrics(*loaded.model, test_ds, cfg.test_passes,
                                 derive_seed({cfg.seed, stream::kTestPass}), stream::kTestPass,
                                 cfg.eval_chunk, cfg.threads, &result.summaries);
  result.labels = test_ds.labels;
  result.accuracy = tm.accuracy;
  result.mean_mi_bits = tm.mean_mi;
  result.mean_entropy_bits = tm.mean_entropy;
  result.rejection = rejection_analysis(result.summaries, result.labels, uniform_thresholds());

  if (write_outputs) {
    fs::create_directories(cfg.output_dir);
    std::ostringstream metrics;
    metrics << "method,p,seed,split,accuracy,mean_mi_bits,mean_entropy_bits\n";
    if (cfg.val_items > 0 && cfg.val_passes > 0) {
      Dataset val_ds = load_split(cfg, Split::val);
      ValMetrics vm = run_mc_metrics(*loaded.model, val_ds, cfg.val_passes,
                                     derive_seed({cfg.seed, stream::kValPass}), stream::kValPass,
                                     cfg.eval_chunk, cfg.threads, nullptr);
      metrics << cfg.method << ',' << fmt(cfg.leave_out_rate()) << ',' << cfg.seed << ",val,"
              << fmt(vm.accuracy) << ',' << fmt(vm.mean_mi) << ',' << fmt(vm.mean_entropy) << '\n';
    }
    metrics << cfg.method << ',' << fmt(cfg.leave_out_rate()) << ',' << cfg.seed << ",test,"
            << fmt(result.accuracy) << ',' << fmt(result.mean_mi_bits) << ','
            << fmt(result.mean_entropy_bits) << '\n';
    write_text(cfg.output_dir + "/metrics.csv", metrics.str());

    std::ostringstream jsonl;
    for (const auto& s : result.summaries) jsonl << to_json(s, cfg.dump_passes) << '\n';
    write_text(cfg.output_dir + "/summaries.jsonl", jsonl.str());

    write_text(cfg.output_dir + "/rejection_curve.json", to_json(result.rejection));
    std::ostringstream rej;
    rej << "threshold,retained_fraction,retained_accuracy\n";
    for (std::size_t i = 0; i < result.rejection.thresholds.size(); ++i)
      rej << fmt(result.rejection.thresholds[i]) << ',' << fmt(result.rejection.retained_fraction[i])
          << ',' << fmt(result.rejection.retained_accuracy[i]) << '\n';
    write_text(cfg.output_dir + "/rejection_curve.csv", rej.str());
  }
  return result;
}

CompareReport compare_methods(const std::vector<ExperimentConfig>& configs,
                              const std::string& out_dir, std::size_t n_workers) {
  if (configs.empty()) throw ConfigError("compare: no configs given");
  for (const auto& cfg : configs) cfg.validate();
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const auto& a = configs[0];
    const auto& b = configs[i];
    if (a.dataset != b.dataset || a.data_dir != b.data_dir || a.train_items != b.train_items ||
        a.val_items != b.val_items || a.test_items != b.test_items ||
        a.architecture != b.architecture)
      throw ConfigError("compare: config " + std::to_string(i) +
                        " describes a different dataset/architecture than config 0");
  }
  {
    std::vector<std::string> dirs;
    for (const auto& cfg : configs) dirs.push_back(cfg.output_dir);
    std::sort(dirs.begin(), dirs.end());
    if (std::adjacent_find(dirs.begin(), dirs.end()) != dirs.end())
      throw ConfigError("compare: configs must use distinct output_dir values");
  }

  // Train+evaluate each config; fixed worker count, deterministic job order.
  std::vector<EvalResult> evals(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(n_workers, configs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < configs.size(); i += workers) {
        try {
          TrainResult tr = train(configs[i]);
          evals[i] = evaluate(configs[i], tr.checkpoint_path, true);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  // Aggregate over seeds per (method, p), in first-seen order.
  CompareReport report;
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto key = std::make_pair(configs[i].method, configs[i].leave_out_rate());
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(i);
    report.run_dirs.push_back(configs[i].output_dir);
  }
  auto mean_sd = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double sd = 0.0;
    if (v.size() > 1) {
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    }
    return std::make_pair(mean, sd);
  };
  for (const auto& key : keys) {
    CompareRow row;
    row.method = key.first;
    row.p = key.second;
    std::vector<double> accs, mis;
    for (std::size_t i : groups[key]) {
      accs.push_back(evals[i].accuracy);
      mis.push_back(evals[i].mean_mi_bits);
    }
    row.runs = accs.size();
    std::tie(row.accuracy_mean, row.accuracy_sd) = mean_sd(accs);
    std::tie(row.mi_mean, row.mi_sd) = mean_sd(mis);
    report.rows.push_back(row);
  }

  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "method,p,runs,accuracy_mean,accuracy_sd,mi_mean_bits,mi_sd_bits\n";
  for (const auto& r : report.rows)
    csv << r.method << ',' << fmt(r.p) << ',' << r.runs << ',' << fmt(r.accuracy_mean) << ','
        << fmt(r.accuracy_sd) << ',' << fmt(r.mi_mean) << ',' << fmt(r.mi_sd) << '\n';
  write_text(out_dir + "/comparison.csv", csv.str());

  std::ostringstream js;
  js << "{\"rows\":[";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    if (i) js << ',';
    js << "{\"method\":\"" << r.method << "\",\"p\":" << fmt(r.p) << ",\"runs\":" << r.runs
       << ",\"accuracy_mean\":" << fmt(r.accuracy_mean) << ",\"accuracy_sd\":" << fmt(r.accuracy_sd)
       << ",\"mi_mean_bits\":" << fmt(r.mi_mean) << ",\"mi_sd_bits\":" << fmt(r.mi_sd) << '}';
  }
  js << "],\"run_dirs\":[";
  for (std::size_t i = 0; i < report.run_dirs.size(); ++i) {
    if (i) js << ',';
    js << '"' << report.run_dirs[i] << '"';
  }
  js << "]}";
  write_text(out_dir + "/comparison.json", js.str());

  // Per-method rejection curves, averaged over the runs of each group.
  std::ostringstream rej;
  rej << "method,p,threshold,retained_fraction,retained_accuracy\n";
  const auto thresholds = uniform_thresholds();
  for (const auto& key : keys) {
    const auto& idxs = groups[key];
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      double frac = 0.0, acc = 0.0;
      std::size_t acc_n = 0;
      for (std::size_t i : idxs) {
        frac += evals[i].rejection.retained_fraction[t];
        const double a = evals[i].rejection.retained_accuracy[t];
        if (!std::isnan(a)) {
          acc += a;
          acc_n++;
        }
      }
      frac /= static_cast<double>(idxs.size());
      rej << key.first << ',' << fmt(key.second) << ',' << fmt(thresholds[t]) << ',' << fmt(frac)
          << ',' << (acc_n ? fmt(acc / static_cast<double>(acc_n)) : "nan") << '\n';
    }
  }
  write_text(out_dir + "/rejection_curves.csv", rej.str());
  return report;
}

}  // namespace sdcnet
