#include "sdcnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sdcnet/idx.hpp"
#include "sdcnet/rng.hpp"

namespace sdcnet {

TensorPtr Dataset::sample(std::size_t i) const { return slice(i, 1); }

TensorPtr Dataset::slice(std::size_t first, std::size_t count) const {
  const Shape& s = inputs->shape;
  const std::size_t item = numel(Shape(s.begin() + 1, s.end()));
  if (first + count > s[0])
    throw DimensionError("dataset slice [" + std::to_string(first) + "," +
                         std::to_string(first + count) + ") out of " + std::to_string(s[0]));
  Shape out_shape = s;
  out_shape[0] = count;
  auto out = make_tensor(out_shape);
  std::copy(inputs->data.begin() + static_cast<std::ptrdiff_t>(first * item),
            inputs->data.begin() + static_cast<std::ptrdiff_t>((first + count) * item),
            out->data.begin());
  return out;
}

namespace {

Dataset from_idx(const IdxArray& images, const IdxArray& labels, std::size_t first,
                 std::size_t count, Split split) {
  if (images.dims.size() != 3)
    throw DataError("mnist image file must be rank 3, got rank " +
                    std::to_string(images.dims.size()));
  if (labels.dims.size() != 1)
    throw DataError("mnist label file must be rank 1, got rank " +
                    std::to_string(labels.dims.size()));
  if (images.dims[0] != labels.dims[0])
    throw DataError("mnist image/label count mismatch: " + std::to_string(images.dims[0]) +
                    " images vs " + std::to_string(labels.dims[0]) + " labels");
  if (first + count > images.dims[0])
    throw DataError("mnist split needs items [" + std::to_string(first) + "," +
                    std::to_string(first + count) + ") but file has " +
                    std::to_string(images.dims[0]));
  const std::size_t h = images.dims[1], w = images.dims[2], hw = h * w;
  Dataset ds;
  ds.split = split;
  ds.classes = 10;
  ds.inputs = make_tensor({count, 1, h, w});
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* src = images.payload.data() + (first + i) * hw;
    double* dst = ds.inputs->data.data() + i * hw;
    for (std::size_t p = 0; p < hw; ++p) dst[p] = static_cast<double>(src[p]) / 255.0;
    const std::uint8_t lbl = labels.payload[first + i];
    if (lbl >= 10) throw DataError("mnist label " + std::to_string(int(lbl)) + " out of range");
    ds.labels[i] = lbl;
  }
  return ds;
}

}  // namespace

Dataset load_mnist(const std::string& dir, Split split, const SplitSpec& spec,
                   const MnistFiles& files) {
  const std::string sep = dir.empty() || dir.back() == '/' ? "" : "/";
  if (split == Split::train) {
    auto images = read_idx_file(dir + sep + files.train_images);
    auto labels = read_idx_file(dir + sep + files.train_labels);
    return from_idx(images, labels, 0, spec.train_items, split);
  }
  auto images = read_idx_file(dir + sep + files.test_images);
  auto labels = read_idx_file(dir + sep + files.test_labels);
  // val and test tile the test pool disjointly (val first); if the two
  // requests cannot fit, both fall back to aliasing from the front, which is
  // how the full 10k/10k split is served.
  const bool disjoint = spec.val_items + spec.test_items <= images.dims[0];
  if (split == Split::val) return from_idx(images, labels, 0, spec.val_items, split);
  return from_idx(images, labels, disjoint ? spec.val_items : 0, spec.test_items, split);
}

Dataset synth_blobs(std::size_t k, std::size_t n_per_class, double noise_sigma,
                    std::uint64_t seed) {
  if (k < 2) throw ConfigError("synth_blobs needs at least 2 classes");
  Dataset ds;
  ds.split = Split::train;
  ds.classes = k;
  const std::size_t n = k * n_per_class;
  ds.inputs = make_tensor({n, 1, 2, 1});
  ds.labels.resize(n);
  Rng rng(derive_seed({seed, stream::kSynth}));
  const double radius = 0.35;
  std::size_t i = 0;
  for (std::size_t cls = 0; cls < k; ++cls) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(k);
    const double cx = 0.5 + radius * std::cos(angle);
    const double cy = 0.5 + radius * std::sin(angle);
    for (std::size_t j = 0; j < n_per_class; ++j, ++i) {
      const double x = std::clamp(cx + noise_sigma * rng.normal(), 0.0, 1.0);
      const double y = std::clamp(cy + noise_sigma * rng.normal(), 0.0, 1.0);
      ds.inputs->data[i * 2] = x;
      ds.inputs->data[i * 2 + 1] = y;
      ds.labels[i] = cls;
    }
  }
  return ds;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n_items, std::size_t batch_size,
                                                 std::uint64_t shuffle_seed, bool shuffle_order) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(n_items);
  for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
  if (shuffle_order) {
    Rng rng(shuffle_seed);
    shuffle(order, rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_items; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, n_items);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace sdcnet
