#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdcnet/tensor.hpp"

namespace sdcnet {

enum class Split { train, val, test };

// Immutable after construction; inputs are [n,c,h,w] scaled to [0,1].
struct Dataset {
  TensorPtr inputs;
  std::vector<std::size_t> labels;
  Split split = Split::train;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }

  // Copy of sample i as a [1,c,h,w] tensor.
  TensorPtr sample(std::size_t i) const;

  // Copy of samples [first, first+count) as [count,c,h,w].
  TensorPtr slice(std::size_t first, std::size_t count) const;
};

// How many items to take from the two MNIST files. Items are taken as
// deterministic prefixes: train from the train file; val and test as
// consecutive disjoint ranges of the test file (val first). The full-data
// split (50000/10000/10000) is the one documented exception: there val and
// test both alias the whole 10k test file.
struct SplitSpec {
  std::size_t train_items = 50000;
  std::size_t val_items = 10000;
  std::size_t test_items = 10000;

  static SplitSpec desk_scale() { return {5000, 1000, 1000}; }
};

struct MnistFiles {
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string test_images = "t10k-images-idx3-ubyte";
  std::string test_labels = "t10k-labels-idx1-ubyte";
};

Dataset load_mnist(const std::string& dir, Split split, const SplitSpec& spec,
                   const MnistFiles& files = {});

// K Gaussian blobs centered on a circle in a 2-feature space, rendered as
// [n,1,2,1] images (one feature per pixel), clamped to [0,1]. noise_sigma = 0
// gives exactly separable point classes.
Dataset synth_blobs(std::size_t k, std::size_t n_per_class, double noise_sigma,
                    std::uint64_t seed);

// Deterministic batch order for one epoch: indices shuffled by shuffle_seed
// (or left in order if shuffle is off), cut into batch_size chunks, last
// partial batch included.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n_items, std::size_t batch_size,
                                                 std::uint64_t shuffle_seed, bool shuffle = true);

}  // namespace sdcnet
