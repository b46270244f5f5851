// Copyright 2026 The SCPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scpl/error.hpp"
#include "scpl/tensor.hpp"

namespace scpl {

/// Loader failure with a stable classification.
class DataError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kTruncated,
    kCountMismatch,
    kRaggedRow,
    kNonNumeric,
    kUnknownColumn,
    kInvalidLabel,
    kInvalidParams,
    kIo,
  };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Labeled samples plus a train/test split. Features are row-major with
/// `sample_shape` per sample.
struct Dataset {
  Shape sample_shape;
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  nlohmann::json provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return numel(sample_shape); }
  std::span<const double> sample(std::size_t i) const;
  // Stacks the given samples into a batch tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  void validate() const;
};

/// A training batch of `views` x N rows. Rows [k*N, (k+1)*N) hold view k;
/// `origin` names the dataset sample each row came from.
struct ViewBatch {
  Tensor features;
  std::vector<int> labels;
  std::vector<std::size_t> origin;
  std::size_t views = 1;

  std::size_t size() const { return labels.size(); }
};

struct BlobParams {
  std::size_t classes = 3;
  std::size_t dim = 16;
  std::size_t per_class = 300;
  double spread = 1.0;
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian blobs around well-separated class means (pairwise
/// distance at least 6 * spread) with a stratified 2:1 train/test split.
Dataset gen_blobs(const BlobParams& params);

struct AugmentOptions {
  double noise = 0.0;
  // Random horizontal flip for rank-3 (channels x h x w) samples.
  bool flip = false;
};

/// Emits every sample twice with independent jitter (and optional flips).
ViewBatch two_view_augment(const Dataset& data, std::span<const std::size_t> indices,
                           const AugmentOptions& options, std::uint64_t seed);

/// One view per sample, no augmentation.
ViewBatch single_view(const Dataset& data, std::span<const std::size_t> indices);

/// Epoch batches over the training split in a seed-determined order. A short
/// trailing batch is kept when it holds at least two samples.
std::vector<ViewBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                               std::size_t epoch, std::size_t views,
                               const AugmentOptions& augment = {});

/// IDX images (magic 0x00000803) and labels (0x00000801); pixels scaled to
/// [0, 1]. Every sample lands in the training split.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Numeric CSV with a header row. Non-label columns become features.
Dataset load_csv(const std::string& path, const std::string& label_column);

void write_csv(const Dataset& data, std::span<const std::size_t> indices, const std::string& path,
               const std::string& label_column = "label");

/// Reassigns the split: a seeded shuffle, `test_fraction` of samples to test.
void split_dataset(Dataset& data, double test_fraction, std::uint64_t seed);

/// Hex SHA-256 of the features (as little-endian doubles) and labels.
std::string dataset_checksum(const Dataset& data);
std::string file_checksum(const std::string& path);

}  // namespace scpl
