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

#include "scpl/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "scpl/rng.hpp"

namespace scpl {

namespace {

using Kind = DataError::Kind;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(Kind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& path) {
  if (bytes.size() < offset + 4)
    throw DataError(Kind::kTruncated, path + ": truncated IDX header");
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void check_payload(const std::vector<unsigned char>& bytes, std::size_t header, std::size_t payload,
                   const std::string& path) {
  if (bytes.size() < header + payload)
    throw DataError(Kind::kTruncated, path + ": payload holds " +
                                          std::to_string(bytes.size() - header) + " bytes, header declares " +
                                          std::to_string(payload));
  if (bytes.size() > header + payload)
    throw DataError(Kind::kCountMismatch,
                    path + ": " + std::to_string(bytes.size() - header - payload) +
                        " bytes beyond the declared payload");
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string to_hex(const unsigned char* digest, unsigned int len) {
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw Error("sha256: init failed");
  }
  void update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(ctx_.get(), data, len) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest, &len) != 1) throw Error("sha256: final failed");
    return to_hex(digest, len);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::size_t count_classes(const std::vector<int>& labels) {
  int hi = -1;
  for (int l : labels) hi = std::max(hi, l);
  return static_cast<std::size_t>(hi + 1);
}

void copy_sample(const Dataset& data, std::size_t index, double* dst) {
  auto src = data.sample(index);
  std::copy(src.begin(), src.end(), dst);
}

}  // namespace

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t width = sample_size();
  return std::span<const double>(features).subspan(i * width, width);
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t width = sample_size();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) copy_sample(*this, indices[r], out.data() + r * width);
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) out[r] = labels[indices[r]];
  return out;
}

void Dataset::validate() const {
  if (features.size() != labels.size() * sample_size())
    throw DataError(Kind::kCountMismatch, "dataset feature count does not match label count");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw DataError(Kind::kInvalidLabel, "label " + std::to_string(l) + " outside [0, " +
                                               std::to_string(num_classes) + ")");
  std::vector<bool> seen(size(), false);
  for (const auto* split : {&train, &test})
    for (auto i : *split) {
      if (i >= size() || seen[i])
        throw DataError(Kind::kInvalidParams, "train/test split overlaps or is out of range");
      seen[i] = true;
    }
}

Dataset gen_blobs(const BlobParams& p) {
  if (p.classes < 2 || p.dim < 1 || p.per_class < 1 || !(p.spread > 0.0))
    throw DataError(Kind::kInvalidParams,
                    "blobs need classes >= 2, dim >= 1, per_class >= 1 and spread > 0");
  std::mt19937_64 rng(derive_seed(p.seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double separation = 6.0 * p.spread;

  std::vector<std::vector<double>> means(p.classes, std::vector<double>(p.dim, 0.0));
  if (p.classes <= p.dim) {
    // Scaled simplex vertices: pairwise distance exactly `separation`.
    for (std::size_t c = 0; c < p.classes; ++c) means[c][c] = separation / std::sqrt(2.0);
  } else {
    double closest = 0.0;
    while (closest <= 0.0) {
      for (auto& m : means)
        for (auto& v : m) v = normal(rng);
      closest = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < p.classes; ++a)
        for (std::size_t b = a + 1; b < p.classes; ++b) {
          double d2 = 0.0;
          for (std::size_t k = 0; k < p.dim; ++k) d2 += std::pow(means[a][k] - means[b][k], 2);
          closest = std::min(closest, std::sqrt(d2));
        }
    }
    for (auto& m : means)
      for (auto& v : m) v *= separation / closest;
  }

  Dataset data;
  data.sample_shape = {p.dim};
  data.num_classes = p.classes;
  data.features.reserve(p.classes * p.per_class * p.dim);
  for (std::size_t c = 0; c < p.classes; ++c)
    for (std::size_t i = 0; i < p.per_class; ++i) {
      for (std::size_t k = 0; k < p.dim; ++k) data.features.push_back(means[c][k] + p.spread * normal(rng));
      data.labels.push_back(static_cast<int>(c));
    }

  const std::size_t train_per_class = (2 * p.per_class + 2) / 3;
  for (std::size_t c = 0; c < p.classes; ++c) {
    std::vector<std::size_t> idx(p.per_class);
    for (std::size_t i = 0; i < p.per_class; ++i) idx[i] = c * p.per_class + i;
    std::shuffle(idx.begin(), idx.end(), rng);
    data.train.insert(data.train.end(), idx.begin(), idx.begin() + train_per_class);
    data.test.insert(data.test.end(), idx.begin() + train_per_class, idx.end());
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.test.begin(), data.test.end());

  data.provenance = {{"generator", "blobs"},
                     {"classes", p.classes},
                     {"dim", p.dim},
                     {"per_class", p.per_class},
                     {"spread", p.spread},
                     {"seed", p.seed},
                     {"checksum", dataset_checksum(data)}};
  return data;
}

ViewBatch single_view(const Dataset& data, std::span<const std::size_t> indices) {
  ViewBatch b;
  b.features = data.gather(indices);
  b.labels = data.gather_labels(indices);
  b.origin.assign(indices.begin(), indices.end());
  b.views = 1;
  return b;
}

ViewBatch two_view_augment(const Dataset& data, std::span<const std::size_t> indices,
                           const AugmentOptions& options, std::uint64_t seed) {
  if (options.noise < 0.0) throw DataError(Kind::kInvalidParams, "augmentation noise must be >= 0");
  const std::size_t n = indices.size(), width = data.sample_size();
  const bool image = data.sample_shape.size() == 3;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  std::vector<double> out(2 * n * width);
  ViewBatch b;
  b.views = 2;
  for (std::size_t view = 0; view < 2; ++view)
    for (std::size_t r = 0; r < n; ++r) {
      double* dst = out.data() + (view * n + r) * width;
      copy_sample(data, indices[r], dst);
      if (options.flip && image && coin(rng)) {
        const std::size_t channels = data.sample_shape[0], h = data.sample_shape[1],
                          w = data.sample_shape[2];
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t y = 0; y < h; ++y)
            std::reverse(dst + (c * h + y) * w, dst + (c * h + y + 1) * w);
      }
      if (options.noise > 0.0)
        for (std::size_t k = 0; k < width; ++k) dst[k] += options.noise * normal(rng);
      b.labels.push_back(data.labels[indices[r]]);
      b.origin.push_back(indices[r]);
    }
  Shape shape{2 * n};
  shape.insert(shape.end(), data.sample_shape.begin(), data.sample_shape.end());
  b.features = Tensor(std::move(shape), std::move(out));
  return b;
}

std::vector<ViewBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                               std::size_t epoch, std::size_t views, const AugmentOptions& augment) {
  if (batch_size == 0) throw DataError(Kind::kInvalidParams, "batch size must be positive");
  if (views != 1 && views != 2) throw DataError(Kind::kInvalidParams, "views must be 1 or 2");
  std::vector<std::size_t> order = data.train;
  std::mt19937_64 rng(derive_seed(seed, {epoch, 0}));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<ViewBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    if (len < batch_size && len < 2) break;
    std::span<const std::size_t> idx(order.data() + start, len);
    if (views == 2)
      out.push_back(two_view_augment(data, idx, augment, derive_seed(seed, {epoch, out.size() + 1})));
    else
      out.push_back(single_view(data, idx));
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (read_be32(images, 0, images_path) != 0x00000803u)
    throw DataError(Kind::kBadMagic, images_path + ": bad magic, expected 0x00000803");
  if (read_be32(labels, 0, labels_path) != 0x00000801u)
    throw DataError(Kind::kBadMagic, labels_path + ": bad magic, expected 0x00000801");

  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  check_payload(images, 16, n * rows * cols, images_path);
  check_payload(labels, 8, n_labels, labels_path);
  if (n != n_labels)
    throw DataError(Kind::kCountMismatch, "image file holds " + std::to_string(n) +
                                              " images but label file holds " +
                                              std::to_string(n_labels) + " labels");

  Dataset data;
  data.sample_shape = {1, rows, cols};
  data.features.resize(n * rows * cols);
  for (std::size_t i = 0; i < data.features.size(); ++i)
    data.features[i] = static_cast<double>(images[16 + i]) / 255.0;
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.labels[i] = labels[8 + i];
  data.num_classes = count_classes(data.labels);
  data.train.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.train[i] = i;
  data.provenance = {{"source", "idx"},
                     {"images", images_path},
                     {"labels", labels_path},
                     {"checksum", dataset_checksum(data)}};
  return data;
}

Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream is(path);
  if (!is) throw DataError(Kind::kIo, "cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw DataError(Kind::kTruncated, path + ": missing header row");
  const auto header = split_csv_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw DataError(Kind::kUnknownColumn, path + ": no column named '" + label_column + "'");
  const std::size_t label_index = static_cast<std::size_t>(label_it - header.begin());

  Dataset data;
  data.sample_shape = {header.size() - 1};
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(Kind::kRaggedRow, path + ":" + std::to_string(line_no) + ": expected " +
                                            std::to_string(header.size()) + " cells, found " +
                                            std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double value = 0.0;
      const auto& cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
        throw DataError(Kind::kNonNumeric, path + ":" + std::to_string(line_no) + ": column '" +
                                               header[c] + "' is not numeric: '" + cell + "'");
      if (c == label_index) {
        if (value < 0 || value != std::floor(value) || value > std::numeric_limits<int>::max())
          throw DataError(Kind::kInvalidLabel, path + ":" + std::to_string(line_no) +
                                                   ": label must be a non-negative integer");
        data.labels.push_back(static_cast<int>(value));
      } else {
        data.features.push_back(value);
      }
    }
  }
  if (data.labels.empty()) throw DataError(Kind::kTruncated, path + ": no data rows");
  data.num_classes = count_classes(data.labels);
  data.train.resize(data.labels.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) data.train[i] = i;
  data.provenance = {{"source", "csv"}, {"path", path}, {"checksum", file_checksum(path)}};
  return data;
}

void write_csv(const Dataset& data, std::span<const std::size_t> indices, const std::string& path,
               const std::string& label_column) {
  std::ofstream os(path);
  if (!os) throw DataError(Kind::kIo, "cannot open " + path + " for writing");
  const std::size_t width = data.sample_size();
  for (std::size_t k = 0; k < width; ++k) os << 'x' << k << ',';
  os << label_column << '\n';
  char buf[64];
  for (auto i : indices) {
    for (double v : data.sample(i)) {
      const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      os.write(buf, end - buf);
      os << ',';
    }
    os << data.labels[i] << '\n';
  }
  if (!os) throw DataError(Kind::kIo, "failed writing " + path);
}

void split_dataset(Dataset& data, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw DataError(Kind::kInvalidParams, "test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, {7}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  data.test.assign(order.begin(), order.begin() + n_test);
  data.train.assign(order.begin() + n_test, order.end());
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.test.begin(), data.test.end());
}

std::string dataset_checksum(const Dataset& data) {
  Sha256 sha;
  for (double v : data.features) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    sha.update(bytes, 8);
  }
  for (int l : data.labels) {
    const auto u = static_cast<std::uint32_t>(l);
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    sha.update(bytes, 4);
  }
  return sha.hex();
}

std::string file_checksum(const std::string& path) {
  const auto bytes = read_file(path);
  Sha256 sha;
  sha.update(bytes.data(), bytes.size());
  return sha.hex();
}

}  // namespace scpl
