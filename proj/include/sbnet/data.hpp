#pragma once

// CIFAR binary reader, per-channel normalization and a synthetic dataset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sbnet/tensor.hpp"

namespace sbnet {

inline constexpr std::int64_t kImageSide = 32;
inline constexpr std::int64_t kImageChannels = 3;
inline constexpr std::int64_t kImagePixels = kImageChannels * kImageSide * kImageSide;

struct LabeledBatch {
  Tensor4 images;  // (n, 3, 32, 32)
  std::vector<int> labels;
  int num_classes = 0;

  [[nodiscard]] std::int64_t size() const { return images.n(); }

  void validate() const {
    if (static_cast<std::int64_t>(labels.size()) != images.n())
      throw ShapeError("LabeledBatch: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(images.n()) + " images");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw std::out_of_range("LabeledBatch: label " + std::to_string(l) + " outside [0," +
                                std::to_string(num_classes) + ")");
  }

  // Gathers the given rows, in order.
  [[nodiscard]] LabeledBatch gather(std::span<const std::size_t> rows) const {
    const std::int64_t per = images.c() * images.h() * images.w();
    LabeledBatch out{Tensor4({static_cast<std::int64_t>(rows.size()), images.c(), images.h(), images.w()}),
                     {},
                     num_classes};
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<std::int64_t>(rows[i]) >= images.n()) throw std::out_of_range("LabeledBatch::gather");
      std::copy_n(images.ptr() + static_cast<std::int64_t>(rows[i]) * per, per,
                  out.images.ptr() + static_cast<std::int64_t>(i) * per);
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }

  [[nodiscard]] LabeledBatch head(std::int64_t n) const {
    std::vector<std::size_t> rows(static_cast<std::size_t>(std::min(n, size())));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return gather(rows);
  }
};

// ---- normalization ---------------------------------------------------------

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  // Per-channel statistics over all images and pixels.
  static Normalization fit(const Tensor4& images) {
    Normalization nz;
    const double count = static_cast<double>(images.n() * images.h() * images.w());
    for (std::int64_t c = 0; c < images.c(); ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < images.n(); ++n) {
        const double* p = images.plane(n, c);
        for (std::int64_t i = 0; i < images.h() * images.w(); ++i) s += p[i];
      }
      const double mu = s / count;
      double v = 0.0;
      for (std::int64_t n = 0; n < images.n(); ++n) {
        const double* p = images.plane(n, c);
        for (std::int64_t i = 0; i < images.h() * images.w(); ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      nz.mean.push_back(mu);
      nz.stddev.push_back(std::max(std::sqrt(v / count), 1e-12));
    }
    return nz;
  }

  static Normalization identity(std::int64_t channels) {
    return {std::vector<double>(static_cast<std::size_t>(channels), 0.0),
            std::vector<double>(static_cast<std::size_t>(channels), 1.0)};
  }

  void apply(Tensor4& images) const { map(images, false); }
  void invert(Tensor4& images) const { map(images, true); }

  [[nodiscard]] nlohmann::json to_json() const { return {{"mean", mean}, {"std", stddev}}; }

 private:
  void map(Tensor4& images, bool inverse) const {
    if (static_cast<std::int64_t>(mean.size()) != images.c() || stddev.size() != mean.size())
      throw ShapeError("Normalization: channel count mismatch");
    for (std::int64_t n = 0; n < images.n(); ++n)
      for (std::int64_t c = 0; c < images.c(); ++c) {
        double* p = images.plane(n, c);
        const double mu = mean[static_cast<std::size_t>(c)];
        const double sd = stddev[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < images.h() * images.w(); ++i)
          p[i] = inverse ? p[i] * sd + mu : (p[i] - mu) / sd;
      }
  }
};

// ---- CIFAR binary format ---------------------------------------------------

enum class DataSource { cifar10, cifar100, synthetic };

inline std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::cifar10: return "cifar10";
    case DataSource::cifar100: return "cifar100";
    case DataSource::synthetic: return "synthetic";
  }
  return "?";
}

inline std::int64_t cifar_record_bytes(DataSource s) {
  if (s == DataSource::cifar10) return 1 + kImagePixels;
  if (s == DataSource::cifar100) return 2 + kImagePixels;
  throw std::invalid_argument("cifar_record_bytes: not a CIFAR source");
}

inline int cifar_classes(DataSource s) { return s == DataSource::cifar100 ? 100 : 10; }

/// Reads one CIFAR binary file. Pixels are scaled to [0, 1]; CIFAR-100 keeps
/// the fine label. `limit` caps the number of records read.
inline LabeledBatch read_cifar_file(const std::filesystem::path& path, DataSource source,
                                    std::optional<std::int64_t> limit = std::nullopt) {
  const std::int64_t record = cifar_record_bytes(source);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR file " + path.string());
  const auto bytes = static_cast<std::int64_t>(std::filesystem::file_size(path));
  if (bytes == 0 || bytes % record != 0)
    throw FormatError(path.string() + ": size " + std::to_string(bytes) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record");
  std::int64_t n = bytes / record;
  if (limit) n = std::min(n, *limit);
  const int classes = cifar_classes(source);
  LabeledBatch out{Tensor4({n, kImageChannels, kImageSide, kImageSide}), {}, classes};
  out.labels.reserve(static_cast<std::size_t>(n));
  std::vector<unsigned char> buf(static_cast<std::size_t>(record));
  for (std::int64_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), record))
      throw FormatError(path.string() + ": truncated record " + std::to_string(i));
    const std::size_t label_at = source == DataSource::cifar100 ? 1 : 0;
    const int label = buf[label_at];
    if (label >= classes)
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has label " + std::to_string(label));
    out.labels.push_back(label);
    const std::size_t px = source == DataSource::cifar100 ? 2 : 1;
    double* dst = out.images.ptr() + i * kImagePixels;
    for (std::int64_t k = 0; k < kImagePixels; ++k) dst[k] = buf[px + static_cast<std::size_t>(k)] / 255.0;
  }
  return out;
}

inline LabeledBatch concat(std::span<const LabeledBatch> parts) {
  std::int64_t n = 0;
  for (const auto& p : parts) n += p.size();
  if (parts.empty()) throw std::invalid_argument("concat: no batches");
  const Shape4 s = parts.front().images.shape();
  LabeledBatch out{Tensor4({n, s.c, s.h, s.w}), {}, parts.front().num_classes};
  double* dst = out.images.ptr();
  for (const auto& p : parts) {
    if (p.images.c() != s.c || p.images.h() != s.h || p.images.w() != s.w)
      throw ShapeError("concat: image shape mismatch");
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

// ---- synthetic dataset -----------------------------------------------------

/// One gaussian blob per class: a random centre, width and colour. Samples are
/// the template plus white noise of the given standard deviation.
inline std::vector<Tensor4> synthetic_templates(int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor4> out;
  for (int k = 0; k < num_classes; ++k) {
    const double cy = rng.uniform(6.0, 26.0);
    const double cx = rng.uniform(6.0, 26.0);
    const double sigma = rng.uniform(3.0, 6.0);
    std::array<double, 3> colour{};
    for (double& c : colour) c = rng.gaussian();
    Tensor4 t({1, kImageChannels, kImageSide, kImageSide});
    for (std::int64_t c = 0; c < kImageChannels; ++c)
      for (std::int64_t h = 0; h < kImageSide; ++h)
        for (std::int64_t w = 0; w < kImageSide; ++w) {
          const double r2 = (h - cy) * (h - cy) + (w - cx) * (w - cx);
          t(0, c, h, w) = colour[static_cast<std::size_t>(c)] * std::exp(-r2 / (2.0 * sigma * sigma));
        }
    out.push_back(std::move(t));
  }
  return out;
}

/// Balanced, shuffled draw of n samples. `stream` selects an independent
/// noise/order stream over the same templates (0 train, 1 test).
inline LabeledBatch synthesize(int num_classes, std::int64_t n, std::uint64_t seed, double noise = 0.3,
                               std::uint64_t stream = 0) {
  if (num_classes < 2) throw std::invalid_argument("synthesize: need at least 2 classes");
  if (n < num_classes)
    throw std::invalid_argument("synthesize: n=" + std::to_string(n) + " < classes=" + std::to_string(num_classes));
  if (!(noise >= 0.0)) throw std::invalid_argument("synthesize: noise must be non-negative");
  const auto templates = synthetic_templates(num_classes, seed);
  Rng rng(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % num_classes);
  rng.shuffle(labels);
  LabeledBatch out{Tensor4({n, kImageChannels, kImageSide, kImageSide}), std::move(labels), num_classes};
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor4& t = templates[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
    double* dst = out.images.ptr() + i * kImagePixels;
    for (std::int64_t k = 0; k < kImagePixels; ++k) dst[k] = t[static_cast<std::size_t>(k)] + noise * rng.gaussian();
  }
  return out;
}

// Index of the template closest in Euclidean distance.
inline int nearest_template(const Tensor4& images, std::int64_t row, const std::vector<Tensor4>& templates) {
  const double* x = images.ptr() + row * kImagePixels;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < templates.size(); ++k) {
    double d = 0.0;
    for (std::int64_t i = 0; i < kImagePixels; ++i) {
      const double e = x[i] - templates[k][static_cast<std::size_t>(i)];
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

// ---- dataset spec ----------------------------------------------------------

struct DatasetSpec {
  DataSource source = DataSource::synthetic;
  std::filesystem::path root;
  std::optional<std::int64_t> subset;       // train records kept
  std::optional<std::int64_t> test_subset;  // test records kept
  // synthetic only
  std::uint64_t seed = 0;
  std::int64_t n = 512;
  int classes = 10;
  double noise = 0.3;

  /// "cifar10:<root>", "cifar100:<root>" or "synthetic:<seed>:<n>:<classes>".
  static DatasetSpec parse(std::string_view text) {
    DatasetSpec s;
    const auto colon = text.find(':');
    const std::string_view head = text.substr(0, colon);
    const std::string rest = colon == std::string_view::npos ? "" : std::string(text.substr(colon + 1));
    if (head == "cifar10" || head == "cifar100") {
      s.source = head == "cifar10" ? DataSource::cifar10 : DataSource::cifar100;
      if (rest.empty()) throw std::invalid_argument("dataset '" + std::string(text) + "': missing root path");
      s.root = rest;
      return s;
    }
    if (head != "synthetic")
      throw std::invalid_argument("unknown dataset '" + std::string(text) +
                                  "' (expected cifar10:<root>, cifar100:<root> or synthetic:<seed>:<n>:<classes>)");
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (start <= rest.size() && !rest.empty()) {
      const auto end = rest.find(':', start);
      fields.push_back(rest.substr(start, end - start));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (fields.size() != 3)
      throw std::invalid_argument("dataset '" + std::string(text) + "': expected synthetic:<seed>:<n>:<classes>");
    try {
      s.seed = std::stoull(fields[0]);
      s.n = std::stoll(fields[1]);
      s.classes = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw std::invalid_argument("dataset '" + std::string(text) + "': fields must be integers");
    }
    return s;
  }

  [[nodiscard]] std::string name() const {
    if (source == DataSource::synthetic)
      return "synthetic:" + std::to_string(seed) + ":" + std::to_string(n) + ":" + std::to_string(classes);
    return to_string(source) + ":" + root.string();
  }
};

struct Dataset {
  DatasetSpec spec;
  LabeledBatch train;
  LabeledBatch test;
  Normalization normalization;
};

inline std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& root, DataSource source,
                                                      bool train) {
  std::filesystem::path dir = root;
  const char* nested = source == DataSource::cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  if (std::filesystem::exists(root / nested)) dir = root / nested;
  std::vector<std::filesystem::path> files;
  if (source == DataSource::cifar10) {
    if (train)
      for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    else
      files.push_back(dir / "test_batch.bin");
  } else {
    files.push_back(dir / (train ? "train.bin" : "test.bin"));
  }
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw FormatError("missing CIFAR file " + f.string());
  return files;
}

inline LabeledBatch read_cifar_split(const DatasetSpec& spec, bool train) {
  const std::optional<std::int64_t> limit = train ? spec.subset : spec.test_subset;
  std::vector<LabeledBatch> parts;
  std::int64_t have = 0;
  for (const auto& f : cifar_files(spec.root, spec.source, train)) {
    if (limit && have >= *limit) break;
    std::optional<std::int64_t> left;
    if (limit) left = *limit - have;
    parts.push_back(read_cifar_file(f, spec.source, left));
    have += parts.back().size();
  }
  if (limit && have < *limit)
    throw std::invalid_argument("subset of " + std::to_string(*limit) + " exceeds split size " + std::to_string(have));
  return concat(parts);
}

/// Loads both splits and normalizes them with statistics of the train split.
inline Dataset load_dataset(const DatasetSpec& spec) {
  Dataset d{spec, {}, {}, {}};
  if (spec.source == DataSource::synthetic) {
    d.train = synthesize(spec.classes, spec.n, spec.seed, spec.noise, 0);
    const std::int64_t test_n = spec.test_subset.value_or(std::max<std::int64_t>(spec.classes, spec.n / 4));
    d.test = synthesize(spec.classes, test_n, spec.seed, spec.noise, 1);
  } else {
    d.train = read_cifar_split(spec, true);
    d.test = read_cifar_split(spec, false);
  }
  d.normalization = Normalization::fit(d.train.images);
  d.normalization.apply(d.train.images);
  d.normalization.apply(d.test.images);
  d.train.validate();
  d.test.validate();
  return d;
}

}  // namespace sbnet
