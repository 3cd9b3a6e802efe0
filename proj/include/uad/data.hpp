#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "uad/fingerprint.hpp"
#include "uad/linalg.hpp"
#include "uad/rng.hpp"

#include "json.hpp"

namespace uad::data {

using linalg::Vector;

struct Dataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t class_count = 0;
  std::vector<double> features;  // n x d, row-major
  std::vector<int> labels;
  std::string split;   // "train", "test" or empty
  std::string source;  // provenance descriptor
  bool normalized = false;
  // image geometry when loaded from IDX files, 0 otherwise
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::span<const double> row(std::size_t i) const { return {features.data() + i * d, d}; }
  std::span<double> row(std::size_t i) { return {features.data() + i * d, d}; }
};

inline std::string fingerprint(const Dataset& ds) {
  Fnv1a h;
  h.update(static_cast<std::uint64_t>(ds.n));
  h.update(static_cast<std::uint64_t>(ds.d));
  h.update(std::span<const double>(ds.features));
  for (int y : ds.labels) h.update(static_cast<std::uint64_t>(y));
  return h.hex();
}

// ---------------------------------------------------------------------------
// IDX format (big-endian, magic-tagged)
// ---------------------------------------------------------------------------

class IdxParseError : public std::runtime_error {
 public:
  IdxParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_u32_be(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw IdxParseError("truncated file while reading u32", off);
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

inline void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX image/label pair (the MNIST container format): big-endian
/// magics 0x803/0x801, then counts and image dims, then raw bytes. Pixels are
/// scaled to [0,1] by /255 and images flattened to d = rows*cols.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  const std::uint32_t img_magic = detail::read_u32_be(img, 0);
  if (img_magic != kIdxImageMagic) {
    throw IdxParseError("bad image magic 0x" + [&] {
      std::ostringstream os;
      os << std::hex << img_magic;
      return os.str();
    }(), 0);
  }
  const std::uint32_t count = detail::read_u32_be(img, 4);
  const std::uint32_t rows = detail::read_u32_be(img, 8);
  const std::uint32_t cols = detail::read_u32_be(img, 12);
  const std::size_t pixels = static_cast<std::size_t>(count) * rows * cols;
  if (img.size() < 16 + pixels) throw IdxParseError("truncated image data", img.size());

  const std::uint32_t lab_magic = detail::read_u32_be(lab, 0);
  if (lab_magic != kIdxLabelMagic) {
    throw IdxParseError("bad label magic 0x" + [&] {
      std::ostringstream os;
      os << std::hex << lab_magic;
      return os.str();
    }(), 0);
  }
  const std::uint32_t lab_count = detail::read_u32_be(lab, 4);
  if (lab_count != count) throw IdxParseError("image/label count mismatch", 4);
  if (lab.size() < 8 + lab_count) throw IdxParseError("truncated label data", lab.size());

  Dataset ds;
  ds.n = count;
  ds.d = static_cast<std::size_t>(rows) * cols;
  ds.image_rows = rows;
  ds.image_cols = cols;
  ds.features.resize(ds.n * ds.d);
  for (std::size_t i = 0; i < pixels; ++i) {
    ds.features[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  ds.labels.resize(ds.n);
  int max_label = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    ds.labels[i] = static_cast<int>(lab[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = static_cast<std::size_t>(max_label) + 1;
  ds.normalized = true;
  ds.source = "idx(" + images_path + ")";
  return ds;
}

/// Inverse of load_mnist_idx; with unmodified data the emitted bytes equal
/// the source files.
inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.image_rows * ds.image_cols != ds.d) {
    throw std::invalid_argument("write_idx: dataset has no image geometry");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open for write: " + images_path);
  detail::write_u32_be(img, kIdxImageMagic);
  detail::write_u32_be(img, static_cast<std::uint32_t>(ds.n));
  detail::write_u32_be(img, static_cast<std::uint32_t>(ds.image_rows));
  detail::write_u32_be(img, static_cast<std::uint32_t>(ds.image_cols));
  for (double v : ds.features) {
    const long b = std::lround(v * 255.0);
    img.put(static_cast<char>(std::clamp(b, 0L, 255L)));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open for write: " + labels_path);
  detail::write_u32_be(lab, kIdxLabelMagic);
  detail::write_u32_be(lab, static_cast<std::uint32_t>(ds.n));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

// ---------------------------------------------------------------------------
// Synthetic mixtures
// ---------------------------------------------------------------------------

struct SynthInfo {
  std::vector<Vector> means;  // raw cluster means, before the affine map
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  /// Affine map applied to every raw coordinate: x' = (x - lo)/(hi - lo).
  double to_unit(double x) const { return (x - clip_lo) / (clip_hi - clip_lo); }
  double sigma_unit() const { return 1.0 / (clip_hi - clip_lo); }
};

/// K seeded unit-variance Gaussian clusters with pairwise mean distance
/// `separation` (scaled basis directions when K <= d, random directions
/// otherwise). Sample i gets label i % K, so labels are balanced within one.
/// Coordinates are clipped to the configuration-derived range
/// [min_mean - 4, max_mean + 4] and mapped affinely to [0,1].
inline Dataset synth_gaussian_mixture(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                                      double separation, SynthInfo* info = nullptr) {
  if (d < 1) throw std::invalid_argument("synth_gaussian_mixture: d must be >= 1");
  if (k < 1 || n < k) throw std::invalid_argument("synth_gaussian_mixture: need n >= K >= 1");
  if (separation < 0.0) throw std::invalid_argument("synth_gaussian_mixture: negative separation");

  Rng rng(seed);
  const double radius = separation / std::sqrt(2.0);
  std::vector<Vector> means(k, Vector(d, 0.0));
  if (k <= d) {
    for (std::size_t c = 0; c < k; ++c) means[c][c] = radius;
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      Vector u = rng.unit_vector(d);
      for (std::size_t j = 0; j < d; ++j) means[c][j] = radius * u[j];
    }
  }
  double lo = 0.0, hi = 0.0;
  for (const Vector& m : means) {
    for (double x : m) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  lo -= 4.0;  // four unit standard deviations of headroom
  hi += 4.0;

  Dataset ds;
  ds.n = n;
  ds.d = d;
  ds.class_count = k;
  ds.features.resize(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    ds.labels[i] = static_cast<int>(c);
    auto row = ds.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double raw = std::clamp(means[c][j] + rng.normal(), lo, hi);
      row[j] = (raw - lo) / (hi - lo);
    }
  }
  ds.normalized = true;
  {
    std::ostringstream os;
    os << "synthetic(seed=" << seed << ",n=" << n << ",d=" << d << ",K=" << k
       << ",separation=" << separation << ")";
    ds.source = os.str();
  }
  if (info) {
    info->means = std::move(means);
    info->clip_lo = lo;
    info->clip_hi = hi;
  }
  return ds;
}

/// Provenance manifest for a synthetic dataset.
inline nlohmann::json synth_manifest(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                                     double separation) {
  return nlohmann::json{{"generator", "gaussian-mixture"},
                        {"seed", seed},
                        {"n", n},
                        {"d", d},
                        {"K", k},
                        {"separation", separation}};
}

// ---------------------------------------------------------------------------
// Attack budget
// ---------------------------------------------------------------------------

struct EpsilonBudget {
  double fraction = 0.0;
  double mean_norm = 0.0;
  double epsilon = 0.0;
};

/// epsilon = fraction * mean L2 norm of the samples. Callers pass the
/// training split; the budget is reused unchanged when attacking test data.
inline EpsilonBudget epsilon_from_norm(const Dataset& ds, double fraction) {
  if (ds.n == 0) throw std::invalid_argument("epsilon_from_norm: empty dataset");
  if (!(fraction > 0.0)) throw std::invalid_argument("epsilon_from_norm: fraction must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) total += linalg::norm2(ds.row(i));
  EpsilonBudget b;
  b.fraction = fraction;
  b.mean_norm = total / static_cast<double>(ds.n);
  b.epsilon = fraction * b.mean_norm;
  return b;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx, std::string split_tag) {
  Dataset out;
  out.n = idx.size();
  out.d = ds.d;
  out.class_count = ds.class_count;
  out.features.resize(out.n * out.d);
  out.labels.resize(out.n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = ds.row(idx[i]);
    std::copy(src.begin(), src.end(), out.features.begin() + static_cast<std::ptrdiff_t>(i * out.d));
    out.labels[i] = ds.labels[idx[i]];
  }
  out.split = std::move(split_tag);
  out.source = ds.source;
  out.normalized = ds.normalized;
  out.image_rows = ds.image_rows;
  out.image_cols = ds.image_cols;
  return out;
}

}  // namespace detail

/// Stratified split with a seeded shuffle per class. Train sizes follow a
/// largest-remainder allocation: per-class floor(ratio * m_c) plus extra
/// slots, awarded by descending fractional remainder, until the train split
/// holds round(ratio * n) samples. Splits are disjoint and exhaustive and the
/// per-class distribution is preserved within one sample.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty() && by_class[c].size() < 2) {
      throw std::runtime_error("split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
  }
  const auto total_take = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(ds.n) + 0.5));
  std::vector<std::size_t> take(by_class.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = ratio * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [frac, c] : remainders) {
    if (assigned >= total_take) break;
    if (take[c] < by_class[c].size()) {
      ++take[c];
      ++assigned;
    }
  }
  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < take[c] ? train_idx : test_idx).push_back(members[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {detail::take_rows(ds, train_idx, "train"), detail::take_rows(ds, test_idx, "test")};
}

/// Seeded subsample of at most `max_n` rows, stratified like split().
inline Dataset subsample(const Dataset& ds, std::size_t max_n, std::uint64_t seed) {
  if (max_n >= ds.n) return ds;
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  Rng rng(seed);
  const double frac = static_cast<double>(max_n) / static_cast<double>(ds.n);
  std::vector<std::size_t> keep;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    rng.shuffle(members);
    const std::size_t take = std::min(
        members.size(),
        static_cast<std::size_t>(std::floor(frac * static_cast<double>(members.size()) + 0.5)));
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  return detail::take_rows(ds, keep, ds.split);
}

}  // namespace uad::data
