#pragma once

// Rank-4 dense tensors (NCHW, row-major, double precision), a seeded PRNG,
// and the handful of elementwise/reduction primitives the rest of the
// library is built on.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sbnet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape4 {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n * c * h * w);
  }
  [[nodiscard]] std::int64_t plane() const { return h * w; }
  [[nodiscard]] bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline void require_shape(const Shape4& s) {
  if (!s.valid()) throw ShapeError("tensor dimensions must all be >= 1, got " + s.str());
}

class Tensor4 {
 public:
  Tensor4() : shape_{}, data_(1, 0.0) {}

  explicit Tensor4(Shape4 shape) : shape_(shape) {
    require_shape(shape_);
    data_.assign(shape_.size(), 0.0);
  }

  Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require_shape(shape_);
    if (data_.size() != shape_.size())
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] std::int64_t n() const { return shape_.n; }
  [[nodiscard]] std::int64_t c() const { return shape_.c; }
  [[nodiscard]] std::int64_t h() const { return shape_.h; }
  [[nodiscard]] std::int64_t w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] double* ptr() { return data_.data(); }
  [[nodiscard]] const double* ptr() const { return data_.data(); }

  [[nodiscard]] std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                                  std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  double& operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the (n, c) spatial plane.
  double* plane(std::int64_t n, std::int64_t c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(std::int64_t n, std::int64_t c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  [[nodiscard]] Tensor4 reshaped(Shape4 s) const {
    if (s.size() != shape_.size()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    return Tensor4(s, data_);
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor4& operator+=(const Tensor4& o) {
    if (o.shape_ != shape_) throw ShapeError("add: " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

// Bit-exact comparison (distinguishes -0.0 from 0.0 and compares NaN payloads).
inline bool bitwise_equal(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// Deterministic random stream. Backed by std::mt19937_64, whose output
/// sequence is fixed by the standard; uniform doubles take the top 53 bits and
/// gaussians use the Box-Muller transform, so the stream does not depend on
/// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }
  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Uniform integer in [0, bound), rejection sampled.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
};
using Distribution = std::variant<Uniform, Gaussian>;

inline Tensor4 zeros(Shape4 shape) { return Tensor4(shape); }

inline Tensor4 filled(Shape4 shape, double value) {
  Tensor4 t(shape);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

inline Tensor4 fill_random(Shape4 shape, Rng& rng, const Distribution& dist) {
  Tensor4 t(shape);
  if (const auto* u = std::get_if<Uniform>(&dist)) {
    if (!(u->lo < u->hi)) throw std::invalid_argument("uniform distribution needs lo < hi");
    for (double& v : t.data()) v = rng.uniform(u->lo, u->hi);
  } else {
    const auto& g = std::get<Gaussian>(dist);
    if (!(g.stddev > 0.0)) throw std::invalid_argument("gaussian distribution needs stddev > 0");
    for (double& v : t.data()) v = rng.gaussian(g.mean, g.stddev);
  }
  return t;
}

/// Elementwise fn(alpha * x + beta * y). Pass an empty fn for the plain affine
/// combination; relu-like maps go through fn.
inline Tensor4 axpy_map(double alpha, const Tensor4& x, double beta, const Tensor4& y,
                        const std::function<double(double)>& fn = {}) {
  if (x.shape() != y.shape())
    throw ShapeError("axpy_map: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i] + beta * y[i];
  if (fn)
    for (double& v : out.data()) v = fn(v);
  return out;
}

inline Tensor4 scaled(const Tensor4& x, double alpha) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i];
  return out;
}

inline Tensor4 operator+(const Tensor4& a, const Tensor4& b) {
  Tensor4 out = a;
  out += b;
  return out;
}

inline Tensor4 operator-(const Tensor4& a, const Tensor4& b) { return axpy_map(1.0, a, -1.0, b); }

inline double dot(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot: " + a.shape().str() + " vs " + b.shape().str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Tensor4& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const Tensor4& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

enum class Reduction { sum, max, mean };

// Axis bit flags for reduce().
namespace axis {
inline constexpr unsigned n = 1u;
inline constexpr unsigned c = 2u;
inline constexpr unsigned h = 4u;
inline constexpr unsigned w = 8u;
inline constexpr unsigned hw = h | w;
inline constexpr unsigned all = n | c | h | w;
}  // namespace axis

/// Reduces over the flagged axes; reduced dimensions become 1. Accumulation
/// walks the input in storage order, so results are run-to-run identical.
inline Tensor4 reduce(const Tensor4& x, Reduction kind, unsigned axes) {
  if (axes == 0 || axes > axis::all) throw std::invalid_argument("reduce: invalid axis set");
  const Shape4 in = x.shape();
  const Shape4 out_shape{(axes & axis::n) ? 1 : in.n, (axes & axis::c) ? 1 : in.c,
                         (axes & axis::h) ? 1 : in.h, (axes & axis::w) ? 1 : in.w};
  Tensor4 out(out_shape);
  if (kind == Reduction::max)
    std::fill(out.data().begin(), out.data().end(), -std::numeric_limits<double>::infinity());
  for (std::int64_t n = 0; n < in.n; ++n)
    for (std::int64_t c = 0; c < in.c; ++c)
      for (std::int64_t h = 0; h < in.h; ++h)
        for (std::int64_t w = 0; w < in.w; ++w) {
          double& o = out((axes & axis::n) ? 0 : n, (axes & axis::c) ? 0 : c,
                          (axes & axis::h) ? 0 : h, (axes & axis::w) ? 0 : w);
          const double v = x(n, c, h, w);
          o = kind == Reduction::max ? std::max(o, v) : o + v;
        }
  if (kind == Reduction::mean) {
    const double count = static_cast<double>(in.size()) / static_cast<double>(out_shape.size());
    for (double& v : out.data()) v /= count;
  }
  return out;
}

// ---- binary fixture format -------------------------------------------------
// "SBT4", four little-endian u32 dims (n, c, h, w), then n*c*h*w little-endian
// IEEE-754 binary64 values.

namespace detail {
inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int ch = is.get();
    if (ch == std::char_traits<char>::eof()) throw FormatError("SBT4: unexpected end of stream");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}
}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor4& t) {
  os.write("SBT4", 4);
  for (std::int64_t d : {t.n(), t.c(), t.h(), t.w()}) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("SBT4: dimension too large");
    detail::put_le(os, static_cast<std::uint64_t>(d), 4);
  }
  for (double v : t.data()) detail::put_le(os, std::bit_cast<std::uint64_t>(v), 8);
  if (!os) throw FormatError("SBT4: write failed");
}

inline Tensor4 read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "SBT4") throw FormatError("SBT4: bad magic");
  std::array<std::int64_t, 4> dims{};
  for (auto& d : dims) d = static_cast<std::int64_t>(detail::get_le(is, 4));
  Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
  if (!shape.valid()) throw FormatError("SBT4: zero dimension in header");
  std::vector<double> data(shape.size());
  for (double& v : data) v = std::bit_cast<double>(detail::get_le(is, 8));
  return Tensor4(shape, std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor4& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

inline Tensor4 load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace sbnet
