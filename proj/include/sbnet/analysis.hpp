#pragma once

// Analytic cost model (multiply-accumulates and parameters per layer) and an
// empirical receptive-field prober.
//
// MAC totals cover convolutions, deconvolutions and the fully-connected layer.
// Batch norm, ReLU, pooling and residual additions are listed per layer in a
// separate aux_ops column (one op per output element, pooling: per window tap).

#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbnet/config.hpp"
#include "sbnet/conv.hpp"
#include "sbnet/spatial_bottleneck.hpp"

namespace sbnet {

struct CostRow {
  std::string layer;
  std::string block;  // owning block, "" for stem and head
  Shape4 out;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  std::uint64_t aux_ops = 0;
};

struct CostReport {
  std::string name;
  std::vector<CostRow> rows;

  [[nodiscard]] std::uint64_t total_macs() const {
    return std::accumulate(rows.begin(), rows.end(), std::uint64_t{0},
                           [](std::uint64_t s, const CostRow& r) { return s + r.macs; });
  }
  [[nodiscard]] std::uint64_t total_params() const {
    return std::accumulate(rows.begin(), rows.end(), std::uint64_t{0},
                           [](std::uint64_t s, const CostRow& r) { return s + r.params; });
  }
  [[nodiscard]] std::uint64_t total_aux() const {
    return std::accumulate(rows.begin(), rows.end(), std::uint64_t{0},
                           [](std::uint64_t s, const CostRow& r) { return s + r.aux_ops; });
  }
  /// Per-block MAC subtotals in order of first appearance.
  [[nodiscard]] std::vector<std::pair<std::string, std::uint64_t>> block_macs() const {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    for (const CostRow& r : rows) {
      if (r.block.empty()) continue;
      if (out.empty() || out.back().first != r.block) out.emplace_back(r.block, 0);
      out.back().second += r.macs;
    }
    return out;
  }
};

/// Exact non-negative rational.
struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Fraction make(std::uint64_t n, std::uint64_t d) {
    if (d == 0) throw std::invalid_argument("fraction: zero denominator");
    const std::uint64_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  [[nodiscard]] double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  [[nodiscard]] std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  friend bool operator==(const Fraction& a, const Fraction& b) {
    return static_cast<unsigned __int128>(a.num) * b.den == static_cast<unsigned __int128>(b.num) * a.den;
  }
};

namespace detail {

class CostBuilder {
 public:
  CostBuilder(std::int64_t c, std::int64_t h, std::int64_t w) : c_(c), h_(h), w_(w) {}

  [[nodiscard]] std::int64_t c() const { return c_; }
  [[nodiscard]] std::int64_t h() const { return h_; }
  [[nodiscard]] std::int64_t w() const { return w_; }
  std::vector<CostRow> rows;
  std::string block;

  // S x S convolution evaluated at rows/cols congruent to the offset mod stride.
  void conv(const std::string& name, std::int64_t out_c, int kernel, int stride, int a = 0, int b = 0) {
    const std::int64_t ho = ceil_div(h_ - a, stride);
    const std::int64_t wo = ceil_div(w_ - b, stride);
    const auto taps = static_cast<std::uint64_t>(c_ * kernel * kernel);
    push(name, {1, out_c, ho, wo}, static_cast<std::uint64_t>(ho * wo * out_c) * taps,
         taps * static_cast<std::uint64_t>(out_c), 0);
  }
  void bn(const std::string& name) {
    push(name, shape(), 0, 2 * static_cast<std::uint64_t>(c_), elements());
  }
  void relu(const std::string& name) { push(name, shape(), 0, 0, elements()); }
  void maxpool(const std::string& name, int kernel, int stride) {
    const std::int64_t ho = ceil_div(h_, stride);
    const std::int64_t wo = ceil_div(w_, stride);
    push(name, {1, c_, ho, wo}, 0, 0, static_cast<std::uint64_t>(c_ * ho * wo * kernel * kernel));
  }
  void global_pool(const std::string& name) { push(name, {1, c_, 1, 1}, 0, 0, elements()); }
  void fc(const std::string& name, std::int64_t out) {
    const auto n = static_cast<std::uint64_t>(c_ * h_ * w_ * out);
    push(name, {1, out, 1, 1}, n, n, 0);
  }

  // One spatial bottleneck module on the current (c, h, w) map.
  void sb(const std::string& name, const SamplingPattern& p, std::int64_t mid, std::int64_t out,
          bool inner_bn_relu, DownsampleMode mode, int kernel = 3) {
    const std::int64_t cin = c_;
    const std::int64_t h = h_;
    const std::int64_t w = w_;
    const int k = p.stride();
    std::uint64_t positions = 0;
    for (const Offset& o : p.offsets())
      positions += static_cast<std::uint64_t>(ceil_div(h - o.a, k) * ceil_div(w - o.b, k));
    const auto s2 = static_cast<std::uint64_t>(kernel * kernel);
    const Shape4 reduced{1, mid, 1, static_cast<std::int64_t>(positions)};
    if (mode == DownsampleMode::avgpool_conv)
      push(name + ".pool", {1, cin, 1, static_cast<std::int64_t>(positions)}, 0, 0,
           static_cast<std::uint64_t>(cin) * positions * static_cast<std::uint64_t>(k * k));
    push(name + ".conv", reduced, positions * static_cast<std::uint64_t>(cin * mid) * s2,
         static_cast<std::uint64_t>(cin * mid) * s2, 0);
    if (inner_bn_relu) {
      push(name + ".inner_bn", reduced, 0, 2 * static_cast<std::uint64_t>(mid),
           positions * static_cast<std::uint64_t>(mid));
      push(name + ".inner_relu", reduced, 0, 0, positions * static_cast<std::uint64_t>(mid));
    }
    push(name + ".deconv", {1, out, h, w}, positions * static_cast<std::uint64_t>(mid * out) * s2,
         static_cast<std::uint64_t>(mid * out) * s2,
         // overlapping restored maps of different offsets are summed
         (p.size() - 1) * static_cast<std::uint64_t>(out * h * w));
    c_ = out;
    h_ = h;
    w_ = w;
  }

  void add(const std::string& name) { push(name, shape(), 0, 0, elements()); }

  void set(std::int64_t c, std::int64_t h, std::int64_t w) {
    c_ = c;
    h_ = h;
    w_ = w;
  }

 private:
  static std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return a > 0 ? (a + b - 1) / b : 0; }
  [[nodiscard]] Shape4 shape() const { return {1, c_, h_, w_}; }
  [[nodiscard]] std::uint64_t elements() const { return static_cast<std::uint64_t>(c_ * h_ * w_); }
  void push(const std::string& name, Shape4 out, std::uint64_t macs, std::uint64_t params,
            std::uint64_t aux) {
    rows.push_back({name, block, out, macs, params, aux});
    c_ = out.c;
    h_ = out.h;
    w_ = out.w;
  }
  std::int64_t c_;
  std::int64_t h_;
  std::int64_t w_;
};

inline void block_costs(CostBuilder& cb, const std::string& name, const BlockSpec& b) {
  b.validate();
  const std::int64_t in_c = cb.c();
  const std::int64_t in_h = cb.h();
  const std::int64_t in_w = cb.w();
  const std::string n = name + ".";
  cb.block = name;
  cb.bn(n + "bn1");
  cb.relu(n + "relu1");
  switch (b.kind) {
    case BlockKind::rRB:
      cb.conv(n + "conv1", b.channels, 3, b.stride);
      cb.bn(n + "bn2");
      cb.relu(n + "relu2");
      cb.conv(n + "conv2", b.channels, 3, 1);
      break;
    case BlockKind::rSB:
      cb.sb(n + "sb", b.pattern, b.channels, b.channels, true, b.downsample);
      break;
    case BlockKind::cRB:
    case BlockKind::cSB:
      cb.conv(n + "conv1", b.inner_width(), 1, b.stride);
      cb.bn(n + "bn2");
      cb.relu(n + "relu2");
      if (b.kind == BlockKind::cRB)
        cb.conv(n + "conv2", b.inner_width(), 3, 1);
      else
        cb.sb(n + "sb", b.pattern, b.sb_mid_width(), b.inner_width(), false, b.downsample);
      cb.bn(n + "bn3");
      cb.relu(n + "relu3");
      cb.conv(n + "conv3", b.channels, 1, 1);
      break;
  }
  const std::int64_t out_h = cb.h();
  const std::int64_t out_w = cb.w();
  if (b.shortcut == Shortcut::projection) {
    cb.set(in_c, in_h, in_w);
    cb.conv(n + "proj", b.channels, 1, b.stride);
  }
  cb.set(b.channels, out_h, out_w);
  cb.add(n + "add");
  cb.block.clear();
}

}  // namespace detail

/// Per-layer MACs, parameters and auxiliary ops of a network on an
/// input_hw x input_hw image (0: the config's input size), batch 1.
inline CostReport count_flops(const NetworkConfig& config, int input_hw = 0) {
  const NetworkPlan p = plan(config);
  const int hw = input_hw > 0 ? input_hw : config.resolved_input_hw();
  detail::CostBuilder cb(p.stem.in_channels, hw, hw);
  cb.conv("stem.conv", p.stem.out_channels, p.stem.kernel, p.stem.stride);
  if (p.stem.maxpool) {
    cb.bn("stem.bn");
    cb.relu("stem.relu");
    cb.maxpool("stem.pool", 3, 2);
  }
  int index_in_stage = 0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    if (i > 0 && p.stage_of_block[i] != p.stage_of_block[i - 1]) index_in_stage = 0;
    detail::block_costs(cb, "s" + std::to_string(p.stage_of_block[i]) + ".b" + std::to_string(index_in_stage++),
                        p.blocks[i]);
  }
  cb.bn("head.bn");
  cb.relu("head.relu");
  cb.global_pool("head.pool");
  cb.fc("head.fc", config.num_classes);
  std::string name = to_string(config.family) + "-" + std::to_string(config.depth);
  if (config.sb.enabled) name += "-sb" + config.sb.pattern;
  return CostReport{name, std::move(cb.rows)};
}

/// Same rows as count_flops; parameter totals are read from total_params().
inline CostReport count_params(const NetworkConfig& config) { return count_flops(config); }

/// Cost rows of a single block on a (in_channels, h, w) input.
inline CostReport block_costs(const BlockSpec& b, std::int64_t h, std::int64_t w) {
  detail::CostBuilder cb(b.in_channels, h, w);
  detail::block_costs(cb, "block", b);
  return CostReport{to_string(b.kind), std::move(cb.rows)};
}

/// Parameter count of the 3x3 path of a block: the middle 3x3 conv of a cRB,
/// or the conv + deconv of the SB that replaces it (both 3x3 convs / the SB
/// for regular blocks).
inline std::uint64_t spatial_path_params(const BlockSpec& b) {
  std::uint64_t total = 0;
  for (const CostRow& r : block_costs(b, 8, 8).rows) {
    const std::string& n = r.layer;
    const bool spatial = n.ends_with(".sb.conv") || n.ends_with(".sb.deconv") ||
                         (b.kind == BlockKind::cRB && n.ends_with(".conv2")) ||
                         (b.kind == BlockKind::rRB && (n.ends_with(".conv1") || n.ends_with(".conv2")));
    if (spatial) total += r.params;
  }
  return total;
}

/// Fraction of a stride-1 block's conv MACs saved by converting it to its
/// spatial-bottleneck form with the given pattern, on an h x w map.
inline Fraction block_reduction(BlockSpec block, const SamplingPattern& pattern, std::int64_t h = 32,
                                std::int64_t w = 32) {
  if (block.spatial_bottleneck()) block.kind = block.kind == BlockKind::rSB ? BlockKind::rRB : BlockKind::cRB;
  if (block.stride != 1) throw std::invalid_argument("block_reduction: block must have stride 1");
  const std::uint64_t base = block_costs(block, h, w).total_macs();
  const std::uint64_t sb = block_costs(to_sb(block, pattern), h, w).total_macs();
  if (sb > base) throw std::logic_error("block_reduction: SB block costs more than its baseline");
  return Fraction::make(base - sb, base);
}

// ---- report output -----------------------------------------------------------

enum class ReportFormat { text, csv, json };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw std::invalid_argument("unknown format '" + std::string(s) + "'");
}

inline std::string human(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(v >= 1e9 ? 3 : 2);
  if (v >= 1e9) os << v / 1e9 << "G";
  else if (v >= 1e6) os << v / 1e6 << "M";
  else if (v >= 1e3) os << v / 1e3 << "K";
  else os << v;
  return os.str();
}

inline nlohmann::json report_json(const CostReport& r, const CostReport* baseline = nullptr) {
  nlohmann::json j;
  j["name"] = r.name;
  j["rows"] = nlohmann::json::array();
  for (const CostRow& row : r.rows)
    j["rows"].push_back({{"layer", row.layer}, {"out_n", row.out.n}, {"out_c", row.out.c},
                         {"out_h", row.out.h}, {"out_w", row.out.w}, {"macs", row.macs},
                         {"params", row.params}, {"aux_ops", row.aux_ops}});
  j["total"] = {{"macs", r.total_macs()}, {"params", r.total_params()}, {"aux_ops", r.total_aux()}};
  if (baseline != nullptr) {
    j["baseline"] = {{"name", baseline->name},
                     {"macs", baseline->total_macs()},
                     {"params", baseline->total_params()}};
    j["reduction"] = {
        {"macs", 1.0 - static_cast<double>(r.total_macs()) / static_cast<double>(baseline->total_macs())},
        {"params",
         1.0 - static_cast<double>(r.total_params()) / static_cast<double>(baseline->total_params())}};
  }
  return j;
}

inline std::string format_report(const CostReport& r, ReportFormat fmt,
                                 const CostReport* baseline = nullptr) {
  std::ostringstream os;
  switch (fmt) {
    case ReportFormat::json:
      os << report_json(r, baseline).dump(2) << "\n";
      break;
    case ReportFormat::csv:
      os << "layer,out_n,out_c,out_h,out_w,macs,params,aux_ops\n";
      for (const CostRow& row : r.rows)
        os << row.layer << "," << row.out.n << "," << row.out.c << "," << row.out.h << ","
           << row.out.w << "," << row.macs << "," << row.params << "," << row.aux_ops << "\n";
      os << "total,,,,," << r.total_macs() << "," << r.total_params() << "," << r.total_aux() << "\n";
      break;
    case ReportFormat::text: {
      os << r.name << "\n";
      os << std::left << std::setw(24) << "layer" << std::right << std::setw(18) << "output"
         << std::setw(14) << "macs" << std::setw(12) << "params" << std::setw(12) << "aux_ops" << "\n";
      for (const CostRow& row : r.rows) {
        const std::string shape = std::to_string(row.out.c) + "x" + std::to_string(row.out.h) + "x" +
                                  std::to_string(row.out.w);
        os << std::left << std::setw(24) << row.layer << std::right << std::setw(18) << shape
           << std::setw(14) << row.macs << std::setw(12) << row.params << std::setw(12)
           << row.aux_ops << "\n";
      }
      os << "total: " << r.total_macs() << " MACs (" << human(static_cast<double>(r.total_macs()))
         << "), " << r.total_params() << " params (" << human(static_cast<double>(r.total_params()))
         << "), " << r.total_aux() << " aux ops\n";
      if (baseline != nullptr) {
        const double red =
            1.0 - static_cast<double>(r.total_macs()) / static_cast<double>(baseline->total_macs());
        os << "baseline " << baseline->name << ": " << baseline->total_macs() << " MACs ("
           << human(static_cast<double>(baseline->total_macs())) << "); reduction " << std::fixed
           << std::setprecision(2) << 100.0 * red << "%\n";
      }
      break;
    }
  }
  return os.str();
}

// ---- receptive fields --------------------------------------------------------

/// One single-channel linear stage of a probe chain: a dense S x S convolution
/// or a spatial bottleneck module.
struct RFStage {
  enum class Kind { conv, sb } kind = Kind::conv;
  int kernel = 3;
  SamplingPattern pattern;

  static RFStage conv(int kernel = 3) { return {Kind::conv, kernel, {}}; }
  static RFStage sb(SamplingPattern p, int kernel = 3) { return {Kind::sb, kernel, std::move(p)}; }
};

struct ReceptiveField {
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  std::int64_t h0 = 0, h1 = -1, w0 = 0, w1 = -1;  // inclusive bounding box
  std::int64_t in_h = 0;
  std::int64_t in_w = 0;
  std::vector<bool> mask;  // in_h x in_w support

  [[nodiscard]] std::int64_t height() const { return h1 - h0 + 1; }
  [[nodiscard]] std::int64_t width() const { return w1 - w0 + 1; }
  [[nodiscard]] bool contains(std::int64_t r, std::int64_t c) const {
    return mask[static_cast<std::size_t>(r * in_w + c)];
  }
  /// True when the support box stays clear of the input border, so no part of
  /// the receptive field was clipped by zero padding.
  [[nodiscard]] bool interior() const {
    return h0 > 0 && w0 > 0 && h1 < in_h - 1 && w1 < in_w - 1;
  }
};

/// Support of output (out_h, out_w) of the chain on an h x w single-channel
/// input: the input positions with non-zero cotangent when a one-hot output
/// cotangent is pulled back. All weights are 1, so nothing cancels.
inline ReceptiveField probe_receptive_field(const std::vector<RFStage>& chain, std::int64_t h,
                                            std::int64_t w, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 0 || out_h >= h || out_w < 0 || out_w >= w)
    throw std::out_of_range("receptive field: output coordinate outside the map");
  const Tensor4 x({1, 1, h, w});
  std::vector<Pullback> tape;
  std::vector<SBModule> modules;
  modules.reserve(chain.size());
  Tensor4 cur = x;
  for (const RFStage& s : chain) {
    if (s.kind == RFStage::Kind::conv) {
      const ConvSpec spec = ConvSpec::dense(1, 1, s.kernel);
      GradPair g = conv2d(cur, ConvKernel{filled(spec.weight_shape(), 1.0)}, spec);
      cur = std::move(g.value);
      tape.push_back(std::move(g.pullback));
    } else {
      SBModule m;
      m.pattern = s.pattern;
      m.kernel = s.kernel;
      m.conv = ConvKernel{filled({1, 1, s.kernel, s.kernel}, 1.0)};
      m.deconv = ConvKernel{filled({1, 1, s.kernel, s.kernel}, 1.0)};
      modules.push_back(std::move(m));
      GradPair g = sb_forward(cur, modules.back(), Mode::eval);
      cur = std::move(g.value);
      tape.push_back(std::move(g.pullback));
    }
  }
  Tensor4 d({1, 1, h, w});
  d(0, 0, out_h, out_w) = 1.0;
  for (std::size_t i = tape.size(); i-- > 0;) d = tape[i](d).input;
  ReceptiveField rf;
  rf.out_h = out_h;
  rf.out_w = out_w;
  rf.in_h = h;
  rf.in_w = w;
  rf.mask.assign(static_cast<std::size_t>(h * w), false);
  rf.h0 = h;
  rf.w0 = w;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (d(0, 0, r, c) != 0.0) {
        rf.mask[static_cast<std::size_t>(r * w + c)] = true;
        rf.h0 = std::min(rf.h0, r);
        rf.h1 = std::max(rf.h1, r);
        rf.w0 = std::min(rf.w0, c);
        rf.w1 = std::max(rf.w1, c);
      }
  if (rf.h1 < 0) throw std::logic_error("receptive field: empty support");
  return rf;
}

}  // namespace sbnet
