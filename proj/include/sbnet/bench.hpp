#pragma once

// Wall-clock forward timing of single residual blocks.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sbnet/analysis.hpp"
#include "sbnet/network.hpp"

namespace sbnet {

struct BenchOptions {
  int channels = 64;
  int hw = 32;
  int batch = 32;
  int bottleneck = 4;
  int warmup = 10;
  int iters = 30;
  int threads = 1;  // kernels are single-threaded; recorded for the report
  std::uint64_t seed = 0;
};

/// "rb", "sb_<pattern>", "crb" or "csb_<pattern>" with <pattern> one of the
/// sampling pattern names ("1/4", "2/4", "3/4", "full", ...).
inline BlockSpec bench_block(std::string_view name, const BenchOptions& o) {
  BlockSpec b;
  b.in_channels = b.channels = o.channels;
  b.bottleneck = o.bottleneck;
  if (name == "rb") return b;
  if (name == "crb") {
    b.kind = BlockKind::cRB;
    return b;
  }
  if (name.starts_with("sb_")) return to_sb(b, make_pattern(name.substr(3)));
  if (name.starts_with("csb_")) {
    b.kind = BlockKind::cRB;
    return to_sb(b, make_pattern(name.substr(4)));
  }
  throw std::invalid_argument("unknown bench case '" + std::string(name) +
                              "' (expected rb, crb, sb_<pattern> or csb_<pattern>)");
}

struct BenchResult {
  std::string name;
  int warmup = 0;
  int iters = 0;
  int threads = 1;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  std::uint64_t macs = 0;           // executed, per forward of the whole batch
  std::uint64_t analyzer_macs = 0;  // cost model for the same case
  double speedup = 1.0;             // baseline median / this median
  double mac_ratio = 1.0;           // baseline macs / this macs

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"case", name},         {"warmup", warmup},   {"iters", iters},
            {"threads", threads},   {"median_ms", median_ms}, {"iqr_ms", iqr_ms},
            {"macs", macs},         {"analyzer_macs", analyzer_macs}, {"speedup", speedup},
            {"mac_ratio", mac_ratio}};
  }
};

// Linear-interpolated quantile of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BenchResult run_bench(std::string_view name, const BenchOptions& o) {
  if (o.iters < 30) throw std::invalid_argument("bench: at least 30 timed iterations are required");
  if (o.warmup < 0 || o.batch < 1 || o.hw < 1 || o.channels < 1) throw std::invalid_argument("bench: invalid dims");
  const BlockSpec spec = bench_block(name, o);
  Rng rng(o.seed);
  ResidualBlock block = Network::make_block(std::string(name), spec, rng);
  const Tensor4 x = fill_random({o.batch, o.channels, o.hw, o.hw}, rng, Gaussian{});

  BenchResult r;
  r.name = std::string(name);
  r.warmup = o.warmup;
  r.iters = o.iters;
  r.threads = o.threads;
  r.analyzer_macs = block_costs(spec, o.hw, o.hw).total_macs() * static_cast<std::uint64_t>(o.batch);
  {
    MacCounter counter;
    (void)block.forward(x, Mode::eval);
    r.macs = counter.count();
  }
  for (int i = 0; i < o.warmup; ++i) (void)block.forward(x, Mode::eval);
  std::vector<double> ms;
  for (int i = 0; i < o.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)block.forward(x, Mode::eval);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  r.median_ms = quantile(ms, 0.5);
  r.iqr_ms = quantile(ms, 0.75) - quantile(ms, 0.25);
  return r;
}

// Fills speedup and mac_ratio of every case against `baseline`.
inline void relate_to(std::vector<BenchResult>& cases, const BenchResult& baseline) {
  for (BenchResult& c : cases) {
    c.speedup = c.median_ms > 0.0 ? baseline.median_ms / c.median_ms : 0.0;
    c.mac_ratio = c.macs > 0 ? static_cast<double>(baseline.macs) / static_cast<double>(c.macs) : 0.0;
  }
}

}  // namespace sbnet
