// Acceptance checks, one per criterion. Usage: acceptance --criterion <id>
// Prints a single "criterion <id>: PASS|FAIL|SKIP ..." verdict line after any
// supporting report. Exit 0 pass, 1 fail, 77 skipped.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sbnet/sbnet.hpp"

using namespace sbnet;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kSkip = 77;

int verdict(const std::string& id, bool ok, const std::string& summary) {
  std::printf("criterion %s: %s  %s\n", id.c_str(), ok ? "PASS" : "FAIL", summary.c_str());
  return ok ? kPass : kFail;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_delta(double got, double want) { return (got - want) / want; }

// ---- 1, 2, 3: network totals ------------------------------------------------

struct TotalRow {
  std::string preset;
  double reference;
};

// Prints one row per total; returns how many fall outside the tolerance.
int compare_totals(const std::vector<TotalRow>& rows, double tol) {
  int misses = 0;
  for (const TotalRow& r : rows) {
    const double got = static_cast<double>(count_flops(preset(r.preset)).total_macs());
    const double d = rel_delta(got, r.reference);
    const bool within = std::abs(d) <= tol;
    misses += within ? 0 : 1;
    std::printf("  %-10s %12.0f  reference %12.0f  %+7.2f%%  %s\n", r.preset.c_str(), got, r.reference, 100 * d,
                within ? "ok" : "outside");
  }
  return misses;
}

int criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<TotalRow> rows{{"rn20", 40.5e6},  {"rn44", 97.2e6},  {"rn62", 139.6e6}, {"rn86", 193.6e6},
                                   {"rn110", 252.9e6}, {"sbn20", 24.0e6}, {"sbn44", 52.3e6}, {"sbn62", 73.6e6},
                                   {"sbn86", 101.9e6}, {"sbn110", 130.0e6}};
  const int misses = compare_totals(rows, 0.01);
  const double t = seconds_since(t0);
  return verdict("1", misses == 0 && t < 1.0,
                 fmt("%d of %zu totals outside +-1%%; %.3f s (< 1 s)", misses, rows.size(), t));
}

// Splits a block's MACs into 1x1 and 3x3 conv layers.
std::pair<std::uint64_t, std::uint64_t> conv_split(const CostReport& r) {
  std::uint64_t one = 0;
  std::uint64_t three = 0;
  for (const CostRow& row : r.rows) {
    if (row.macs == 0) continue;
    const bool pointwise = row.layer.ends_with("conv1") || row.layer.ends_with("conv3") ||
                           row.layer.ends_with("proj");
    (pointwise ? one : three) += row.macs;
  }
  return {one, three};
}

int criterion_2() {
  const std::vector<TotalRow> base{{"crn29", 34.5e6}, {"crn47", 57.1e6}, {"crn65", 79.6e6}, {"crn83", 102.3e6},
                                   {"crn101", 125.0e6}};
  const std::vector<TotalRow> sb{{"csbn29", 27.5e6}, {"csbn47", 42.9e6}, {"csbn65", 58.4e6}, {"csbn83", 73.8e6},
                                 {"csbn101", 89.3e6}};
  std::vector<TotalRow> all = base;
  all.insert(all.end(), sb.begin(), sb.end());
  double worst = 0.0;
  for (const TotalRow& r : all)
    worst = std::max(worst, std::abs(rel_delta(static_cast<double>(count_flops(preset(r.preset)).total_macs()),
                                               r.reference)));
  if (worst <= 0.03) {
    (void)compare_totals(all, 0.03);
    return verdict("2", true, fmt("worst total delta %.2f%% (+-3%%)", 100 * worst));
  }
  std::printf("  totals outside +-3%%; per-layer diff report against the +-8%% fallback:\n");
  (void)compare_totals(all, 0.08);
  // Each depth step of 18 adds two stride-1 blocks per stage. Compare the cost
  // of one block per stage with the reference increments, split by layer type.
  for (const auto* fam : {&base, &sb}) {
    const double step_ref = ((*fam)[4].reference - (*fam)[0].reference) / 8.0;
    const double step_got = (static_cast<double>(count_flops(preset((*fam)[4].preset)).total_macs()) -
                             static_cast<double>(count_flops(preset((*fam)[0].preset)).total_macs())) /
                            8.0;
    std::printf("  %s family: one added block per stage costs %.3fM, reference %.3fM (%+.1f%%)\n",
                fam == &base ? "cRB" : "cSB", step_got / 1e6, step_ref / 1e6, 100 * rel_delta(step_got, step_ref));
  }
  double triple_one = 0.0;
  double triple_three = 0.0;
  const NetworkPlan p = plan(preset("crn29"));
  for (int s = 0; s < 3; ++s) {
    BlockSpec b = p.blocks[static_cast<std::size_t>(3 * s + 1)];
    const std::int64_t hw = 32 >> s;
    const auto [one, three] = conv_split(block_costs(b, hw, hw));
    triple_one += static_cast<double>(one);
    triple_three += static_cast<double>(three);
    std::printf("  stage %d stride-1 cRB: 1x1 convs (conv1, conv3) %.3fM, 3x3 conv (conv2) %.3fM\n", s + 1,
                static_cast<double>(one) / 1e6, static_cast<double>(three) / 1e6);
  }
  const double step_ref = (base[4].reference - base[0].reference) / 8.0;
  std::printf("  reference step minus computed 3x3 part leaves %.3fM for the 1x1 convs; computed %.3fM (%.2fx)\n",
              (step_ref - triple_three) / 1e6, triple_one / 1e6, triple_one / (step_ref - triple_three));
  std::printf("  discrepancy attributed to conv1/conv3 (1x1) layers of every bottleneck block\n");
  return verdict("2", worst <= 0.08, fmt("worst total delta %.2f%% (+-3%% not met; +-8%% fallback)", 100 * worst));
}

int criterion_3() {
  const std::vector<int> depths{18, 34, 50, 101};
  const std::vector<double> rn{1.6e9, 3.5e9, 3.7e9, 7.4e9};
  const std::vector<double> sbn{1.0e9, 2.0e9, 2.9e9, 5.7e9};
  bool ok = true;
  std::string misses;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const std::string d = std::to_string(depths[i]);
    const CostReport a = count_flops(preset("imagenet" + d));
    const CostReport b = count_flops(preset("sbn-imagenet" + d));
    const double ga = static_cast<double>(a.total_macs());
    const double gb = static_cast<double>(b.total_macs());
    const double da = rel_delta(ga, rn[i]);
    const double db = rel_delta(gb, sbn[i]);
    const double ratio = gb / ga;
    const double ratio_ref = sbn[i] / rn[i];
    const bool row_ok = std::abs(da) <= 0.15 && std::abs(db) <= 0.15 && std::abs(ratio - ratio_ref) <= 0.05;
    ok = ok && row_ok;
    if (!row_ok) misses += (misses.empty() ? "" : ", ") + d;
    std::printf("  depth %-3s RN %.3fG (%+.1f%%)  SBN %.3fG (%+.1f%%)  ratio %.3f vs %.3f (%+.1fpp)  %s\n", d.c_str(),
                ga / 1e9, 100 * da, gb / 1e9, 100 * db, ratio, ratio_ref, 100 * (ratio - ratio_ref),
                row_ok ? "ok" : "outside");
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> stages;
    for (const CostRow& r : a.rows) stages[r.layer.substr(0, r.layer.find('.'))].first += r.macs;
    for (const CostRow& r : b.rows) stages[r.layer.substr(0, r.layer.find('.'))].second += r.macs;
    for (const auto& [name, m] : stages)
      if (m.first > 0)
        std::printf("      %-6s RN %9.1fM  SBN %9.1fM\n", name.c_str(), static_cast<double>(m.first) / 1e6,
                    static_cast<double>(m.second) / 1e6);
  }
  return verdict("3", ok,
                 ok ? std::string("all depths within +-15% with SBN/RN ratio within +-5pp")
                    : "depth " + misses + " outside +-15% or +-5pp ratio");
}

// ---- 4: block algebra ------------------------------------------------------

int criterion_4() {
  bool ok = true;
  BlockSpec r;
  r.in_channels = r.channels = 64;
  const Fraction r1 = block_reduction(r, make_pattern("1/4"));
  const Fraction r2 = block_reduction(r, make_pattern("2/4"));
  ok = ok && r1 == Fraction::make(3, 4) && r2 == Fraction::make(1, 2);
  std::printf("  rSB single subset saves %s (want 3/4); chessboard saves %s (want 1/2)\n", r1.str().c_str(),
              r2.str().c_str());
  for (int c : {2, 4, 8}) {
    BlockSpec b;
    b.kind = BlockKind::cRB;
    b.bottleneck = c;
    b.in_channels = b.channels = 64;
    const Fraction f1 = block_reduction(b, make_pattern("1/4"));
    const Fraction f2 = block_reduction(b, make_pattern("2/4"));
    // Per position with inner width d: cRB = (2C + 9) d^2, single-subset SB path 9d^2/4.
    const Fraction want1 = Fraction::make(27, 8 * static_cast<std::uint64_t>(c) + 36);
    const Fraction want2 = Fraction::make(18, 8 * static_cast<std::uint64_t>(c) + 36);
    ok = ok && f1 == want1 && f2 == want2;
    std::printf("  cSB C=%d single subset saves %s (want %s); chessboard saves %s (want %s)\n", c, f1.str().c_str(),
                want1.str().c_str(), f2.str().c_str(), want2.str().c_str());
  }
  for (bool bottleneck : {false, true}) {
    BlockSpec b;
    b.kind = bottleneck ? BlockKind::cRB : BlockKind::rRB;
    b.in_channels = b.channels = 64;
    auto sb_macs = [&](const char* p) {
      std::uint64_t m = 0;
      for (const CostRow& row : block_costs(to_sb(b, make_pattern(p)), 32, 32).rows)
        if (row.layer.find(".sb.") != std::string::npos) m += row.macs;
      return m;
    };
    const bool twice = sb_macs("2/4") == 2 * sb_macs("1/4");
    ok = ok && twice;
    std::printf("  %s: chessboard SB path costs exactly 2x single subset: %s\n", bottleneck ? "cSB" : "rSB",
                twice ? "yes" : "no");
  }
  return verdict("4", ok, "exact rational equality");
}

// ---- 5, 6: kernel identities -----------------------------------------------

struct Case {
  Tensor4 x;
  Tensor4 w;
  int stride;
  int a;
  int b;
};

Case random_case(Rng& rng) {
  Case c;
  c.stride = 2 + static_cast<int>(rng.below(2));
  c.a = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.stride)));
  c.b = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.stride)));
  const int s = 1 + 2 * static_cast<int>(rng.below(3));
  const auto ci = static_cast<std::int64_t>(1 + rng.below(4));
  const auto co = static_cast<std::int64_t>(1 + rng.below(4));
  const auto h = static_cast<std::int64_t>(c.stride + rng.below(12));
  const auto w = static_cast<std::int64_t>(c.stride + rng.below(12));
  c.x = fill_random({static_cast<std::int64_t>(1 + rng.below(3)), ci, h, w}, rng, Gaussian{});
  c.w = fill_random({co, ci, s, s}, rng, Gaussian{});
  return c;
}

ConvSpec spec_of(const Case& c, bool dense) {
  const int s = static_cast<int>(c.w.h());
  const auto in = static_cast<int>(c.w.c());
  const auto out = static_cast<int>(c.w.n());
  return dense ? ConvSpec::dense(in, out, s) : ConvSpec::strided(in, out, s, c.stride, c.a, c.b);
}

int criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  int exact = 0;
  const int cases = 250;
  for (int i = 0; i < cases; ++i) {
    const Case c = random_case(rng);
    const Tensor4 dense = conv2d_forward(c.x, ConvKernel{c.w}, spec_of(c, true));
    const Tensor4 strided = conv2d_forward(c.x, ConvKernel{c.w}, spec_of(c, false));
    exact += bitwise_equal(strided, oracle::subsample(dense, c.stride, c.a, c.b)) ? 1 : 0;
  }
  return verdict("5", exact == cases,
                 fmt("%d/%d cases bit-exact (K in {2,3}, random offsets), %.2f s", exact, cases, seconds_since(t0)));
}

int criterion_6() {
  Rng rng(6);
  double worst = 0.0;
  const int cases = 250;
  for (int i = 0; i < cases; ++i) {
    const Case c = random_case(rng);
    const ConvSpec spec = spec_of(c, false);
    const Tensor4 z = conv2d_forward(c.x, ConvKernel{c.w}, spec);
    const Tensor4 y = fill_random(z.shape(), rng, Gaussian{});
    const double lhs = dot(z, y);
    const double rhs = dot(c.x, deconv2d_forward(y, ConvKernel{c.w}, spec, c.x.h(), c.x.w()));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
  }
  return verdict("6", worst < 1e-12, fmt("max relative error %.3e over %d cases (< 1e-12)", worst, cases));
}

// ---- 7: gradients ----------------------------------------------------------

// Central differences of <block(x), R> w.r.t. the input and every parameter.
double block_gradcheck(ResidualBlock& blk, const Tensor4& x, Rng& rng) {
  std::vector<ParamRef> params;
  for (Layer& l : blk.main.layers) detail::layer_params(l, params);
  for (Layer& l : blk.projection) detail::layer_params(l, params);
  GradPair g = blk.forward(x, Mode::train);
  const Tensor4 probe = fill_random(g.value.shape(), rng, Gaussian{});
  for (ParamRef& p : params) *p.grad = Tensor4(p.grad->shape());
  const Tensor4 dx = g.pullback(probe).input;
  auto loss = [&] { return dot(blk.forward(x, Mode::train).value, probe); };
  Tensor4 xv = x;
  auto loss_x = [&] { return dot(blk.forward(xv, Mode::train).value, probe); };
  double worst = 0.0;
  {
    std::vector<double> a(dx.data().begin(), dx.data().end());
    std::vector<double> n;
    for (std::size_t i = 0; i < xv.size(); ++i) n.push_back(central_difference(xv[i], loss_x, 1e-5));
    worst = std::max(worst, relative_error(a, n));
  }
  for (ParamRef& p : params) {
    std::vector<double> a(p.grad->data().begin(), p.grad->data().end());
    std::vector<double> n;
    for (std::size_t i = 0; i < p.value->size(); ++i) n.push_back(central_difference((*p.value)[i], loss, 1e-5));
    worst = std::max(worst, relative_error(a, n));
  }
  return worst;
}

int criterion_7() {
  Rng rng(7);
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const DiffOp& op, std::vector<Tensor4> in) {
    errs.emplace_back(name, gradcheck(op, std::move(in)).max_rel_error());
  };
  auto g = [&](Shape4 s) { return fill_random(s, rng, Gaussian{}); };

  const ConvSpec cs = ConvSpec::strided(2, 3, 3, 2, 1, 0);
  check("conv2d (stride 2, offset (1,0))",
        [cs](std::span<const Tensor4> t) { return conv2d(t[0], ConvKernel{t[1]}, cs); }, {g({2, 2, 7, 6}), g(cs.weight_shape())});
  const ConvSpec cs3 = ConvSpec::strided(2, 2, 3, 3, 2, 1);
  check("conv2d (stride 3, offset (2,1))",
        [cs3](std::span<const Tensor4> t) { return conv2d(t[0], ConvKernel{t[1]}, cs3); }, {g({1, 2, 8, 7}), g(cs3.weight_shape())});
  check("deconv2d",
        [cs](std::span<const Tensor4> t) { return deconv2d(t[0], ConvKernel{t[1]}, cs, 7, 6); },
        {g({2, 3, cs.out_h(7), cs.out_w(6)}), g(cs.weight_shape())});
  check("batchnorm (train)",
        [](std::span<const Tensor4> t) {
          BatchNormState st(t[0].c());
          st.gamma = t[1];
          st.beta = t[2];
          return batchnorm(t[0], st, Mode::train);
        },
        {g({3, 2, 4, 5}), fill_random({1, 2, 1, 1}, rng, Uniform{0.5, 1.5}), g({1, 2, 1, 1})});
  check("batchnorm (eval)",
        [](std::span<const Tensor4> t) {
          BatchNormState st(t[0].c());
          st.gamma = t[1];
          st.beta = t[2];
          st.running_mean = {0.3, -0.1};
          st.running_var = {0.7, 1.9};
          return batchnorm(t[0], st, Mode::eval);
        },
        {g({2, 2, 3, 3}), g({1, 2, 1, 1}), g({1, 2, 1, 1})});
  check("relu", [](std::span<const Tensor4> t) { return relu(t[0]); }, {g({2, 3, 4, 4})});
  check("avgpool2d", [](std::span<const Tensor4> t) { return avgpool2d(t[0], 2, 1, 1); }, {g({2, 2, 7, 6})});
  check("maxpool2d", [](std::span<const Tensor4> t) { return maxpool2d(t[0], 3, 2); }, {g({2, 2, 7, 6})});
  check("global_avgpool", [](std::span<const Tensor4> t) { return global_avgpool(t[0]); }, {g({2, 3, 4, 5})});
  check("linear", [](std::span<const Tensor4> t) { return linear(t[0], t[1]); }, {g({3, 5, 1, 1}), g({4, 5, 1, 1})});
  {
    Tensor4 z = g({4, 6, 1, 1});
    const std::vector<int> labels{0, 5, 2, 2};
    const Tensor4 dz = softmax_xent(z, labels).dlogits;
    std::vector<double> a(dz.data().begin(), dz.data().end());
    std::vector<double> n;
    for (std::size_t i = 0; i < z.size(); ++i)
      n.push_back(central_difference(z[i], [&] { return softmax_xent(z, labels).loss; }, 1e-5));
    errs.emplace_back("softmax_xent", relative_error(a, n));
  }
  for (InnerNonlinearity inner : {InnerNonlinearity::none, InnerNonlinearity::bn_relu})
    for (const char* p : {"1/4", "2/4"}) {
      const SBModule base = SBModule::make(make_pattern(p), 3, 2, 3, inner, DownsampleMode::strided_conv, rng);
      std::vector<Tensor4> in{g({2, 3, 6, 7}), base.conv.weights, base.deconv.weights};
      if (inner == InnerNonlinearity::bn_relu) {
        in.push_back(base.inner_bn.gamma);
        in.push_back(base.inner_bn.beta);
      }
      check(std::string("SB module ") + p + (inner == InnerNonlinearity::none ? "" : " (inner BN+ReLU)"),
            [&base](std::span<const Tensor4> t) {
              SBModule m = base;
              m.conv.weights = t[1];
              m.deconv.weights = t[2];
              if (t.size() == 5) {
                m.inner_bn.gamma = t[3];
                m.inner_bn.beta = t[4];
              }
              return sb_forward(t[0], m, Mode::train);
            },
            std::move(in));
    }
  for (BlockKind kind : {BlockKind::rRB, BlockKind::cRB}) {
    BlockSpec b;
    b.kind = kind;
    b.bottleneck = 2;
    b.in_channels = b.channels = 4;
    ResidualBlock blk = Network::make_block("blk", to_sb(b, make_pattern("2/4")), rng);
    errs.emplace_back(kind == BlockKind::rRB ? "rSB block" : "cSB block", block_gradcheck(blk, g({2, 4, 6, 6}), rng));
  }
  bool ok = true;
  for (const auto& [name, e] : errs) {
    std::printf("  %-36s %.3e\n", name.c_str(), e);
    ok = ok && e < 1e-5;
  }
  double net_worst = 0.0;
  for (bool sb : {false, true}) {
    NetworkConfig c = preset(sb ? "sbn8" : "rn8");
    Rng init(70);
    Network net = Network::build(c, init);
    const Tensor4 x = fill_random(net.input_shape(2), init, Gaussian{});
    const std::vector<int> labels{3, 8};
    const GradcheckReport r = gradcheck_network(net, x, labels, {1e-5, 4, 71});
    std::printf("  %-36s %.3e over %zu parameter tensors\n", sb ? "depth-8 SBN (32x32)" : "depth-8 RN (32x32)",
                r.max_rel_error(), r.entries.size());
    net_worst = std::max(net_worst, r.max_rel_error());
  }
  ok = ok && net_worst < 1e-4;
  return verdict("7", ok, "primitives and SB blocks < 1e-5, depth-8 networks < 1e-4");
}

// ---- 8: linearity ----------------------------------------------------------

int criterion_8() {
  Rng rng(8);
  double worst = 0.0;
  const char* patterns[] = {"1/4", "2/4", "3/4", "full"};
  for (int i = 0; i < 100; ++i) {
    SBModule m = SBModule::make(make_pattern(patterns[i % 4]), 1 + static_cast<int>(rng.below(4)),
                                1 + static_cast<int>(rng.below(4)), 1 + static_cast<int>(rng.below(4)),
                                InnerNonlinearity::none,
                                i % 3 == 0 ? DownsampleMode::avgpool_conv : DownsampleMode::strided_conv, rng);
    const Shape4 s{2, m.in_channels, static_cast<std::int64_t>(2 + rng.below(9)),
                   static_cast<std::int64_t>(2 + rng.below(9))};
    const Tensor4 x = fill_random(s, rng, Gaussian{});
    const Tensor4 y = fill_random(s, rng, Gaussian{});
    const double a = rng.gaussian();
    const double b = rng.gaussian();
    const Tensor4 lhs = sb_forward(scaled(x, a) + scaled(y, b), m, Mode::eval).value;
    const Tensor4 rhs = scaled(sb_forward(x, m, Mode::eval).value, a) + scaled(sb_forward(y, m, Mode::eval).value, b);
    worst = std::max(worst, oracle::max_abs_diff(oracle::flat(lhs), oracle::flat(rhs)) /
                                std::max(oracle::max_abs(oracle::flat(rhs)), 1e-300));
  }
  return verdict("8", worst < 1e-12, fmt("max relative superposition error %.3e over 100 modules", worst));
}

// ---- 9: receptive fields ---------------------------------------------------

int criterion_9() {
  bool ok = true;
  const auto dense = probe_receptive_field({RFStage::conv()}, 12, 12, 5, 6);
  const bool dense_ok = dense.height() == 3 && dense.width() == 3;
  ok = ok && dense_ok;
  std::printf("  dense 3x3 conv: %lldx%lld\n", static_cast<long long>(dense.height()),
              static_cast<long long>(dense.width()));

  std::set<std::pair<std::int64_t, std::int64_t>> interior;
  std::set<std::pair<std::int64_t, std::int64_t>> border;
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      const auto rf = probe_receptive_field({RFStage::sb(make_pattern("1/4"))}, 12, 12, r, c);
      (rf.interior() ? interior : border).insert({rf.height(), rf.width()});
    }
  auto list = [](const auto& s) {
    std::string out;
    for (const auto& [h, w] : s) out += std::to_string(h) + "x" + std::to_string(w) + " ";
    return out;
  };
  std::printf("  single-subset SB interior boxes: %s\n", list(interior).c_str());
  std::printf("  single-subset SB border boxes:   %s\n", list(border).c_str());
  bool in_range = true;
  for (const auto& [h, w] : interior) in_range = in_range && h >= 3 && h <= 5 && w >= 3 && w <= 5;
  const bool has54 = interior.count({5, 4}) > 0;
  const bool has35 = interior.count({3, 5}) > 0;
  std::printf("  interior within {3..5}x{3..5}: %s; has 5x4: %s; has 3x5: %s\n", in_range ? "yes" : "no",
              has54 ? "yes" : "no", has35 ? "yes" : "no");
  ok = ok && in_range && has54 && has35;

  bool chess = true;
  int probed = 0;
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      const auto rf = probe_receptive_field({RFStage::sb(make_pattern("2/4"))}, 12, 12, r, c);
      if (!rf.interior()) continue;
      ++probed;
      chess = chess && rf.height() == 5 && rf.width() == 5;
    }
  std::printf("  chessboard SB: %d interior neurons, all 5x5: %s\n", probed, chess ? "yes" : "no");
  ok = ok && chess && probed > 0;
  return verdict("9", ok,
                 fmt("dense 3x3 %s; interior boxes %s; 5x4 %s; 3x5 %s; chessboard 5x5 %s", dense_ok ? "yes" : "no",
                     in_range ? "in range" : "out of range", has54 ? "found" : "missing", has35 ? "found" : "missing",
                     chess ? "yes" : "no"));
}

// ---- 10: parameter parity --------------------------------------------------

int criterion_10() {
  BlockSpec c;
  c.kind = BlockKind::cRB;
  c.in_channels = c.channels = 64;
  const std::uint64_t rb = spatial_path_params(c);
  const std::uint64_t sb = spatial_path_params(to_sb(c, make_pattern("2/4")));
  bool ok = rb == 2304 && sb == 2304 && rb == 9ull * 16 * 16 && sb == 2ull * 9 * 16 * 8;
  std::printf("  D=64 C=4: cRB 3x3 path %llu, cSB path %llu\n", static_cast<unsigned long long>(rb),
              static_cast<unsigned long long>(sb));
  // Inner width D/C >= 2: below that the SB mid width D/(2C) is not a channel count.
  int checked = 0;
  for (int cc : {2, 4, 8})
    for (int d = 2 * cc; d <= 512; d += cc) {
      c.bottleneck = cc;
      c.in_channels = c.channels = d;
      ++checked;
      if (spatial_path_params(to_sb(c, make_pattern("2/4"))) > spatial_path_params(c)) {
        ok = false;
        std::printf("  exceeds at D=%d C=%d\n", d, cc);
      }
    }
  return verdict("10", ok, fmt("2304 each at D=64,C=4; never exceeds over %d (D,C) pairs with D/C >= 2", checked));
}

// ---- 11: desk-scale training -----------------------------------------------

int criterion_11_synthetic() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = load_dataset(DatasetSpec::parse("synthetic:0:256:10"));
  Rng init(1);
  Network net = Network::build(preset("rn8"), init);
  TrainOptions o;
  o.optim.epochs = 30;
  o.optim.batch_size = 32;
  o.seed = 1;
  double train_acc = 0.0;
  o.stop_when = [&](const EpochMetrics& e) {
    train_acc = 1.0 - evaluate(net, data.train).top1();
    std::printf("  epoch %2d  loss %.4f  running err %.3f  train acc (eval) %.4f  test err %.3f\n", e.epoch,
                e.train_loss, e.train_err, train_acc, e.test_err);
    return train_acc > 0.95;
  };
  const RunManifest m = train(net, data, o);
  return verdict("11 (synthetic)", train_acc > 0.95 && m.epochs.size() <= 30,
                 fmt("depth-8 train accuracy %.2f%% after %zu epochs (> 95%% within 30), %.0f s", 100 * train_acc,
                     m.epochs.size(), seconds_since(t0)));
}

int criterion_11_cifar() {
  const char* root = std::getenv("SBNET_CIFAR10_ROOT");
  if (root == nullptr) {
    std::printf("criterion 11 (cifar10): SKIP  SBNET_CIFAR10_ROOT not set; CIFAR-10 binaries unavailable\n");
    return kSkip;
  }
  const auto t0 = std::chrono::steady_clock::now();
  DatasetSpec spec = DatasetSpec::parse(std::string("cifar10:") + root);
  spec.subset = 5000;
  const Dataset data = load_dataset(spec);
  double err[2] = {0.0, 0.0};
  for (int sb = 0; sb < 2; ++sb) {
    Rng init(11);
    Network net = Network::build(preset(sb ? "sbn20" : "rn20"), init);
    TrainOptions o;
    o.optim.epochs = 20;
    o.optim.boundaries = {10, 15};
    o.seed = 11;
    o.on_epoch = [&](const EpochMetrics& e) {
      std::printf("  %s epoch %2d  loss %.4f  test err %.4f  %.0f s\n", sb ? "sbn20" : "rn20", e.epoch, e.train_loss,
                  e.test_err, e.seconds);
      std::fflush(stdout);
    };
    err[sb] = train(net, data, o).epochs.back().test_err;
  }
  const bool ok = err[0] < 0.35 && err[1] < 0.35 && std::abs(err[0] - err[1]) < 0.05;
  return verdict("11 (cifar10)", ok,
                 fmt("test error RN %.2f%%, SBN %.2f%% (< 35%%, gap < 5 points), %.0f s", 100 * err[0], 100 * err[1],
                     seconds_since(t0)));
}

// ---- 12: benchmark ---------------------------------------------------------

int criterion_12() {
  BenchOptions o;  // D=64, 32x32, batch 32, warmup 10, 30 timed iterations
  std::vector<BenchResult> r{run_bench("rb", o), run_bench("sb_2/4", o)};
  relate_to(r, r[0]);
  BlockSpec rb;
  rb.in_channels = rb.channels = 64;
  const auto a_rb = block_costs(rb, 32, 32).total_macs();
  const auto a_sb = block_costs(to_sb(rb, make_pattern("2/4")), 32, 32).total_macs();
  const bool exact = r[0].macs == r[0].analyzer_macs && r[1].macs == r[1].analyzer_macs &&
                     r[0].macs * a_sb == r[1].macs * a_rb && r[1].mac_ratio == 2.0;
  BenchOptions small = o;
  small.batch = 1;
  small.warmup = 0;
  std::vector<BenchResult> c{run_bench("crb", small), run_bench("csb_2/4", small)};
  const bool c_exact = c[0].macs == c[0].analyzer_macs && c[1].macs == c[1].analyzer_macs &&
                       Fraction::make(c[0].macs - c[1].macs, c[0].macs) == Fraction::make(9, 34);
  for (const auto* set : {&r, &c})
    for (const BenchResult& b : *set)
      std::printf("  %-8s median %9.3f ms  iqr %8.3f ms  macs %llu (analyzer %llu)  threads %d\n", b.name.c_str(),
                  b.median_ms, b.iqr_ms, static_cast<unsigned long long>(b.macs),
                  static_cast<unsigned long long>(b.analyzer_macs), b.threads);
  const double speedup = r[1].speedup;
  std::printf("  MAC ratio rb/sb_2/4 = %.4f; cRB->cSB_2/4 reduction %s\n", r[1].mac_ratio,
              c_exact ? "9/34 exact" : "mismatch");
  std::printf("  wall-clock speedup sb_2/4 vs rb: %.3fx (soft target 1.3x; hard floor 1.15x)%s\n", speedup,
              speedup < 1.3 ? "  below soft target" : "");
  return verdict("12", exact && c_exact && speedup >= 1.15,
                 fmt("MAC ratios exact; speedup %.2fx", speedup));
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<int()>> table{
      {"1", criterion_1},   {"2", criterion_2},   {"3", criterion_3},
      {"4", criterion_4},   {"5", criterion_5},   {"6", criterion_6},
      {"7", criterion_7},   {"8", criterion_8},   {"9", criterion_9},
      {"10", criterion_10}, {"11", criterion_11_synthetic}, {"11-cifar", criterion_11_cifar},
      {"12", criterion_12}};
  std::vector<std::string> ids;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) ids.push_back(argv[++i]);
    else {
      std::fprintf(stderr, "usage: acceptance [--criterion <id>]...\n");
      return 2;
    }
  }
  if (ids.empty())
    for (const auto& [id, fn] : table) ids.push_back(id);
  int rc = kPass;
  for (const std::string& id : ids) {
    const auto it = table.find(id);
    if (it == table.end()) {
      std::fprintf(stderr, "unknown criterion '%s'\n", id.c_str());
      return 2;
    }
    const int r = it->second();
    std::fflush(stdout);
    if (r == kFail || (r == kSkip && ids.size() == 1)) rc = r;
  }
  return rc;
}
