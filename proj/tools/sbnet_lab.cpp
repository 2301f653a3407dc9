// sbnet_lab: analyze / gradcheck / properties / train / bench / tables.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sbnet/sbnet.hpp"

using namespace sbnet;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kPropertyFailure = 2;
constexpr int kToleranceFailure = 3;

// Reference MAC totals the analyzer is compared against by `tables`.
struct ReferenceRow {
  std::string preset;
  double macs;
};

const std::vector<ReferenceRow>& reference_rows() {
  static const std::vector<ReferenceRow> rows{
      {"rn20", 40.5e6},       {"rn44", 97.2e6},       {"rn62", 139.6e6},      {"rn86", 193.6e6},
      {"rn110", 252.9e6},     {"sbn20", 24.0e6},      {"sbn44", 52.3e6},      {"sbn62", 73.6e6},
      {"sbn86", 101.9e6},     {"sbn110", 130.0e6},    {"crn29", 34.5e6},      {"crn47", 57.1e6},
      {"crn65", 79.6e6},      {"crn83", 102.3e6},     {"crn101", 125.0e6},    {"csbn29", 27.5e6},
      {"csbn47", 42.9e6},     {"csbn65", 58.4e6},     {"csbn83", 73.8e6},     {"csbn101", 89.3e6},
      {"imagenet18", 1.6e9},  {"imagenet34", 3.5e9},  {"imagenet50", 3.7e9},  {"imagenet101", 7.4e9},
      {"sbn-imagenet18", 1.0e9}, {"sbn-imagenet34", 2.0e9}, {"sbn-imagenet50", 2.9e9},
      {"sbn-imagenet101", 5.7e9}};
  return rows;
}

int cmd_analyze(const std::string& target, const std::string& format, const std::string& baseline, int input_hw) {
  CostReport named = count_flops(resolve_config(target), input_hw);
  named.name = target;
  const ReportFormat fmt = parse_report_format(format);
  if (baseline.empty()) {
    std::cout << format_report(named, fmt);
  } else {
    CostReport base = count_flops(resolve_config(baseline), input_hw);
    base.name = baseline;
    std::cout << format_report(named, fmt, &base);
  }
  return kOk;
}

int cmd_tables(const std::string& format, double tolerance) {
  const bool csv = format == "csv";
  if (!csv && format != "text") throw std::invalid_argument("tables: format must be text or csv");
  if (csv)
    std::cout << "preset,macs,reference_macs,delta_pct\n";
  else
    std::printf("%-16s %14s %14s %9s\n", "preset", "macs", "reference", "delta");
  bool all_within = true;
  for (const ReferenceRow& row : reference_rows()) {
    const double macs = static_cast<double>(count_flops(preset(row.preset)).total_macs());
    const double delta = 100.0 * (macs - row.macs) / row.macs;
    all_within = all_within && std::abs(delta) <= tolerance;
    if (csv)
      std::printf("%s,%.0f,%.0f,%.3f\n", row.preset.c_str(), macs, row.macs, delta);
    else
      std::printf("%-16s %14s %14s %+8.2f%%\n", row.preset.c_str(), human(macs).c_str(), human(row.macs).c_str(),
                  delta);
  }
  return tolerance > 0.0 && !all_within ? kToleranceFailure : kOk;
}

int cmd_gradcheck(const std::string& target, int depth, int input_hw, std::size_t coords, double tol,
                  std::uint64_t seed) {
  bool ok = true;
  if (target == "primitives" || target == "all") {
    const PropertyResult r = property_gradients(3, seed);
    std::printf("primitives and SB modules: max rel err %.3e (tolerance %.0e)\n", r.metric, 1e-5);
    ok = ok && r.passed;
  }
  if (target == "network" || target == "all") {
    for (bool sb : {false, true}) {
      NetworkConfig c;
      c.depth = depth;
      c.input_hw = input_hw;
      c.widths = {4, 8, 8};
      c.sb.enabled = sb;
      Rng rng(seed);
      Network net = Network::build(c, rng);
      const Tensor4 x = fill_random(net.input_shape(4), rng, Gaussian{});
      const std::vector<int> labels{0, 1, 2, 3};
      const GradcheckReport rep = gradcheck_network(net, x, labels, {1e-5, coords, seed});
      std::printf("%s depth %d: max rel err %.3e over %zu tensors (tolerance %.0e)\n", sb ? "sbn" : "rn", depth,
                  rep.max_rel_error(), rep.entries.size(), tol);
      ok = ok && rep.passed(tol);
    }
  }
  if (target != "primitives" && target != "network" && target != "all")
    throw std::invalid_argument("gradcheck: target must be primitives, network or all");
  return ok ? kOk : kToleranceFailure;
}

int cmd_properties(std::uint64_t seed, int cases) {
  bool ok = true;
  for (const PropertyResult& r : run_properties(seed, cases)) {
    std::printf("%-4s %-44s cases=%-4d %s", r.passed ? "ok" : "FAIL", r.name.c_str(), r.cases, r.detail.c_str());
    if (!r.passed) std::printf(" counterexample seed=%llu", static_cast<unsigned long long>(r.counterexample_seed));
    std::printf("\n");
    ok = ok && r.passed;
  }
  return ok ? kOk : kPropertyFailure;
}

struct TrainArgs {
  std::string config = "rn20";
  std::string data = "synthetic:0:512:10";
  std::int64_t subset = 0;
  std::int64_t test_subset = 0;
  int input_hw = 0;
  TrainOptions opts;
  bool no_augment = false;
  double stop_at = 0.0;
  std::string out;
};

int cmd_train(TrainArgs a) {
  NetworkConfig c = resolve_config(a.config);
  DatasetSpec ds = DatasetSpec::parse(a.data);
  if (a.subset > 0) ds.subset = a.subset;
  if (a.test_subset > 0) ds.test_subset = a.test_subset;
  const Dataset data = load_dataset(ds);
  c.num_classes = data.train.num_classes;
  Rng init(a.opts.seed);
  Network net = Network::build(c, init);
  a.opts.augment.enabled = !a.no_augment;
  if (a.stop_at > 0.0) a.opts.stop_at_train_accuracy = a.stop_at;
  if (!a.out.empty()) a.opts.out_dir = a.out;
  std::cout << csv_header() << "\n";
  a.opts.on_epoch = [](const EpochMetrics& e) { std::cout << csv_row(e) << std::endl; };
  try {
    (void)train(net, data, a.opts);
  } catch (const DivergenceError& e) {
    std::cerr << "sbnet_lab: " << e.what() << "\n";
    return kToleranceFailure;
  }
  return kOk;
}

int cmd_bench(const std::vector<std::string>& cases, const std::string& baseline, const BenchOptions& o,
              const std::string& format) {
  const BenchResult base = run_bench(baseline, o);
  std::vector<BenchResult> results;
  for (const std::string& c : cases) results.push_back(c == baseline ? base : run_bench(c, o));
  relate_to(results, base);
  bool consistent = true;
  nlohmann::json out = nlohmann::json::array();
  if (format == "text")
    std::printf("%-10s %7s %11s %9s %14s %9s %8s\n", "case", "threads", "median_ms", "iqr_ms", "macs", "mac_ratio",
                "speedup");
  for (const BenchResult& r : results) {
    consistent = consistent && r.macs == r.analyzer_macs;
    if (format == "json")
      out.push_back(r.to_json());
    else
      std::printf("%-10s %7d %11.3f %9.3f %14llu %9.4f %8.3f\n", r.name.c_str(), r.threads, r.median_ms, r.iqr_ms,
                  static_cast<unsigned long long>(r.macs), r.mac_ratio, r.speedup);
  }
  if (format == "json") std::cout << out.dump(2) << "\n";
  if (!consistent) std::cerr << "sbnet_lab: executed MACs differ from the cost model\n";
  return consistent ? kOk : kToleranceFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-bottleneck network laboratory"};
  app.require_subcommand(1);

  auto* analyze = app.add_subcommand("analyze", "Per-layer MACs and parameters of a preset or JSON config");
  std::string target;
  std::string format = "text";
  std::string baseline;
  int input_hw = 0;
  analyze->add_option("config", target, "Preset name or path to a .json config")->required();
  analyze->add_option("--format", format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));
  analyze->add_option("--baseline", baseline, "Config to report reductions against");
  analyze->add_option("--input-hw", input_hw, "Override the input resolution");

  auto* tables = app.add_subcommand("tables", "Analyzer totals next to reference values");
  std::string table_format = "text";
  double table_tol = 0.0;
  tables->add_option("--format", table_format, "text or csv")->check(CLI::IsMember({"text", "csv"}));
  tables->add_option("--tolerance", table_tol, "Exit 3 if any |delta| exceeds this many percent (0: report only)");

  auto* gcheck = app.add_subcommand("gradcheck", "Central-difference gradient checks");
  std::string gc_target = "all";
  int gc_depth = 8;
  int gc_hw = 8;
  std::size_t gc_coords = 6;
  double gc_tol = 1e-4;
  std::uint64_t seed = 0;
  gcheck->add_option("--target", gc_target, "primitives, network or all");
  gcheck->add_option("--depth", gc_depth, "Depth of the checked network (6n+2)");
  gcheck->add_option("--input-hw", gc_hw, "Input resolution of the checked network");
  gcheck->add_option("--coords", gc_coords, "Sampled coordinates per parameter tensor (0: all)");
  gcheck->add_option("--tol", gc_tol, "Relative error tolerance for the network check");
  gcheck->add_option("--seed", seed, "Seed");

  auto* props = app.add_subcommand("properties", "Randomized invariant suites");
  int cases = 50;
  props->add_option("--seed", seed, "Seed");
  props->add_option("--cases", cases, "Random cases per property")->check(CLI::PositiveNumber);

  auto* trn = app.add_subcommand("train", "Train a network with SGD");
  TrainArgs ta;
  trn->add_option("--config", ta.config, "Preset name or .json config");
  trn->add_option("--data", ta.data, "cifar10:<root>, cifar100:<root> or synthetic:<seed>:<n>:<classes>");
  trn->add_option("--subset", ta.subset, "Keep the first N training records");
  trn->add_option("--test-subset", ta.test_subset, "Keep the first N test records");
  trn->add_option("--epochs", ta.opts.optim.epochs, "Epochs");
  trn->add_option("--batch", ta.opts.optim.batch_size, "Mini-batch size");
  trn->add_option("--lr", ta.opts.optim.lr, "Initial learning rate");
  trn->add_option("--boundaries", ta.opts.optim.boundaries, "Epochs after which the rate is divided by 10");
  trn->add_option("--momentum", ta.opts.optim.momentum, "Nesterov momentum");
  trn->add_option("--weight-decay", ta.opts.optim.weight_decay, "L2 weight decay");
  trn->add_flag("--no-augment", ta.no_augment, "Disable pad/crop/flip augmentation");
  trn->add_option("--stop-at", ta.stop_at, "Stop once training accuracy exceeds this fraction");
  trn->add_option("--seed", ta.opts.seed, "Seed for initialization, order and augmentation");
  trn->add_option("--out", ta.out, "Directory for manifest.json, metrics.csv and the checkpoint");

  auto* bench = app.add_subcommand("bench", "Time single-block forwards");
  std::vector<std::string> bench_cases{"rb", "sb_1/4", "sb_2/4"};
  std::string bench_base = "rb";
  std::string bench_format = "text";
  BenchOptions bo;
  bench->add_option("--case", bench_cases, "rb, crb, sb_<pattern>, csb_<pattern> (repeatable)");
  bench->add_option("--baseline", bench_base, "Case the speedups are relative to");
  bench->add_option("--channels", bo.channels, "Block width D");
  bench->add_option("--bottleneck", bo.bottleneck, "Channel bottleneck C of crb/csb");
  bench->add_option("--hw", bo.hw, "Spatial size");
  bench->add_option("--batch", bo.batch, "Batch size");
  bench->add_option("--iters", bo.iters, "Timed iterations (>= 30)");
  bench->add_option("--warmup", bo.warmup, "Untimed warmup iterations");
  bench->add_option("--format", bench_format, "text or json")->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kUsage;
  }

  try {
    if (*analyze) return cmd_analyze(target, format, baseline, input_hw);
    if (*tables) return cmd_tables(table_format, table_tol);
    if (*gcheck) return cmd_gradcheck(gc_target, gc_depth, gc_hw, gc_coords, gc_tol, seed);
    if (*props) return cmd_properties(seed, cases);
    if (*trn) return cmd_train(ta);
    if (*bench) return cmd_bench(bench_cases, bench_base, bo, bench_format);
  } catch (const std::exception& e) {
    std::cerr << "sbnet_lab: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
