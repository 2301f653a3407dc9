#pragma once

// Declarative network descriptions: block specs, network configs, the
// residual-block to spatial-bottleneck transform, named presets and JSON I/O.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sbnet/spatial_bottleneck.hpp"

namespace sbnet {

enum class BlockKind { rRB, cRB, rSB, cSB };
enum class Shortcut { identity, zero_pad_identity, projection };
enum class Family { cifar_regular, cifar_bottleneck, imagenet_regular, imagenet_bottleneck };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::rRB: return "rRB";
    case BlockKind::cRB: return "cRB";
    case BlockKind::rSB: return "rSB";
    case BlockKind::cSB: return "cSB";
  }
  return "?";
}

inline std::string to_string(Shortcut s) {
  switch (s) {
    case Shortcut::identity: return "identity";
    case Shortcut::zero_pad_identity: return "zero_pad_identity";
    case Shortcut::projection: return "projection";
  }
  return "?";
}

inline std::string to_string(Family f) {
  switch (f) {
    case Family::cifar_regular: return "cifar_regular";
    case Family::cifar_bottleneck: return "cifar_bottleneck";
    case Family::imagenet_regular: return "imagenet_regular";
    case Family::imagenet_bottleneck: return "imagenet_bottleneck";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (Family f : {Family::cifar_regular, Family::cifar_bottleneck, Family::imagenet_regular,
                   Family::imagenet_bottleneck})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown network family '" + std::string(s) + "'");
}

/// One pre-activation residual block.
///   rRB: BN-ReLU-conv3x3(stride) -> BN-ReLU-conv3x3
///   rSB: BN-ReLU-SB(conv3x3, BN-ReLU, deconv3x3), width unchanged
///   cRB: BN-ReLU-conv1x1(stride) -> BN-ReLU-conv3x3 -> BN-ReLU-conv1x1
///   cSB: as cRB with the 3x3 replaced by a linear SB whose reduced map has
///        half the channels
struct BlockSpec {
  BlockKind kind = BlockKind::rRB;
  int in_channels = 16;
  int channels = 16;   // D, the block's output width
  int bottleneck = 4;  // C
  SamplingPattern pattern = make_pattern("2/4");
  int stride = 1;
  Shortcut shortcut = Shortcut::identity;
  DownsampleMode downsample = DownsampleMode::strided_conv;

  [[nodiscard]] bool channel_bottleneck() const {
    return kind == BlockKind::cRB || kind == BlockKind::cSB;
  }
  [[nodiscard]] bool spatial_bottleneck() const {
    return kind == BlockKind::rSB || kind == BlockKind::cSB;
  }
  /// Width of the 3x3 path in a channel-bottleneck block: D / C.
  [[nodiscard]] int inner_width() const { return std::max(1, channels / bottleneck); }
  /// Width of the reduced map inside a cSB: D / (2C), at least 1.
  [[nodiscard]] int sb_mid_width() const { return std::max(1, channels / (2 * bottleneck)); }

  void validate() const {
    if (in_channels < 1 || channels < 1) throw std::invalid_argument("block: channels must be >= 1");
    if (bottleneck < 1) throw std::invalid_argument("block: bottleneck divisor must be >= 1");
    if (stride < 1) throw std::invalid_argument("block: stride must be >= 1");
    if (spatial_bottleneck() && stride != 1)
      throw std::invalid_argument("block: spatial bottleneck blocks must have stride 1");
    if (shortcut == Shortcut::identity && (in_channels != channels || stride != 1))
      throw std::invalid_argument("block: identity shortcut needs equal shapes");
    if (shortcut == Shortcut::zero_pad_identity && in_channels > channels)
      throw std::invalid_argument("block: zero-pad shortcut cannot drop channels");
  }
};

/// rRB -> rSB and cRB -> cSB for stride-1 blocks; anything else is returned unchanged.
inline BlockSpec to_sb(BlockSpec b, const SamplingPattern& pattern,
                       DownsampleMode mode = DownsampleMode::strided_conv) {
  if (b.stride != 1 || b.spatial_bottleneck()) return b;
  b.kind = b.kind == BlockKind::rRB ? BlockKind::rSB : BlockKind::cSB;
  b.pattern = pattern;
  b.downsample = mode;
  return b;
}

struct SBConfig {
  bool enabled = false;
  std::string pattern = "2/4";
  DownsampleMode downsample_mode = DownsampleMode::strided_conv;
};

struct NetworkConfig {
  Family family = Family::cifar_regular;
  int depth = 20;
  int num_classes = 10;
  SBConfig sb;
  std::vector<int> widths;  // empty: family default
  int bottleneck = 4;
  int input_hw = 0;  // 0: family default (32 or 224)

  [[nodiscard]] bool cifar() const {
    return family == Family::cifar_regular || family == Family::cifar_bottleneck;
  }
  [[nodiscard]] int resolved_input_hw() const { return input_hw > 0 ? input_hw : (cifar() ? 32 : 224); }
  [[nodiscard]] std::vector<int> resolved_widths() const {
    if (!widths.empty()) return widths;
    return cifar() ? std::vector<int>{16, 32, 64} : std::vector<int>{64, 128, 256, 512};
  }

  void validate() const {
    if (num_classes < 1) throw std::invalid_argument("config: num_classes must be >= 1");
    if (bottleneck < 1) throw std::invalid_argument("config: bottleneck divisor must be >= 1");
    const auto w = resolved_widths();
    const std::size_t stages = cifar() ? 3 : 4;
    if (w.size() != stages)
      throw std::invalid_argument("config: " + to_string(family) + " needs " +
                                  std::to_string(stages) + " stage widths");
    for (int v : w)
      if (v < 1) throw std::invalid_argument("config: stage widths must be >= 1");
    switch (family) {
      case Family::cifar_regular:
        if (depth < 8 || (depth - 2) % 6 != 0)
          throw std::invalid_argument("config: cifar_regular depth must be 6n+2 (n >= 1), got " +
                                      std::to_string(depth));
        break;
      case Family::cifar_bottleneck:
        if (depth < 11 || (depth - 2) % 9 != 0)
          throw std::invalid_argument("config: cifar_bottleneck depth must be 9n+2 (n >= 1), got " +
                                      std::to_string(depth));
        break;
      case Family::imagenet_regular:
        if (depth != 18 && depth != 34)
          throw std::invalid_argument("config: imagenet_regular depth must be 18 or 34");
        break;
      case Family::imagenet_bottleneck:
        if (depth != 50 && depth != 101)
          throw std::invalid_argument("config: imagenet_bottleneck depth must be 50 or 101");
        break;
    }
    if (sb.enabled) (void)make_pattern(sb.pattern);
    const int hw = resolved_input_hw();
    if (hw < (cifar() ? 4 : 32)) throw std::invalid_argument("config: input too small");
  }
};

/// Marks the config as a spatial-bottleneck network; blocks are converted by plan().
inline NetworkConfig to_sbn(NetworkConfig c, std::string pattern = "2/4") {
  c.sb.enabled = true;
  c.sb.pattern = std::move(pattern);
  return c;
}

struct StemSpec {
  int in_channels = 3;
  int out_channels = 16;
  int kernel = 3;
  int stride = 1;
  bool maxpool = false;  // 3x3 stride-2 max pool after BN-ReLU
};

struct NetworkPlan {
  NetworkConfig config;
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  std::vector<int> stage_of_block;
  int head_channels = 64;
};

/// Expands a config into its stem, ordered block list and head width.
inline NetworkPlan plan(const NetworkConfig& config) {
  config.validate();
  NetworkPlan p;
  p.config = config;
  const auto widths = config.resolved_widths();
  std::vector<int> per_stage;
  bool bottleneck = false;
  switch (config.family) {
    case Family::cifar_regular:
      per_stage.assign(3, (config.depth - 2) / 6);
      break;
    case Family::cifar_bottleneck:
      per_stage.assign(3, (config.depth - 2) / 9);
      bottleneck = true;
      break;
    case Family::imagenet_regular:
      per_stage = config.depth == 18 ? std::vector<int>{2, 2, 2, 2} : std::vector<int>{3, 4, 6, 3};
      break;
    case Family::imagenet_bottleneck:
      per_stage = config.depth == 50 ? std::vector<int>{3, 4, 6, 3} : std::vector<int>{3, 4, 23, 3};
      bottleneck = true;
      break;
  }
  if (config.cifar()) {
    p.stem = StemSpec{3, widths[0], 3, 1, false};
  } else {
    p.stem = StemSpec{3, widths[0], 7, 2, true};
  }
  int in = p.stem.out_channels;
  for (std::size_t s = 0; s < per_stage.size(); ++s) {
    const int width = bottleneck ? widths[s] * config.bottleneck : widths[s];
    for (int i = 0; i < per_stage[s]; ++i) {
      BlockSpec b;
      b.kind = bottleneck ? BlockKind::cRB : BlockKind::rRB;
      b.in_channels = in;
      b.channels = width;
      b.bottleneck = config.bottleneck;
      b.stride = (s > 0 && i == 0) ? 2 : 1;
      if (in == width && b.stride == 1)
        b.shortcut = Shortcut::identity;
      else
        b.shortcut = config.cifar() ? Shortcut::zero_pad_identity : Shortcut::projection;
      if (config.sb.enabled) b = to_sb(b, make_pattern(config.sb.pattern), config.sb.downsample_mode);
      p.blocks.push_back(b);
      p.stage_of_block.push_back(static_cast<int>(s) + 1);
      in = width;
    }
  }
  p.head_channels = in;
  return p;
}

// ---- presets -----------------------------------------------------------------

/// Names: rn{depth} / sbn{depth} (CIFAR regular), crn{depth} / csbn{depth}
/// (CIFAR channel bottleneck), imagenet{18,34,50,101} / sbn-imagenet{...}.
/// A ":<pattern>" suffix selects the sampling pattern of SB presets.
inline NetworkConfig preset(std::string_view name) {
  std::string_view base = name;
  std::string pattern = "2/4";
  if (const auto colon = name.find(':'); colon != std::string_view::npos) {
    base = name.substr(0, colon);
    pattern = std::string(name.substr(colon + 1));
  }
  auto number = [&](std::string_view digits) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty())
      throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
    return v;
  };
  NetworkConfig c;
  bool sb = false;
  auto starts = [&](std::string_view prefix) { return base.substr(0, prefix.size()) == prefix; };
  if (starts("sbn-imagenet")) {
    sb = true;
    c.depth = number(base.substr(12));
    c.family = c.depth >= 50 ? Family::imagenet_bottleneck : Family::imagenet_regular;
    c.num_classes = 1000;
  } else if (starts("imagenet")) {
    c.depth = number(base.substr(8));
    c.family = c.depth >= 50 ? Family::imagenet_bottleneck : Family::imagenet_regular;
    c.num_classes = 1000;
  } else if (starts("csbn")) {
    sb = true;
    c.family = Family::cifar_bottleneck;
    c.depth = number(base.substr(4));
  } else if (starts("crn")) {
    c.family = Family::cifar_bottleneck;
    c.depth = number(base.substr(3));
  } else if (starts("sbn")) {
    sb = true;
    c.depth = number(base.substr(3));
  } else if (starts("rn")) {
    c.depth = number(base.substr(2));
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
  if (sb) c = to_sbn(c, pattern);
  else if (pattern != "2/4") throw std::invalid_argument("pattern suffix on a non-SB preset");
  c.validate();
  return c;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (int d : {20, 44, 62, 86, 110}) names.push_back("rn" + std::to_string(d));
  for (int d : {20, 44, 62, 86, 110}) names.push_back("sbn" + std::to_string(d));
  for (int d : {29, 47, 65, 83, 101}) names.push_back("crn" + std::to_string(d));
  for (int d : {29, 47, 65, 83, 101}) names.push_back("csbn" + std::to_string(d));
  for (int d : {18, 34, 50, 101}) names.push_back("imagenet" + std::to_string(d));
  for (int d : {18, 34, 50, 101}) names.push_back("sbn-imagenet" + std::to_string(d));
  return names;
}

// ---- JSON ----------------------------------------------------------------------

inline nlohmann::json to_json(const NetworkConfig& c) {
  nlohmann::json j;
  j["family"] = to_string(c.family);
  j["depth"] = c.depth;
  j["num_classes"] = c.num_classes;
  j["sb"] = {{"enabled", c.sb.enabled},
             {"pattern", c.sb.pattern},
             {"downsample_mode", to_string(c.sb.downsample_mode)}};
  if (!c.widths.empty()) j["widths"] = c.widths;
  if (c.bottleneck != 4) j["bottleneck"] = c.bottleneck;
  if (c.input_hw != 0) j["input_hw"] = c.input_hw;
  return j;
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  try {
    NetworkConfig c;
    c.family = parse_family(j.at("family").get<std::string>());
    c.depth = j.at("depth").get<int>();
    c.num_classes = j.value("num_classes", c.cifar() ? 10 : 1000);
    if (j.contains("sb")) {
      const auto& sb = j.at("sb");
      c.sb.enabled = sb.value("enabled", false);
      c.sb.pattern = sb.value("pattern", std::string("2/4"));
      c.sb.downsample_mode = parse_downsample_mode(sb.value("downsample_mode", std::string("strided_conv")));
    }
    if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<int>>();
    c.bottleneck = j.value("bottleneck", 4);
    c.input_hw = j.value("input_hw", 0);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

inline NetworkConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// A preset name or a path to a JSON config file.
inline NetworkConfig resolve_config(const std::string& name_or_path) {
  if (name_or_path.find(".json") != std::string::npos) return load_config(name_or_path);
  return preset(name_or_path);
}

}  // namespace sbnet
