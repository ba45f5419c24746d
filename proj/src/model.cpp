#include "spnet/model.hpp"

namespace spnet {
namespace {

using Init = ParamSpec::Init;

std::vector<std::uint32_t> dims_of(std::initializer_list<Index> d) {
  std::vector<std::uint32_t> out;
  for (Index v : d) out.push_back(std::uint32_t(v));
  return out;
}

void add_conv3(std::vector<ParamSpec>& out, const std::string& name, Index cout, Index cin) {
  out.push_back({name + ".w", {cout, cin, 3, 3}, dims_of({cout, cin, 3, 3}), true, Init::he,
                 cin * 9});
  out.push_back({name + ".b", {1, cout, 1, 1}, dims_of({cout}), true, Init::zero, 0});
}

void add_bn(std::vector<ParamSpec>& out, const std::string& name, Index c,
            const std::string& affine_sfx, const std::string& stats_sfx) {
  out.push_back({name + ".gamma" + affine_sfx, {1, c, 1, 1}, dims_of({c}), true, Init::one, 0});
  out.push_back({name + ".beta" + affine_sfx, {1, c, 1, 1}, dims_of({c}), true, Init::zero, 0});
  out.push_back({name + ".mean" + stats_sfx, {1, c, 1, 1}, dims_of({c}), false, Init::zero, 0});
  out.push_back({name + ".var" + stats_sfx, {1, c, 1, 1}, dims_of({c}), false, Init::one, 0});
}

/// One double-convolution site.  `branches` is how many per-branch running
/// statistic sets exist; weights are emitted once when shared, otherwise one
/// full copy per branch.
void add_double_conv(std::vector<ParamSpec>& out, const std::string& prefix, Index cin,
                     Index cout, int branches, bool shared_weights, bool stats_suffixed,
                     bool use_bn) {
  auto sfx = [&](int b) { return stats_suffixed ? ".b" + std::to_string(b) : std::string(); };
  if (shared_weights) {
    add_conv3(out, prefix + ".conv1", cout, cin);
    if (use_bn) {
      out.push_back(
          {prefix + ".bn1.gamma", {1, cout, 1, 1}, dims_of({cout}), true, Init::one, 0});
      out.push_back(
          {prefix + ".bn1.beta", {1, cout, 1, 1}, dims_of({cout}), true, Init::zero, 0});
      for (int b = 0; b < branches; ++b) {
        out.push_back({prefix + ".bn1.mean" + sfx(b), {1, cout, 1, 1}, dims_of({cout}), false,
                       Init::zero, 0});
        out.push_back({prefix + ".bn1.var" + sfx(b), {1, cout, 1, 1}, dims_of({cout}), false,
                       Init::one, 0});
      }
    }
    add_conv3(out, prefix + ".conv2", cout, cout);
    if (use_bn) {
      out.push_back(
          {prefix + ".bn2.gamma", {1, cout, 1, 1}, dims_of({cout}), true, Init::one, 0});
      out.push_back(
          {prefix + ".bn2.beta", {1, cout, 1, 1}, dims_of({cout}), true, Init::zero, 0});
      for (int b = 0; b < branches; ++b) {
        out.push_back({prefix + ".bn2.mean" + sfx(b), {1, cout, 1, 1}, dims_of({cout}), false,
                       Init::zero, 0});
        out.push_back({prefix + ".bn2.var" + sfx(b), {1, cout, 1, 1}, dims_of({cout}), false,
                       Init::one, 0});
      }
    }
  } else {
    for (int b = 0; b < branches; ++b) {
      add_conv3(out, prefix + ".conv1", cout, cin);
      out[out.size() - 2].name += sfx(b);
      out[out.size() - 1].name += sfx(b);
      if (use_bn) add_bn(out, prefix + ".bn1", cout, sfx(b), sfx(b));
      add_conv3(out, prefix + ".conv2", cout, cout);
      out[out.size() - 2].name += sfx(b);
      out[out.size() - 1].name += sfx(b);
      if (use_bn) add_bn(out, prefix + ".bn2", cout, sfx(b), sfx(b));
    }
  }
}

void add_deconv(std::vector<ParamSpec>& out, const std::string& prefix, Index cin, Index cout) {
  out.push_back({prefix + ".w", {cin, cout, 2, 2}, dims_of({cin, cout, 2, 2}), true, Init::he,
                 cin * 4});
  out.push_back({prefix + ".b", {1, cout, 1, 1}, dims_of({cout}), true, Init::zero, 0});
}

void add_head(std::vector<ParamSpec>& out, const std::string& prefix, Index c) {
  out.push_back({prefix + ".w", {1, c, 1, 1}, dims_of({1, c, 1, 1}), true, Init::he, c});
  out.push_back({prefix + ".b", {1, 1, 1, 1}, dims_of({1}), true, Init::zero, 0});
}

}  // namespace

std::vector<ParamSpec> param_specs(const SPNetConfig& config) {
  validate_config(config);
  const int L = config.depth;
  const bool bn = config.use_batchnorm;
  const bool sdm_mode = config.side_output == SideOutputMode::sdm;
  std::vector<ParamSpec> out;

  for (int l = 1; l <= L; ++l) {
    const Index cin = l == 1 ? Index(config.in_channels) : stage_channels(config, l - 1);
    add_double_conv(out, "enc" + std::to_string(l), cin, stage_channels(config, l),
                    /*branches=*/1, /*shared_weights=*/true, /*stats_suffixed=*/false, bn);
  }

  // First decoder stage halves the channels, the skip restores them.
  add_deconv(out, "dec0.up", stage_channels(config, L), stage_channels(config, L - 1));
  add_double_conv(out, "dec0", stage_channels(config, L), stage_channels(config, L - 1), 1, true,
                  false, bn);

  for (int i = 1; i <= L - 2; ++i) {
    const Index din = stage_channels(config, L - i);       // channels of D_i
    const Index dout = stage_channels(config, L - i - 1);  // channels of D_{i+1}
    add_deconv(out, "sdm" + std::to_string(i) + ".up", din, dout);
    const int branches = sdm_mode ? i + 1 : 1;
    const bool shared = config.share_decoder || !sdm_mode;
    add_double_conv(out, "sdm" + std::to_string(i), din, dout, branches, shared, true, bn);
  }

  add_head(out, "head", stage_channels(config, 1));
  if (!sdm_mode)
    for (int k = 1; k <= L - 2; ++k)
      add_head(out, "side" + std::to_string(k), stage_channels(config, k + 1));
  return out;
}

std::int64_t count_parameters(const SPNetConfig& config) {
  std::int64_t n = 0;
  for (const auto& sp : param_specs(config))
    if (sp.learnable) n += std::int64_t(sp.shape[0]) * sp.shape[1] * sp.shape[2] * sp.shape[3];
  return n;
}

}  // namespace spnet
