#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "spnet/ops.hpp"
#include "spnet/rng.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// How the side prediction maps O_1..O_K are produced: through the shared
/// decoder modules, or by one independent 1x1 convolution per decoder scale.
enum class SideOutputMode { sdm, conv1x1 };

struct SPNetConfig {
  int depth = 5;           // encoder stages; the decoder mirrors with depth-1 stages
  int base_channels = 16;  // channels of the first stage, doubled per stage
  int in_channels = 1;
  int pyramid_levels = 3;  // K; constrained to depth - 2
  bool share_decoder = true;
  SideOutputMode side_output = SideOutputMode::sdm;
  bool use_batchnorm = true;
};

inline void validate_config(const SPNetConfig& c) {
  if (c.depth < 3) throw std::invalid_argument("SPNetConfig: depth must be >= 3");
  if (c.base_channels < 1 || c.in_channels < 1)
    throw std::invalid_argument("SPNetConfig: channels must be positive");
  if (c.pyramid_levels != c.depth - 2)
    throw std::invalid_argument("SPNetConfig: pyramid_levels must equal depth - 2");
}

/// Channels produced by encoder stage l (1-based).
inline Index stage_channels(const SPNetConfig& c, int l) {
  return Index(c.base_channels) << (l - 1);
}

struct ParamSpec {
  std::string name;
  std::array<Index, 4> shape;            // stored tensor shape (n, c, h, w)
  std::vector<std::uint32_t> file_dims;  // shape as serialized
  bool learnable = true;
  enum class Init { he, zero, one } init = Init::he;
  Index fan_in = 0;
};

std::vector<ParamSpec> param_specs(const SPNetConfig& config);

/// Learnable scalars only; running statistics are excluded.
std::int64_t count_parameters(const SPNetConfig& config);

/// Named tensors for all weights, biases, normalization affine parameters and
/// running statistics, in a fixed order shared with the checkpoint format.
template <typename S>
class ParameterStore {
 public:
  ParameterStore() = default;

  explicit ParameterStore(const SPNetConfig& config)
      : config_(config), specs_(param_specs(config)) {
    values_.reserve(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& sp = specs_[i];
      values_.emplace_back(sp.shape[0], sp.shape[1], sp.shape[2], sp.shape[3]);
      index_.emplace(sp.name, i);
    }
  }

  const SPNetConfig& config() const { return config_; }
  std::size_t size() const { return specs_.size(); }
  const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
  Tensor<S>& value(std::size_t i) { return values_[i]; }
  const Tensor<S>& value(std::size_t i) const { return values_[i]; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& get(const std::string& name) { return values_[checked_index(name)]; }
  const Tensor<S>& get(const std::string& name) const { return values_[checked_index(name)]; }

  template <typename S2>
  ParameterStore<S2> cast() const {
    ParameterStore<S2> out(config_);
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.value(i).raw() = values_[i].raw().template cast<S2>();
    return out;
  }

 private:
  std::size_t checked_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second;
  }

  SPNetConfig config_;
  std::vector<ParamSpec> specs_;
  std::vector<Tensor<S>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// He-normal initialization of every convolution, zero biases, identity
/// normalization; fully determined by (config, seed).  In the unshared
/// decoder variant every duplicated branch copy draws from the stream of its
/// canonical shared name, so shared and unshared variants coincide at init.
template <typename S>
ParameterStore<S> init_params(const SPNetConfig& config, std::uint64_t seed) {
  validate_config(config);
  ParameterStore<S> store(config);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& sp = store.spec(i);
    auto& t = store.value(i);
    switch (sp.init) {
      case ParamSpec::Init::zero:
        break;
      case ParamSpec::Init::one:
        t.raw().setConstant(S(1));
        break;
      case ParamSpec::Init::he: {
        std::string canon = sp.name;
        const auto pos = canon.rfind(".b");
        if (pos != std::string::npos && pos + 2 < canon.size() &&
            std::isdigit(static_cast<unsigned char>(canon[pos + 2])))
          canon.resize(pos);
        Rng rng(seed, canon);
        const double stddev = std::sqrt(2.0 / double(sp.fan_in));
        for (Index j = 0; j < t.size(); ++j) t.raw()[j] = S(rng.normal(0.0, stddev));
        break;
      }
    }
  }
  return store;
}

enum class RunMode { train, eval };

template <typename S>
struct DoubleConvCache {
  Tensor<S> input;
  Tensor<S> z1;  // first convolution output
  ops::BatchNormCache<S> bn1;
  Tensor<S> r1in;  // first relu input
  Tensor<S> a1;    // first relu output
  Tensor<S> z2;
  ops::BatchNormCache<S> bn2;
  Tensor<S> r2in;
  Tensor<S> out;
};

template <typename S>
struct ForwardCache {
  RunMode mode = RunMode::eval;
  std::vector<DoubleConvCache<S>> enc;       // depth entries
  std::vector<ops::MaxPoolResult<S>> pools;  // depth-1 entries
  Tensor<S> dec0_up_out;
  DoubleConvCache<S> dec0;
  struct SdmCache {
    Tensor<S> up_out;
    std::vector<DoubleConvCache<S>> branch;  // branch 0 = decoder path, then residual branches
  };
  std::vector<SdmCache> sdm;  // depth-2 entries
  struct HeadCache {
    Tensor<S> input;
    Tensor<S> out;  // sigmoid output
  };
  std::vector<HeadCache> heads;  // shared 1x1 head applications, O_0 first
  std::vector<HeadCache> sides;  // per-scale 1x1 heads (conv1x1 mode), O_1..O_K
};

namespace detail {

/// Name resolution for one double-convolution site.  Weight names carry a
/// branch suffix only when the decoder is unshared; running statistics always
/// do inside the decoder modules, because every branch tracks its own
/// activation distribution.
struct SiteNames {
  std::string prefix;
  std::string weight_suffix;
  std::string stats_suffix;
  std::string w(const std::string& leaf) const { return prefix + "." + leaf + weight_suffix; }
  std::string s(const std::string& leaf) const { return prefix + "." + leaf + stats_suffix; }
};

inline SiteNames enc_site(int l) { return {"enc" + std::to_string(l), "", ""}; }
inline SiteNames dec0_site() { return {"dec0", "", ""}; }

inline SiteNames sdm_site(const SPNetConfig& cfg, int i, int branch) {
  const std::string b = ".b" + std::to_string(branch);
  const bool shared_weights = cfg.share_decoder || cfg.side_output == SideOutputMode::conv1x1;
  return {"sdm" + std::to_string(i), shared_weights ? "" : b, b};
}

template <typename S>
Tensor<S> double_conv_forward(ParameterStore<S>& p, const SiteNames& nm, const Tensor<S>& x,
                              RunMode mode, DoubleConvCache<S>* c) {
  const bool bn = p.config().use_batchnorm;
  const bool train = mode == RunMode::train;

  Tensor<S> z1 = ops::conv2d(x, p.get(nm.w("conv1.w")), p.get(nm.w("conv1.b")), 1);
  Tensor<S> r1in = bn ? ops::batchnorm(z1, p.get(nm.w("bn1.gamma")), p.get(nm.w("bn1.beta")),
                                       p.get(nm.s("bn1.mean")), p.get(nm.s("bn1.var")), train,
                                       0.1, 1e-5, c ? &c->bn1 : nullptr)
                      : z1;
  Tensor<S> a1 = ops::relu(r1in);
  Tensor<S> z2 = ops::conv2d(a1, p.get(nm.w("conv2.w")), p.get(nm.w("conv2.b")), 1);
  Tensor<S> r2in = bn ? ops::batchnorm(z2, p.get(nm.w("bn2.gamma")), p.get(nm.w("bn2.beta")),
                                       p.get(nm.s("bn2.mean")), p.get(nm.s("bn2.var")), train,
                                       0.1, 1e-5, c ? &c->bn2 : nullptr)
                      : z2;
  Tensor<S> out = ops::relu(r2in);
  if (c) {
    c->input = x;
    c->z1 = std::move(z1);
    c->r1in = std::move(r1in);
    c->a1 = std::move(a1);
    c->z2 = std::move(z2);
    c->r2in = std::move(r2in);
    c->out = out;
  }
  return out;
}

template <typename S>
Tensor<S> double_conv_backward(const ParameterStore<S>& p, const SiteNames& nm,
                               const DoubleConvCache<S>& c, const Tensor<S>& grad_out,
                               ParameterStore<S>& grads) {
  const bool bn = p.config().use_batchnorm;
  Tensor<S> g = ops::relu_adjoint(c.r2in, grad_out);
  if (bn) {
    auto bg = ops::batchnorm_adjoint(c.bn2, p.get(nm.w("bn2.gamma")), g);
    grads.get(nm.w("bn2.gamma")).raw() += bg.gamma.raw();
    grads.get(nm.w("bn2.beta")).raw() += bg.beta.raw();
    g = std::move(bg.input);
  }
  auto c2 = ops::conv2d_adjoint(c.a1, p.get(nm.w("conv2.w")), g, 1);
  grads.get(nm.w("conv2.w")).raw() += c2.weights.raw();
  grads.get(nm.w("conv2.b")).raw() += c2.bias.raw();
  g = ops::relu_adjoint(c.r1in, c2.input);
  if (bn) {
    auto bg = ops::batchnorm_adjoint(c.bn1, p.get(nm.w("bn1.gamma")), g);
    grads.get(nm.w("bn1.gamma")).raw() += bg.gamma.raw();
    grads.get(nm.w("bn1.beta")).raw() += bg.beta.raw();
    g = std::move(bg.input);
  }
  auto c1 = ops::conv2d_adjoint(c.input, p.get(nm.w("conv1.w")), g, 1);
  grads.get(nm.w("conv1.w")).raw() += c1.weights.raw();
  grads.get(nm.w("conv1.b")).raw() += c1.bias.raw();
  return std::move(c1.input);
}

template <typename S>
Tensor<S> head_apply(const ParameterStore<S>& p, const std::string& prefix, const Tensor<S>& x,
                     typename ForwardCache<S>::HeadCache* c) {
  Tensor<S> z = ops::conv2d(x, p.get(prefix + ".w"), p.get(prefix + ".b"), 0);
  Tensor<S> out = ops::sigmoid(z);
  if (c) {
    c->input = x;
    c->out = out;
  }
  return out;
}

template <typename S>
Tensor<S> head_backward(const ParameterStore<S>& p, const std::string& prefix,
                        const typename ForwardCache<S>::HeadCache& c, const Tensor<S>& grad_out,
                        ParameterStore<S>& grads) {
  Tensor<S> gz = ops::sigmoid_adjoint(c.out, grad_out);
  auto cg = ops::conv2d_adjoint(c.input, p.get(prefix + ".w"), gz, 0);
  grads.get(prefix + ".w").raw() += cg.weights.raw();
  grads.get(prefix + ".b").raw() += cg.bias.raw();
  return std::move(cg.input);
}

}  // namespace detail

/// Runs the network on a batch of (n, in_channels, h, w) inputs; h and w must
/// be divisible by 2^(depth-1).  Returns the prediction maps O_0..O_K, where
/// O_k has spatial size (h/2^k, w/2^k).  Training mode updates the running
/// normalization statistics in place.
template <typename S>
std::vector<Tensor<S>> forward(ParameterStore<S>& p, const Tensor<S>& input, RunMode mode,
                               ForwardCache<S>* cache = nullptr) {
  const SPNetConfig& cfg = p.config();
  validate_config(cfg);
  const int L = cfg.depth;
  if (input.channels() != cfg.in_channels)
    throw std::invalid_argument("forward: wrong input channel count");
  const Index div = Index(1) << (L - 1);
  if (input.height() == 0 || input.height() % div || input.width() % div)
    throw std::invalid_argument("forward: spatial size must be divisible by 2^(depth-1)");

  if (cache) {
    cache->mode = mode;
    cache->enc.resize(L);
    cache->pools.clear();
    cache->pools.reserve(L - 1);
    cache->sdm.assign(L - 2, {});
    cache->heads.clear();
    cache->sides.clear();
  }

  // Encoder.
  std::vector<Tensor<S>> E(L);
  for (int l = 1; l <= L; ++l) {
    Tensor<S> x;
    if (l == 1) {
      x = input;
    } else {
      auto pooled = ops::maxpool2x2(E[l - 2]);
      x = pooled.output;
      if (cache) cache->pools.push_back(std::move(pooled));
    }
    E[l - 1] = detail::double_conv_forward(p, detail::enc_site(l), x, mode,
                                           cache ? &cache->enc[l - 1] : nullptr);
  }

  // First decoder stage: upsample the deepest features, merge the skip.
  Tensor<S> up = ops::deconv2x2(E[L - 1], p.get("dec0.up.w"), p.get("dec0.up.b"));
  if (cache) cache->dec0_up_out = up;
  Tensor<S> d = detail::double_conv_forward(p, detail::dec0_site(),
                                            ops::concat_channels(up, E[L - 2]), mode,
                                            cache ? &cache->dec0 : nullptr);

  const bool sdm_mode = cfg.side_output == SideOutputMode::sdm;
  std::vector<Tensor<S>> F;      // residual branch features of the current stage
  std::vector<Tensor<S>> dpath;  // D_1..D_{L-1}, kept for per-scale side heads
  dpath.push_back(d);

  for (int i = 1; i <= L - 2; ++i) {
    auto* sc = cache ? &cache->sdm[i - 1] : nullptr;
    const std::string si = "sdm" + std::to_string(i);

    std::vector<Tensor<S>> inputs;  // branch inputs: current D, then residual features
    inputs.push_back(d);
    for (auto& f : F) inputs.push_back(std::move(f));
    if (sc) sc->branch.resize(sdm_mode ? inputs.size() + 1 : 1);

    Tensor<S> u = ops::deconv2x2(d, p.get(si + ".up.w"), p.get(si + ".up.b"));
    if (sc) sc->up_out = u;
    d = detail::double_conv_forward(p, detail::sdm_site(cfg, i, 0),
                                    ops::concat_channels(u, E[L - i - 2]), mode,
                                    sc ? &sc->branch[0] : nullptr);
    dpath.push_back(d);

    F.clear();
    if (sdm_mode) {
      for (std::size_t j = 0; j < inputs.size(); ++j)
        F.push_back(detail::double_conv_forward(p, detail::sdm_site(cfg, i, int(j) + 1),
                                                inputs[j], mode,
                                                sc ? &sc->branch[j + 1] : nullptr));
    }
  }

  // Prediction heads.
  std::vector<Tensor<S>> outputs;
  outputs.reserve(L - 1);
  if (cache) cache->heads.resize(sdm_mode ? L - 1 : 1);
  outputs.push_back(detail::head_apply(p, "head", d, cache ? &cache->heads[0] : nullptr));
  if (sdm_mode) {
    for (int j = 1; j <= L - 2; ++j)
      outputs.push_back(
          detail::head_apply(p, "head", F[j - 1], cache ? &cache->heads[j] : nullptr));
  } else {
    if (cache) cache->sides.resize(L - 2);
    for (int k = 1; k <= L - 2; ++k)
      outputs.push_back(detail::head_apply(p, "side" + std::to_string(k), dpath[L - 2 - k],
                                           cache ? &cache->sides[k - 1] : nullptr));
  }
  return outputs;
}

/// Pure inference overload; running statistics are read, never written.
template <typename S>
std::vector<Tensor<S>> forward(const ParameterStore<S>& p, const Tensor<S>& input,
                               ForwardCache<S>* cache = nullptr) {
  return forward(const_cast<ParameterStore<S>&>(p), input, RunMode::eval, cache);
}

/// Hand-written reverse pass.  grad_outputs holds dLoss/dO_k for every
/// prediction map; the returned store carries dLoss/dParameter for all
/// learnable entries, with shared tensors accumulating over every branch that
/// applied them.
template <typename S>
ParameterStore<S> backward(const ParameterStore<S>& p, const ForwardCache<S>& cache,
                           const std::vector<Tensor<S>>& grad_outputs) {
  const SPNetConfig& cfg = p.config();
  const int L = cfg.depth;
  const bool sdm_mode = cfg.side_output == SideOutputMode::sdm;
  if (grad_outputs.size() != std::size_t(L - 1))
    throw std::invalid_argument("backward: expected one gradient per prediction map");

  ParameterStore<S> grads(cfg);

  // Heads.
  Tensor<S> gD = detail::head_backward(p, "head", cache.heads[0], grad_outputs[0], grads);
  std::vector<Tensor<S>> gF;             // gradients on the residual features, innermost stage
  std::vector<Tensor<S>> gDpath(L - 1);  // conv1x1 mode: direct side-output gradients
  if (sdm_mode) {
    for (int j = 1; j <= L - 2; ++j)
      gF.push_back(detail::head_backward(p, "head", cache.heads[j], grad_outputs[j], grads));
  } else {
    for (int k = 1; k <= L - 2; ++k)
      gDpath[L - 2 - k] = detail::head_backward(p, "side" + std::to_string(k),
                                                cache.sides[k - 1], grad_outputs[k], grads);
  }

  // Decoder stages in reverse.
  std::vector<Tensor<S>> gSkip(L);  // gradient flowing into each encoder stage output
  for (int i = L - 2; i >= 1; --i) {
    const auto& sc = cache.sdm[i - 1];
    const std::string si = "sdm" + std::to_string(i);

    if (!sdm_mode && gDpath[i].size() > 0) gD.raw() += gDpath[i].raw();

    // Residual branches: branch j consumed inputs[j-1], which is D_i for j=1
    // and the previous stage's residual feature j-2 otherwise.  gD still holds
    // the gradient of D_{i+1} here, so contributions to D_i collect separately.
    Tensor<S> gD_in;
    std::vector<Tensor<S>> gF_prev(sc.branch.size() >= 2 ? sc.branch.size() - 2 : 0);
    if (sdm_mode) {
      for (std::size_t j = sc.branch.size() - 1; j >= 1; --j) {
        Tensor<S> gin = detail::double_conv_backward(p, detail::sdm_site(cfg, i, int(j)),
                                                     sc.branch[j], gF[j - 1], grads);
        if (j == 1)
          gD_in = std::move(gin);
        else
          gF_prev[j - 2] = std::move(gin);
      }
    }

    // Decoder path: double conv, split the concatenation, then the deconv.
    Tensor<S> gmerged =
        detail::double_conv_backward(p, detail::sdm_site(cfg, i, 0), sc.branch[0], gD, grads);
    auto [gup, gskip] = ops::split_channels(gmerged, sc.up_out.channels());
    gSkip[L - i - 2] = std::move(gskip);
    auto dg = ops::deconv2x2_adjoint(i >= 2 ? cache.sdm[i - 2].branch[0].out : cache.dec0.out,
                                     p.get(si + ".up.w"), gup);
    grads.get(si + ".up.w").raw() += dg.weights.raw();
    grads.get(si + ".up.b").raw() += dg.bias.raw();
    gD = std::move(dg.input);
    if (gD_in.size() > 0) gD.raw() += gD_in.raw();
    gF = std::move(gF_prev);
  }
  if (!sdm_mode && gDpath[0].size() > 0) gD.raw() += gDpath[0].raw();

  // First decoder stage.
  Tensor<S> gmerged = detail::double_conv_backward(p, detail::dec0_site(), cache.dec0, gD, grads);
  auto [gup, gskip] = ops::split_channels(gmerged, cache.dec0_up_out.channels());
  gSkip[L - 2] = std::move(gskip);
  auto dg = ops::deconv2x2_adjoint(cache.enc[L - 1].out, p.get("dec0.up.w"), gup);
  grads.get("dec0.up.w").raw() += dg.weights.raw();
  grads.get("dec0.up.b").raw() += dg.bias.raw();
  Tensor<S> gE = std::move(dg.input);  // gradient on the deepest encoder output

  // Encoder in reverse.
  for (int l = L; l >= 1; --l) {
    if (l <= L - 1) gE.raw() += gSkip[l - 1].raw();
    Tensor<S> gx =
        detail::double_conv_backward(p, detail::enc_site(l), cache.enc[l - 1], gE, grads);
    if (l >= 2) gE = ops::maxpool2x2_adjoint(cache.pools[l - 2], gx);
  }
  return grads;
}

// Checkpoint serialization (32-bit payloads, little endian).
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& store);
ParameterStore<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace spnet
