#include "rtsmono/depth_net.hpp"

#include <algorithm>
#include <stdexcept>

namespace rtsmono {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::XS: return "XS";
    case Variant::S: return "S";
    case Variant::Desk: return "desk";
    case Variant::Test: return "test";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "xs") return Variant::XS;
  if (l == "s") return Variant::S;
  if (l == "desk") return Variant::Desk;
  if (l == "test") return Variant::Test;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected XS, S, desk or test)");
}

ModelConfig ModelConfig::preset(Variant v, int width, int height) {
  ModelConfig c;
  c.variant = v;
  c.width = width;
  c.height = height;
  switch (v) {
    case Variant::S:
      c.encoder = {{48, 48, 80, 128}, {4, 4, 7}, 8, 2};
      break;
    case Variant::XS:
      c.encoder = {{48, 48, 80, 128}, {3, 3, 6}, 8, 2};
      break;
    case Variant::Desk:
      c.encoder = {{16, 16, 24, 32}, {1, 1, 2}, 2, 1};
      c.decoder = {16, 16, 16, 16, 8, 16, 4};
      break;
    case Variant::Test:
      c.encoder = {{4, 4, 6, 8}, {1, 1, 1}, 2, 1};
      c.decoder = {4, 4, 4, 4, 4, 16, 2};
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  if (!(dmin > 0) || !(dmin < dmax)) throw std::invalid_argument("model config: need 0 < dmin < dmax");
  if (width < 16 || height < 16 || width % 16 != 0 || height % 16 != 0) {
    throw std::invalid_argument("model config: resolution " + std::to_string(width) + "x" + std::to_string(height) +
                                " must be divisible by 16");
  }
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
DilatedBlock<T> DilatedBlock<T>::create(ParameterList<T>& params, const std::string& name, std::int64_t channels,
                                        int dilation, int expansion, Rng& rng) {
  DilatedBlock b;
  b.depthwise = Conv2d<T>::create(params, name + ".dw", ConvSpec::square(channels, channels, 3, 1, dilation, channels), rng);
  b.expand = Conv2d<T>::create(params, name + ".pw1", ConvSpec::square(channels, channels * expansion, 1), rng);
  b.project = Conv2d<T>::create(params, name + ".pw2", ConvSpec::square(channels * expansion, channels, 1), rng);
  b.layer_scale = params.add(name + ".scale", Tensor<T>({1, channels, 1, 1}, T(0.1)));
  return b;
}

template <typename T>
Var<T> DilatedBlock<T>::operator()(const Var<T>& x) const {
  return x + project(gelu(expand(depthwise(x)))) * layer_scale;
}

template <typename T>
GlobalContext<T> GlobalContext<T>::create(ParameterList<T>& params, const std::string& name, std::int64_t channels,
                                          int ratio, Rng& rng) {
  GlobalContext g;
  g.fc1 = Conv2d<T>::create(params, name + ".fc1", ConvSpec::square(channels, channels * ratio, 1), rng);
  g.fc2 = Conv2d<T>::create(params, name + ".fc2", ConvSpec::square(channels * ratio, channels, 1), rng);
  return g;
}

template <typename T>
Var<T> GlobalContext<T>::operator()(const Var<T>& x) const {
  const Var<T> pooled = mean_dims(x, {2, 3});
  return x * (tanh(fc2(gelu(fc1(pooled)))) + T(1));
}

namespace {
template <typename T>
void require_half_size(const Var<T>& low, const Var<T>& high, const char* block) {
  if (low.rank() != 4 || high.rank() != 4 || low.dim(0) != high.dim(0) || low.dim(2) != 2 * high.dim(2) ||
      low.dim(3) != 2 * high.dim(3)) {
    throw ShapeError(std::string(block) + ": high-level input " + shape_string(high.shape()) +
                     " must be half the spatial size of low-level input " + shape_string(low.shape()));
  }
}
}  // namespace

template <typename T>
FusionBlock<T> FusionBlock<T>::create(ParameterList<T>& params, const std::string& name, std::int64_t low_channels,
                                      std::int64_t high_channels, std::int64_t out_channels, Rng& rng) {
  return {Conv2d<T>::create(params, name + ".proj", ConvSpec::square(low_channels + high_channels, out_channels, 1), rng)};
}

template <typename T>
Var<T> FusionBlock<T>::operator()(const Var<T>& low, const Var<T>& high) const {
  require_half_size(low, high, "fusion block");
  return proj(concat<T>({low, upsample2x(high)}, 1));
}

template <typename T>
std::int64_t AttBlock<T>::reduced_channels(std::int64_t channels, int ratio, int min_channels) {
  return std::max<std::int64_t>(channels / ratio, min_channels);
}

template <typename T>
AttBlock<T> AttBlock<T>::create(ParameterList<T>& params, const std::string& name, std::int64_t low_channels,
                                std::int64_t high_channels, std::int64_t out_channels, int se_ratio, int se_min,
                                Rng& rng) {
  const std::int64_t c = low_channels + high_channels;
  const std::int64_t r = reduced_channels(c, se_ratio, se_min);
  AttBlock a;
  a.reduce = Conv2d<T>::create(params, name + ".se_reduce", ConvSpec::square(c, r, 1), rng);
  a.expand = Conv2d<T>::create(params, name + ".se_expand", ConvSpec::square(r, c, 1), rng);
  a.proj = Conv2d<T>::create(params, name + ".proj", ConvSpec::square(c, out_channels, 1), rng);
  return a;
}

template <typename T>
Var<T> AttBlock<T>::gate(const Var<T>& fused) const {
  return sigmoid(expand(relu(reduce(mean_dims(fused, {2, 3})))));
}

template <typename T>
Var<T> AttBlock<T>::operator()(const Var<T>& low, const Var<T>& high) const {
  require_half_size(low, high, "ATT block");
  const Var<T> fused = concat<T>({low, upsample2x(high)}, 1);
  return proj(fused * gate(fused));
}

// ---------------------------------------------------------------------------
// DepthNet

template <typename T>
DepthNet<T>::DepthNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto& e = cfg_.encoder;
  const auto& d = cfg_.decoder;
  const auto& ch = e.channels;
  auto& p = params_;
  const std::string enc = "depth/encoder/";
  const std::string dec = "depth/decoder/";

  stem1_ = Conv2d<T>::create(p, enc + "stem1", ConvSpec::square(3, ch[0], 3, 2), rng);
  stem2_ = Conv2d<T>::create(p, enc + "stem2", ConvSpec::square(ch[0], ch[0], 3, 2), rng);
  if (ch[1] != ch[0]) {
    throw std::invalid_argument("model config: stage-1 width must equal stem width (both at H/4)");
  }
  down2_ = Conv2d<T>::create(p, enc + "down2", ConvSpec::square(ch[1], ch[2], 3, 2), rng);
  down3_ = Conv2d<T>::create(p, enc + "down3", ConvSpec::square(ch[2], ch[3], 3, 2), rng);
  for (int s = 0; s < 3; ++s) {
    const std::int64_t c = ch[s + 1];
    for (int b = 0; b < e.depths[s]; ++b) {
      const std::string name = enc + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      stages_[s].push_back(DilatedBlock<T>::create(p, name, c, 1 + b % 3, e.expansion, rng));
    }
    context_[s] = GlobalContext<T>::create(p, enc + "stage" + std::to_string(s + 1) + ".context", c,
                                           e.context_ratio, rng);
  }

  conv_f1_ = Conv2d<T>::create(p, dec + "conv_f1", ConvSpec::square(ch[1], d.f1_channels, 3), rng);
  conv_f2_ = Conv2d<T>::create(p, dec + "conv_f2", ConvSpec::square(ch[2], d.f2_channels, 3), rng);
  att_deep_ = AttBlock<T>::create(p, dec + "att_deep", d.f2_channels, ch[3], d.att_deep, d.se_ratio, d.se_min, rng);
  fusion_ = FusionBlock<T>::create(p, dec + "fusion", d.f1_channels, d.f2_channels, d.f1_channels, rng);
  conv_mid_ = Conv2d<T>::create(p, dec + "conv_mid", ConvSpec::square(d.f1_channels, d.f1_channels, 3), rng);
  att_final_ = AttBlock<T>::create(p, dec + "att_final", d.f1_channels, d.att_deep, d.att_final, d.se_ratio,
                                   d.se_min, rng);
  upconv_ = Conv2d<T>::create(p, dec + "upconv", ConvSpec::square(ch[0] + d.att_final, d.upconv, 3), rng);
  disp_conv_ = Conv2d<T>::create(p, dec + "disp", ConvSpec::square(d.upconv, 1, 3), rng);
}

template <typename T>
FeaturePyramid<T> DepthNet<T>::encode(const Var<T>& image) const {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("encode: image must be [N,3,H,W], got " + shape_string(image.shape()));
  }
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("encode: image height and width must be divisible by 16, got " +
                     std::to_string(image.dim(3)) + "x" + std::to_string(image.dim(2)));
  }
  FeaturePyramid<T> f;
  f.f0 = gelu(stem2_(gelu(stem1_(image))));
  Var<T> x = f.f0;
  for (const auto& b : stages_[0]) x = b(x);
  f.f1 = context_[0](x);
  x = gelu(down2_(f.f1));
  for (const auto& b : stages_[1]) x = b(x);
  f.f2 = context_[1](x);
  x = gelu(down3_(f.f2));
  for (const auto& b : stages_[2]) x = b(x);
  f.f3 = context_[2](x);
  return f;
}

template <typename T>
Var<T> DepthNet<T>::decode(const FeaturePyramid<T>& pyr) const {
  const std::int64_t h = pyr.f0.dim(2) * 4;
  const std::int64_t w = pyr.f0.dim(3) * 4;
  const Var<T> f1p = elu(conv_f1_(pyr.f1));
  const Var<T> f2p = elu(conv_f2_(pyr.f2));
  const Var<T> f2pp = elu(att_deep_(f2p, pyr.f3));
  const Var<T> f1pp = elu(fusion_(f1p, f2p));
  const Var<T> f = elu(att_final_(elu(conv_mid_(f1pp)), f2pp));
  // F is already at the resolution of F0 (H/4), so it joins F0 directly.
  const Var<T> x = elu(upconv_(concat<T>({pyr.f0, f}, 1)));
  return sigmoid(resize_bilinear(disp_conv_(x), h, w));
}

template <typename T>
Var<T> disp_to_depth(const Var<T>& disp, double dmin, double dmax) {
  const double lo = 1.0 / dmax;
  const double span = 1.0 / dmin - 1.0 / dmax;
  return T(1) / (disp * static_cast<T>(span) + static_cast<T>(lo));
}

double disp_to_depth(double disp, double dmin, double dmax) {
  const double lo = 1.0 / dmax;
  return 1.0 / (lo + (1.0 / dmin - lo) * disp);
}

template struct DilatedBlock<float>;
template struct DilatedBlock<double>;
template struct GlobalContext<float>;
template struct GlobalContext<double>;
template struct FusionBlock<float>;
template struct FusionBlock<double>;
template struct AttBlock<float>;
template struct AttBlock<double>;
template class DepthNet<float>;
template class DepthNet<double>;
template Var<float> disp_to_depth<float>(const Var<float>&, double, double);
template Var<double> disp_to_depth<double>(const Var<double>&, double, double);

}  // namespace rtsmono
