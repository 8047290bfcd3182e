#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rtsmono/camera.hpp"
#include "rtsmono/nn.hpp"

namespace rtsmono {

enum class Variant {
  XS,
  S,
  Desk,  // width-reduced, sized for single-core desk-scale training runs
  Test,  // smallest preset, used by gradient checks
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct EncoderSpec {
  std::array<std::int64_t, 4> channels{48, 48, 80, 128};  // F0..F3
  std::array<int, 3> depths{4, 4, 7};                       // blocks in stages 1..3
  int expansion = 6;                                        // point-wise expansion ratio
  int context_ratio = 2;                                    // hidden width of the global-context MLP
};

struct DecoderSpec {
  std::int64_t f1_channels = 48;  // Conv3x3(F1)
  std::int64_t f2_channels = 80;  // Conv3x3(F2)
  std::int64_t att_deep = 64;     // ATT(F2', F3)
  std::int64_t att_final = 32;    // ATT(Conv3x3(F1''), F2'')
  std::int64_t upconv = 16;       // Upconv before the disparity head
  int se_ratio = 16;
  int se_min = 4;
};

struct ModelConfig {
  Variant variant = Variant::S;
  double dmin = 0.1;
  double dmax = 100.0;
  int width = 640;
  int height = 192;
  EncoderSpec encoder;
  DecoderSpec decoder;

  static ModelConfig preset(Variant v, int width = 640, int height = 192);
  void validate() const;
};

template <typename T>
struct FeaturePyramid {
  Var<T> f0;  // [N, C1, H/4,  W/4]
  Var<T> f1;  // [N, C2, H/4,  W/4]
  Var<T> f2;  // [N, C3, H/8,  W/8]
  Var<T> f3;  // [N, C4, H/16, W/16]
};

/// Residual block: dilated depth-wise 3x3, point-wise expansion, GELU, projection, layer scale.
template <typename T>
struct DilatedBlock {
  Conv2d<T> depthwise;
  Conv2d<T> expand;
  Conv2d<T> project;
  Var<T> layer_scale;  // [1, C, 1, 1]

  static DilatedBlock create(ParameterList<T>& params, const std::string& name, std::int64_t channels,
                             int dilation, int expansion, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
};

/// Spatial mean -> MLP -> per-channel gate in (0, 2).
template <typename T>
struct GlobalContext {
  Conv2d<T> fc1;
  Conv2d<T> fc2;

  static GlobalContext create(ParameterList<T>& params, const std::string& name, std::int64_t channels,
                              int ratio, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
};

/// Upsample high, concatenate with low, point-wise projection.
template <typename T>
struct FusionBlock {
  Conv2d<T> proj;

  static FusionBlock create(ParameterList<T>& params, const std::string& name, std::int64_t low_channels,
                            std::int64_t high_channels, std::int64_t out_channels, Rng& rng);
  Var<T> operator()(const Var<T>& low, const Var<T>& high) const;
};

/// Fusion squeeze-and-excitation: upsample, concatenate, channel gate, point-wise projection.
template <typename T>
struct AttBlock {
  Conv2d<T> reduce;
  Conv2d<T> expand;
  Conv2d<T> proj;

  static std::int64_t reduced_channels(std::int64_t channels, int ratio, int min_channels);
  static AttBlock create(ParameterList<T>& params, const std::string& name, std::int64_t low_channels,
                         std::int64_t high_channels, std::int64_t out_channels, int se_ratio, int se_min,
                         Rng& rng);
  /// Channel gate in (0, 1) for the concatenated input; exposed for inspection.
  Var<T> gate(const Var<T>& fused) const;
  Var<T> operator()(const Var<T>& low, const Var<T>& high) const;
};

template <typename T>
class DepthNet {
 public:
  DepthNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterList<T>& parameters() { return params_; }
  const ParameterList<T>& parameters() const { return params_; }

  FeaturePyramid<T> encode(const Var<T>& image) const;
  /// Disparity [N, 1, H, W] in (0, 1) at the resolution of the encoded image.
  Var<T> decode(const FeaturePyramid<T>& pyramid) const;
  Var<T> forward(const Var<T>& image) const { return decode(encode(image)); }

  std::int64_t encoder_parameter_count() const { return params_.count("depth/encoder/"); }
  std::int64_t decoder_parameter_count() const { return params_.count("depth/decoder/"); }

  // Exposed for tests.
  const FusionBlock<T>& fusion_block() const { return fusion_; }
  const AttBlock<T>& att_deep() const { return att_deep_; }
  const AttBlock<T>& att_final() const { return att_final_; }
  const Conv2d<T>& disp_conv() const { return disp_conv_; }

 private:
  ModelConfig cfg_;
  ParameterList<T> params_;

  Conv2d<T> stem1_, stem2_;
  std::array<std::vector<DilatedBlock<T>>, 3> stages_;
  std::array<GlobalContext<T>, 3> context_;
  Conv2d<T> down2_, down3_;

  Conv2d<T> conv_f1_, conv_f2_, conv_mid_;
  FusionBlock<T> fusion_;
  AttBlock<T> att_deep_, att_final_;
  Conv2d<T> upconv_, disp_conv_;
};

/// depth = 1 / (1/dmax + (1/dmin - 1/dmax) * disp)
template <typename T>
Var<T> disp_to_depth(const Var<T>& disp, double dmin, double dmax);
double disp_to_depth(double disp, double dmin, double dmax);

}  // namespace rtsmono
