#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cimnet/autograd.hpp"
#include "cimnet/cim_conv.hpp"
#include "cimnet/tensor.hpp"

namespace cimnet {

enum class LayerKind { conv, cimconv, pixelshuffle, relu, add_skip_marker };
enum class SkipRole { source, sink };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One entry of a declarative layer list. Input channel counts are not
/// stored; they are inferred when the graph is built.
struct LayerSpec {
  std::string id;
  // Grouping tag used for structural comparisons between presets.
  std::string module;
  LayerKind kind = LayerKind::relu;

  std::size_t kernel = 3;   // conv
  std::size_t stride = 1;   // conv, cimconv
  std::size_t padding = 1;  // conv
  std::size_t c_out = 0;    // conv, cimconv
  Rational f_scale{1};      // cimconv
  Activation activation = Activation::relu;  // cimconv
  std::size_t factor = 1;   // pixelshuffle
  std::string skip_id;      // add_skip_marker
  SkipRole role = SkipRole::source;

  bool has_params() const noexcept {
    return kind == LayerKind::conv || kind == LayerKind::cimconv;
  }
  bool operator==(const LayerSpec&) const = default;
};

LayerSpec conv_layer(std::string id, std::string module, std::size_t kernel, std::size_t stride,
                     std::size_t padding, std::size_t c_out);
LayerSpec cimconv_layer(std::string id, std::string module, std::size_t stride, std::size_t c_out,
                        Rational f_scale, Activation act = Activation::relu);
LayerSpec relu_layer(std::string id, std::string module);
LayerSpec pixelshuffle_layer(std::string id, std::string module, std::size_t factor);
LayerSpec skip_marker(std::string id, std::string module, std::string skip_id, SkipRole role);

struct ModelConfig {
  std::string name;
  std::size_t channels = 3;
  std::size_t height = 96;
  std::size_t width = 96;
  std::vector<LayerSpec> layers;

  bool operator==(const ModelConfig&) const = default;
};

// Shape-checked view of one layer. `in` and `out` are [C, H, W].
struct LayerPlan {
  LayerSpec spec;
  Shape in;
  Shape out;
  std::optional<CimConvSpec> cim;  // set for cimconv layers
  Shape weight_shape;              // empty when the layer has no parameters
  Shape bias_shape;
  std::size_t windows = 0;         // sliding windows (0 for permutation/elementwise layers)
  std::size_t mvm_rows = 0;        // flattened window length K
  std::size_t mvm_cols = 0;        // outputs per window
};

/// A validated, immutable layer graph for a fixed input size.
class ModelGraph {
 public:
  // Throws ConfigError naming the offending layer when shapes do not chain,
  // or when the output is not a 3-channel image of the input size.
  static ModelGraph build(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::string& name() const noexcept { return config_.name; }
  const std::vector<LayerPlan>& layers() const noexcept { return layers_; }
  Shape input_shape() const { return {config_.channels, config_.height, config_.width}; }
  Shape output_shape() const { return layers_.empty() ? input_shape() : layers_.back().out; }

 private:
  ModelConfig config_;
  std::vector<LayerPlan> layers_;
};

ModelConfig with_input_size(ModelConfig config, std::size_t height, std::size_t width);

struct Widths {
  std::size_t c1 = 32;
  std::size_t c2 = 64;
  std::size_t c3 = 128;
};

struct PresetOptions {
  Widths widths;
  std::size_t in_channels = 3;
  // Adds one input channel holding the noise level (see append_noise_map).
  bool noise_map = false;
  std::size_t input_channels() const noexcept { return in_channels + (noise_map ? 1 : 0); }
  bool skips = false;  // encoder-decoder additions (CIM-NET only)
};

ModelConfig fastdvd_block_config(std::size_t h, std::size_t w, const PresetOptions& opts = {});
ModelConfig baseline_o1_config(std::size_t stride, std::size_t h, std::size_t w,
                               const PresetOptions& opts = {});
ModelConfig baseline_o2_config(std::size_t stride, std::size_t h, std::size_t w,
                               const PresetOptions& opts = {});
ModelConfig abla_net_config(std::size_t stride, std::size_t h, std::size_t w,
                            const PresetOptions& opts = {});
ModelConfig cim_net_config(std::size_t stride, std::size_t h, std::size_t w,
                           const PresetOptions& opts = {});

ModelGraph build_fastdvd_block(std::size_t h, std::size_t w, const PresetOptions& opts = {});
ModelGraph build_baseline_o1(std::size_t stride, std::size_t h, std::size_t w,
                             const PresetOptions& opts = {});
ModelGraph build_baseline_o2(std::size_t stride, std::size_t h, std::size_t w,
                             const PresetOptions& opts = {});
ModelGraph build_abla_net(std::size_t stride, std::size_t h, std::size_t w,
                          const PresetOptions& opts = {});
ModelGraph build_cim_net(std::size_t stride, std::size_t h, std::size_t w,
                         const PresetOptions& opts = {});

// Parameters keyed "<layer id>.weight" / "<layer id>.bias".
template <typename T>
using ParamStoreT = std::map<std::string, TensorT<T>>;
using ParamStore = ParamStoreT<float>;

std::string weight_key(const LayerSpec& layer);
std::string bias_key(const LayerSpec& layer);

// Kaiming-uniform weights, zero biases; layer streams derive from `seed`.
ParamStore init_params(const ModelGraph& graph, std::uint64_t seed);
ParamStore zero_params(const ModelGraph& graph);
// Throws ConfigError naming the first missing or mis-shaped entry.
template <typename T>
void check_params(const ModelGraph& graph, const ParamStoreT<T>& params);

template <typename T>
ParamStoreT<T> cast_params(const ParamStore& params) {
  ParamStoreT<T> out;
  for (const auto& [k, v] : params) out.emplace(k, v.template cast<T>());
  return out;
}

// Matmul hook for conv/cimconv layers, given the layer index.
template <typename T>
using LayerMatmul = std::function<TensorT<T>(std::size_t layer, const TensorT<T>& windows,
                                             const TensorT<T>& weight)>;

// x: [N, C, H, W] matching the graph input. Applies layers in order.
template <typename T>
TensorT<T> graph_forward(const ModelGraph& graph, const ParamStoreT<T>& params,
                         const TensorT<T>& x, const LayerMatmul<T>* mvm = nullptr);

template <typename T>
using VarStore = std::map<std::string, Var<T>>;

template <typename T>
VarStore<T> track_params(Tape<T>& tape, const ParamStoreT<T>& params, bool requires_grad = true);

template <typename T>
Var<T> graph_forward(const ModelGraph& graph, const VarStore<T>& params, Var<T> x);

}  // namespace cimnet
