#include "cimnet/model.hpp"

#include <algorithm>
#include <set>

#include "cimnet/kernels.hpp"
#include "cimnet/nn.hpp"
#include "cimnet/rng.hpp"

namespace cimnet {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::cimconv: return "cimconv";
    case LayerKind::pixelshuffle: return "pixelshuffle";
    case LayerKind::relu: return "relu";
    case LayerKind::add_skip_marker: return "add_skip_marker";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::conv, LayerKind::cimconv, LayerKind::pixelshuffle, LayerKind::relu,
                 LayerKind::add_skip_marker}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec conv_layer(std::string id, std::string module, std::size_t kernel, std::size_t stride,
                     std::size_t padding, std::size_t c_out) {
  LayerSpec l;
  l.id = std::move(id);
  l.module = std::move(module);
  l.kind = LayerKind::conv;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.c_out = c_out;
  return l;
}

LayerSpec cimconv_layer(std::string id, std::string module, std::size_t stride, std::size_t c_out,
                        Rational f_scale, Activation act) {
  LayerSpec l;
  l.id = std::move(id);
  l.module = std::move(module);
  l.kind = LayerKind::cimconv;
  l.stride = stride;
  l.c_out = c_out;
  l.f_scale = f_scale;
  l.activation = act;
  return l;
}

LayerSpec relu_layer(std::string id, std::string module) {
  LayerSpec l;
  l.id = std::move(id);
  l.module = std::move(module);
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec pixelshuffle_layer(std::string id, std::string module, std::size_t factor) {
  LayerSpec l;
  l.id = std::move(id);
  l.module = std::move(module);
  l.kind = LayerKind::pixelshuffle;
  l.factor = factor;
  return l;
}

LayerSpec skip_marker(std::string id, std::string module, std::string skip_id, SkipRole role) {
  LayerSpec l;
  l.id = std::move(id);
  l.module = std::move(module);
  l.kind = LayerKind::add_skip_marker;
  l.skip_id = std::move(skip_id);
  l.role = role;
  return l;
}

namespace {

LayerPlan plan_layer(const LayerSpec& spec, const Shape& in) {
  LayerPlan plan;
  plan.spec = spec;
  plan.in = in;
  const auto c = in[0], h = in[1], w = in[2];
  switch (spec.kind) {
    case LayerKind::conv: {
      if (spec.kernel == 0 || spec.stride == 0 || spec.c_out == 0) {
        throw ConfigError("kernel, stride and c_out must be >= 1");
      }
      if (spec.kernel > h + 2 * spec.padding || spec.kernel > w + 2 * spec.padding) {
        throw ConfigError("kernel " + std::to_string(spec.kernel) + " exceeds padded input " +
                          std::to_string(h) + "x" + std::to_string(w));
      }
      const auto ho = conv_output_extent(h, spec.kernel, spec.stride, spec.padding);
      const auto wo = conv_output_extent(w, spec.kernel, spec.stride, spec.padding);
      plan.out = {spec.c_out, ho, wo};
      plan.weight_shape = {spec.c_out, c, spec.kernel, spec.kernel};
      plan.bias_shape = {spec.c_out};
      plan.windows = ho * wo;
      plan.mvm_rows = c * spec.kernel * spec.kernel;
      plan.mvm_cols = spec.c_out;
      break;
    }
    case LayerKind::cimconv: {
      CimConvSpec cim{spec.stride, c, spec.c_out, spec.f_scale, spec.activation};
      const auto out = cimconv_output_shape(cim, 1, h, w);
      plan.out = {out[1], out[2], out[3]};
      plan.weight_shape = {cim.in_features(), cim.out_features()};
      plan.bias_shape = {cim.out_features()};
      plan.windows = cimconv_window_count(cim, h, w);
      plan.mvm_rows = cim.in_features();
      plan.mvm_cols = cim.out_features();
      plan.cim = cim;
      break;
    }
    case LayerKind::pixelshuffle: {
      const auto r = spec.factor;
      if (r == 0 || c % (r * r) != 0) {
        throw ConfigError(std::to_string(c) + " channels not divisible by factor^2 (factor " +
                          std::to_string(r) + ")");
      }
      plan.out = {c / (r * r), h * r, w * r};
      break;
    }
    case LayerKind::relu:
    case LayerKind::add_skip_marker:
      plan.out = in;
      break;
  }
  return plan;
}

}  // namespace

ModelGraph ModelGraph::build(ModelConfig config) {
  if (config.channels == 0 || config.height == 0 || config.width == 0) {
    throw ConfigError("model '" + config.name + "': input dims must be positive");
  }
  ModelGraph g;
  std::set<std::string> ids;
  std::map<std::string, Shape> open_skips;
  std::set<std::string> used_skips;
  Shape cur{config.channels, config.height, config.width};
  for (const auto& spec : config.layers) {
    const std::string where = "layer '" + spec.id + "' (" + std::string(layer_kind_name(spec.kind)) + ")";
    if (spec.id.empty()) throw ConfigError("layer with empty id");
    if (!ids.insert(spec.id).second) throw ConfigError("duplicate layer id '" + spec.id + "'");
    LayerPlan plan;
    try {
      plan = plan_layer(spec, cur);
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (spec.kind == LayerKind::add_skip_marker) {
      if (spec.skip_id.empty()) throw ConfigError(where + ": missing skip_id");
      if (spec.role == SkipRole::source) {
        if (!used_skips.insert(spec.skip_id).second) {
          throw ConfigError(where + ": skip '" + spec.skip_id + "' opened twice");
        }
        open_skips[spec.skip_id] = cur;
      } else {
        auto it = open_skips.find(spec.skip_id);
        if (it == open_skips.end()) {
          throw ConfigError(where + ": sink for unopened skip '" + spec.skip_id + "'");
        }
        if (it->second != cur) {
          throw ConfigError(where + ": skip source " + shape_str(it->second) +
                            " does not match sink " + shape_str(cur));
        }
        open_skips.erase(it);
      }
    }
    cur = plan.out;
    g.layers_.push_back(std::move(plan));
  }
  if (!open_skips.empty()) {
    throw ConfigError("model '" + config.name + "': skip '" + open_skips.begin()->first +
                      "' has no sink");
  }
  const Shape want{3, config.height, config.width};
  if (cur != want) {
    throw ConfigError("model '" + config.name + "': output " + shape_str(cur) +
                      " must be a 3-channel image of the input size " + shape_str(want));
  }
  g.config_ = std::move(config);
  return g;
}

ModelConfig with_input_size(ModelConfig config, std::size_t height, std::size_t width) {
  config.height = height;
  config.width = width;
  return config;
}

namespace {

// Builds a layer list with ids "<module>.<n>".
class LayerListBuilder {
 public:
  void module(std::string name) {
    module_ = std::move(name);
    index_ = 0;
  }
  void conv(std::size_t k, std::size_t s, std::size_t c_out) {
    layers_.push_back(conv_layer(next_id(), module_, k, s, 1, c_out));
  }
  void cimconv(std::size_t s, std::size_t c_out, Rational f,
               Activation act = Activation::relu) {
    layers_.push_back(cimconv_layer(next_id(), module_, s, c_out, f, act));
  }
  void relu() { layers_.push_back(relu_layer(next_id(), module_)); }
  void shuffle(std::size_t r) { layers_.push_back(pixelshuffle_layer(next_id(), module_, r)); }
  void skip(std::string id, SkipRole role) {
    layers_.push_back(skip_marker(next_id(), module_, std::move(id), role));
  }
  std::vector<LayerSpec> take() { return std::move(layers_); }

 private:
  std::string next_id() { return module_ + "." + std::to_string(index_++); }

  std::string module_;
  std::size_t index_ = 0;
  std::vector<LayerSpec> layers_;
};

std::size_t large_kernel(std::size_t s) { return s == 1 ? 3 : s + 1; }

void require_stride(std::size_t s) {
  if (s != 1 && s != 2 && s != 4 && s != 8) {
    throw ConfigError("preset stride must be one of 1, 2, 4, 8; got " + std::to_string(s));
  }
}

void require_divisible(const char* preset, std::size_t h, std::size_t w, std::size_t d) {
  if (h % d != 0 || w % d != 0) {
    throw ConfigError(std::string(preset) + ": input " + std::to_string(h) + "x" +
                      std::to_string(w) + " must be divisible by " + std::to_string(d));
  }
}

// Large-stride head, two stride-2 encoder stages, two Conv+PixelShuffle
// decoder stages and a Conv+PixelShuffle(S) reconstruction tail.
void append_o1_body(LayerListBuilder& b, std::size_t s, const Widths& wd) {
  b.module("head");
  b.conv(large_kernel(s), s, wd.c1);
  b.relu();
  b.module("down1");
  b.conv(3, 2, wd.c2);
  b.relu();
  b.module("enc1");
  for (int i = 0; i < 2; ++i) {
    b.conv(3, 1, wd.c2);
    b.relu();
  }
  b.module("down2");
  b.conv(3, 2, wd.c3);
  b.relu();
  b.module("enc2");
  for (int i = 0; i < 2; ++i) {
    b.conv(3, 1, wd.c3);
    b.relu();
  }
  b.module("dec2");
  b.conv(3, 1, wd.c3);
  b.relu();
  b.module("up2");
  b.conv(3, 1, wd.c2 * 4);
  b.shuffle(2);
  b.module("dec1");
  b.conv(3, 1, wd.c2);
  b.relu();
  b.module("up1");
  b.conv(3, 1, wd.c1 * 4);
  b.shuffle(2);
  b.module("tail");
  b.conv(3, 1, 3 * s * s);
  b.shuffle(s);
}

std::string preset_name(const char* base, std::size_t s) {
  return std::string(base) + "-s" + std::to_string(s);
}

}  // namespace

ModelConfig fastdvd_block_config(std::size_t h, std::size_t w, const PresetOptions& opts) {
  auto cfg = baseline_o1_config(1, h, w, opts);
  cfg.name = "fastdvd-block";
  return cfg;
}

ModelConfig baseline_o1_config(std::size_t s, std::size_t h, std::size_t w,
                               const PresetOptions& opts) {
  require_stride(s);
  require_divisible("baseline-o1", h, w, 4 * s);
  LayerListBuilder b;
  append_o1_body(b, s, opts.widths);
  return {preset_name("baseline-o1", s), opts.input_channels(), h, w, b.take()};
}

ModelConfig baseline_o2_config(std::size_t s, std::size_t h, std::size_t w,
                               const PresetOptions& opts) {
  require_stride(s);
  require_divisible("baseline-o2", h, w, 4 * s);
  LayerListBuilder b;
  b.module("smooth_in");
  b.conv(large_kernel(s), s, opts.widths.c1 * s * s);
  b.shuffle(s);
  b.relu();
  append_o1_body(b, s, opts.widths);
  b.module("smooth_out");
  b.conv(large_kernel(s), s, 3 * s * s);
  b.shuffle(s);
  return {preset_name("baseline-o2", s), opts.input_channels(), h, w, b.take()};
}

ModelConfig abla_net_config(std::size_t s, std::size_t h, std::size_t w,
                            const PresetOptions& opts) {
  require_stride(s);
  require_divisible("abla-net", h, w, 4 * s);
  LayerListBuilder b;
  b.module("smooth_in");
  b.cimconv(s, opts.widths.c1, Rational(1));
  append_o1_body(b, s, opts.widths);
  b.module("smooth_out");
  b.cimconv(s, 3, Rational(1), Activation::identity);
  return {preset_name("abla-net", s), opts.input_channels(), h, w, b.take()};
}

ModelConfig cim_net_config(std::size_t s, std::size_t h, std::size_t w,
                           const PresetOptions& opts) {
  require_stride(s);
  const std::size_t sd = std::max<std::size_t>(s, 2);
  // Down/up stages run at H/2 and H/4 with stride max(S, 2).
  require_divisible("cimnet-v1", h, w, 4 * sd);
  const auto& wd = opts.widths;
  LayerListBuilder b;
  b.module("smooth_in");
  b.cimconv(s, wd.c1, Rational(1));
  if (opts.skips) b.skip("x0", SkipRole::source);
  b.module("down1");
  b.cimconv(sd, wd.c2, Rational(1, 2));
  b.module("enc1");
  for (int i = 0; i < 2; ++i) {
    b.conv(3, 1, wd.c2);
    b.relu();
  }
  if (opts.skips) b.skip("x1", SkipRole::source);
  b.module("down2");
  b.cimconv(sd, wd.c3, Rational(1, 2));
  b.module("enc2");
  for (int i = 0; i < 2; ++i) {
    b.conv(3, 1, wd.c3);
    b.relu();
  }
  b.module("dec2");
  b.conv(3, 1, wd.c3);
  b.relu();
  b.module("up2");
  b.cimconv(sd, wd.c2, Rational(2));
  if (opts.skips) b.skip("x1", SkipRole::sink);
  b.module("dec1");
  b.conv(3, 1, wd.c2);
  b.relu();
  b.module("up1");
  b.cimconv(sd, wd.c1, Rational(2));
  if (opts.skips) b.skip("x0", SkipRole::sink);
  b.module("smooth_out");
  b.cimconv(s, 3, Rational(1), Activation::identity);
  return {preset_name("cimnet-v1", s), opts.input_channels(), h, w, b.take()};
}

ModelGraph build_fastdvd_block(std::size_t h, std::size_t w, const PresetOptions& opts) {
  return ModelGraph::build(fastdvd_block_config(h, w, opts));
}
ModelGraph build_baseline_o1(std::size_t s, std::size_t h, std::size_t w,
                             const PresetOptions& opts) {
  return ModelGraph::build(baseline_o1_config(s, h, w, opts));
}
ModelGraph build_baseline_o2(std::size_t s, std::size_t h, std::size_t w,
                             const PresetOptions& opts) {
  return ModelGraph::build(baseline_o2_config(s, h, w, opts));
}
ModelGraph build_abla_net(std::size_t s, std::size_t h, std::size_t w,
                          const PresetOptions& opts) {
  return ModelGraph::build(abla_net_config(s, h, w, opts));
}
ModelGraph build_cim_net(std::size_t s, std::size_t h, std::size_t w,
                         const PresetOptions& opts) {
  return ModelGraph::build(cim_net_config(s, h, w, opts));
}

std::string weight_key(const LayerSpec& layer) { return layer.id + ".weight"; }
std::string bias_key(const LayerSpec& layer) { return layer.id + ".bias"; }

ParamStore init_params(const ModelGraph& graph, std::uint64_t seed) {
  ParamStore params;
  const Rng root(seed, "init");
  for (const auto& layer : graph.layers()) {
    if (!layer.spec.has_params()) continue;
    Rng rng = root.child(layer.spec.id);
    params[weight_key(layer.spec)] = kaiming_uniform(rng, layer.weight_shape, layer.mvm_rows);
    params[bias_key(layer.spec)] = Tensor(layer.bias_shape);
  }
  return params;
}

ParamStore zero_params(const ModelGraph& graph) {
  ParamStore params;
  for (const auto& layer : graph.layers()) {
    if (!layer.spec.has_params()) continue;
    params[weight_key(layer.spec)] = Tensor(layer.weight_shape);
    params[bias_key(layer.spec)] = Tensor(layer.bias_shape);
  }
  return params;
}

template <typename T>
void check_params(const ModelGraph& graph, const ParamStoreT<T>& params) {
  for (const auto& layer : graph.layers()) {
    if (!layer.spec.has_params()) continue;
    for (const auto& [key, shape] : {std::pair{weight_key(layer.spec), layer.weight_shape},
                                     std::pair{bias_key(layer.spec), layer.bias_shape}}) {
      auto it = params.find(key);
      if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
      if (it->second.shape() != shape) {
        throw ConfigError("parameter '" + key + "' has shape " + shape_str(it->second.shape()) +
                          ", layer expects " + shape_str(shape));
      }
    }
  }
}

namespace {

void check_input(const ModelGraph& graph, const Shape& x) {
  const auto want = graph.input_shape();
  if (x.size() != 4 || x[1] != want[0] || x[2] != want[1] || x[3] != want[2]) {
    throw DimensionError("model '" + graph.name() + "' expects [N," + std::to_string(want[0]) +
                         "," + std::to_string(want[1]) + "," + std::to_string(want[2]) +
                         "] input, got " + shape_str(x));
  }
}

}  // namespace

template <typename T>
TensorT<T> graph_forward(const ModelGraph& graph, const ParamStoreT<T>& params,
                         const TensorT<T>& x, const LayerMatmul<T>* mvm) {
  check_input(graph, x.shape());
  check_params(graph, params);
  std::map<std::string, TensorT<T>> saved;
  TensorT<T> cur = x;
  const auto& layers = graph.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& plan = layers[li];
    const auto& spec = plan.spec;
    MatmulFn<T> hook;
    if (mvm) {
      hook = [&, li](const TensorT<T>& windows, const TensorT<T>& weight) {
        return (*mvm)(li, windows, weight);
      };
    }
    switch (spec.kind) {
      case LayerKind::conv: {
        ConvParamsT<T> p{params.at(weight_key(spec)), params.at(bias_key(spec)), spec.stride,
                         spec.padding};
        cur = conv2d(cur, p, mvm ? &hook : nullptr);
        break;
      }
      case LayerKind::cimconv: {
        CimConvParamsT<T> p{params.at(weight_key(spec)), params.at(bias_key(spec))};
        cur = cimconv_forward(cur, *plan.cim, p, mvm ? &hook : nullptr);
        break;
      }
      case LayerKind::pixelshuffle:
        cur = kernels::pixel_shuffle(cur, spec.factor);
        break;
      case LayerKind::relu:
        cur = kernels::relu(cur);
        break;
      case LayerKind::add_skip_marker:
        if (spec.role == SkipRole::source) {
          saved[spec.skip_id] = cur;
        } else {
          cur = add_skip(cur, saved.at(spec.skip_id));
        }
        break;
    }
  }
  return cur;
}

template <typename T>
VarStore<T> track_params(Tape<T>& tape, const ParamStoreT<T>& params, bool requires_grad) {
  VarStore<T> out;
  for (const auto& [k, v] : params) out.emplace(k, tape.leaf(v, requires_grad));
  return out;
}

template <typename T>
Var<T> graph_forward(const ModelGraph& graph, const VarStore<T>& params, Var<T> x) {
  check_input(graph, x.shape());
  std::map<std::string, Var<T>> saved;
  Var<T> cur = x;
  for (const auto& plan : graph.layers()) {
    const auto& spec = plan.spec;
    auto param = [&](const std::string& key) {
      auto it = params.find(key);
      if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
      return it->second;
    };
    switch (spec.kind) {
      case LayerKind::conv:
        cur = conv2d(cur, param(weight_key(spec)), param(bias_key(spec)), spec.stride,
                     spec.padding);
        break;
      case LayerKind::cimconv:
        cur = cimconv_forward(cur, *plan.cim, param(weight_key(spec)), param(bias_key(spec)));
        break;
      case LayerKind::pixelshuffle:
        cur = ag::pixel_shuffle(cur, spec.factor);
        break;
      case LayerKind::relu:
        cur = ag::relu(cur);
        break;
      case LayerKind::add_skip_marker:
        if (spec.role == SkipRole::source) {
          saved.insert_or_assign(spec.skip_id, cur);
        } else {
          cur = add_skip(cur, saved.at(spec.skip_id));
        }
        break;
    }
  }
  return cur;
}

#define CIMNET_INSTANTIATE(T)                                                               \
  template void check_params(const ModelGraph&, const ParamStoreT<T>&);                     \
  template TensorT<T> graph_forward(const ModelGraph&, const ParamStoreT<T>&,               \
                                    const TensorT<T>&, const LayerMatmul<T>*);              \
  template VarStore<T> track_params(Tape<T>&, const ParamStoreT<T>&, bool);                 \
  template Var<T> graph_forward(const ModelGraph&, const VarStore<T>&, Var<T>);

CIMNET_INSTANTIATE(float)
CIMNET_INSTANTIATE(double)

#undef CIMNET_INSTANTIATE

}  // namespace cimnet
