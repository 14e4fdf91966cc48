#include "cimnet/backend.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace cimnet {

void CrossbarConfig::validate() const {
  if (rows == 0 || cols == 0) throw ConfigError("crossbar rows and cols must be >= 1");
  for (int bits : {weight_bits, input_bits, adc_bits}) {
    if (bits != 0 && (bits < 2 || bits > 16)) {
      throw ConfigError("bit widths must be 0 (disabled) or in 2..16, got " +
                        std::to_string(bits));
    }
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise sigma must be finite and >= 0");
  }
}

MvmSchedule lower(const ModelGraph& graph, const CrossbarConfig& cfg) {
  cfg.validate();
  MvmSchedule sched;
  const auto& layers = graph.layers();
  sched.per_layer.assign(layers.size(), 0);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& plan = layers[li];
    if (plan.windows == 0) continue;
    const auto rt = cfg.row_tiles(plan.mvm_rows);
    const auto ct = cfg.col_tiles(plan.mvm_cols);
    for (std::size_t w = 0; w < plan.windows; ++w) {
      for (std::size_t r = 0; r < rt; ++r) {
        const auto r0 = r * std::min(cfg.rows, plan.mvm_rows);
        const auto r1 = std::min(plan.mvm_rows, r0 + std::min(cfg.rows, plan.mvm_rows));
        for (std::size_t c = 0; c < ct; ++c) {
          const auto c0 = c * std::min(cfg.cols, plan.mvm_cols);
          const auto c1 = std::min(plan.mvm_cols, c0 + std::min(cfg.cols, plan.mvm_cols));
          sched.entries.push_back({static_cast<std::uint32_t>(li), static_cast<std::uint32_t>(w),
                                   static_cast<std::uint32_t>(r0), static_cast<std::uint32_t>(r1),
                                   static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c1)});
        }
      }
    }
    sched.per_layer[li] = plan.windows * rt * ct;
    sched.total += sched.per_layer[li];
  }
  return sched;
}

std::string MvmSchedule::to_csv(const ModelGraph& graph) const {
  std::ostringstream os;
  os << "layer_id,window,row_begin,row_end,col_begin,col_end\n";
  for (const auto& e : entries) {
    os << graph.layers().at(e.layer).spec.id << ',' << e.window << ',' << e.row_begin << ','
       << e.row_end << ',' << e.col_begin << ',' << e.col_end << '\n';
  }
  return os.str();
}

CostReport count_mvms(const ModelGraph& graph, const CrossbarConfig& cfg) {
  cfg.validate();
  CostReport report;
  report.model = graph.name();
  report.height = graph.config().height;
  report.width = graph.config().width;
  for (const auto& plan : graph.layers()) {
    LayerCost lc;
    lc.id = plan.spec.id;
    lc.kind = std::string(layer_kind_name(plan.spec.kind));
    lc.height = plan.in[1];
    lc.width = plan.in[2];
    lc.windows = plan.windows;
    if (plan.windows > 0) lc.tiles = cfg.row_tiles(plan.mvm_rows) * cfg.col_tiles(plan.mvm_cols);
    lc.mvms = lc.windows * lc.tiles;
    report.total_windows += lc.windows;
    report.total_mvms += lc.mvms;
    report.layers.push_back(std::move(lc));
  }
  return report;
}

CostReport with_reference(CostReport report, const CostReport& reference) {
  ReferenceCost ref;
  ref.name = reference.model;
  ref.total_windows = reference.total_windows;
  ref.total_mvms = reference.total_mvms;
  if (reference.total_windows > 0) {
    ref.window_ratio = static_cast<double>(report.total_windows) /
                       static_cast<double>(reference.total_windows);
  }
  if (reference.total_mvms > 0) {
    ref.mvm_ratio =
        static_cast<double>(report.total_mvms) / static_cast<double>(reference.total_mvms);
  }
  report.reference = ref;
  return report;
}

namespace {

std::string fmt_ratio(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "layer_id,kind,H,W,windows,tiles,mvms\n";
  for (const auto& l : layers) {
    os << l.id << ',' << l.kind << ',' << l.height << ',' << l.width << ',' << l.windows << ','
       << l.tiles << ',' << l.mvms << '\n';
  }
  os << "total," << model << ',' << height << ',' << width << ',' << total_windows << ",,"
     << total_mvms << '\n';
  if (reference) {
    os << "ref_total," << reference->name << ',' << height << ',' << width << ','
       << reference->total_windows << ",," << reference->total_mvms << '\n';
    os << "ratio," << model << '/' << reference->name << ',' << height << ',' << width << ','
       << fmt_ratio(reference->window_ratio) << ",," << fmt_ratio(reference->mvm_ratio) << '\n';
  }
  return os.str();
}

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["height"] = height;
  j["width"] = width;
  auto& arr = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : layers) {
    arr.push_back({{"layer_id", l.id}, {"kind", l.kind}, {"H", l.height}, {"W", l.width},
                   {"windows", l.windows}, {"tiles", l.tiles}, {"mvms", l.mvms}});
  }
  j["total_windows"] = total_windows;
  j["total_mvms"] = total_mvms;
  if (reference) {
    j["reference"] = {{"name", reference->name},
                      {"total_windows", reference->total_windows},
                      {"total_mvms", reference->total_mvms},
                      {"window_ratio", reference->window_ratio},
                      {"mvm_ratio", reference->mvm_ratio}};
  }
  return j.dump(2) + "\n";
}

void quantize_symmetric(std::span<double> data, int bits) {
  if (bits == 0 || data.empty()) return;
  double max_abs = 0.0;
  for (double v : data) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) return;
  const double levels = std::ldexp(1.0, bits - 1) - 1.0;
  const double step = max_abs / levels;
  for (double& v : data) v = std::round(v / step) * step;
}

CrossbarTile::CrossbarTile(std::span<const double> weights, std::size_t rows, std::size_t cols,
                           const CrossbarConfig& cfg)
    : rows_(rows), cols_(cols), cfg_(cfg), weights_(weights.begin(), weights.end()) {
  if (weights_.size() != rows * cols) {
    throw DimensionError("crossbar tile: " + std::to_string(weights_.size()) +
                         " weights for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " tile");
  }
  if (rows > cfg.rows || cols > cfg.cols) {
    throw DimensionError("crossbar tile larger than the configured array");
  }
  quantize_symmetric(weights_, cfg.weight_bits);
}

std::vector<double> CrossbarTile::mvm(std::span<const double> input, Rng& rng) const {
  if (input.size() != rows_) {
    throw DimensionError("crossbar mvm: input length " + std::to_string(input.size()) +
                         " != tile rows " + std::to_string(rows_));
  }
  std::vector<double> v(input.begin(), input.end());
  quantize_symmetric(v, cfg_.input_bits);
  std::vector<double> out(cols_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double* wrow = weights_.data() + i * cols_;
    for (std::size_t j = 0; j < cols_; ++j) out[j] += vi * wrow[j];
  }
  if (cfg_.noise_sigma > 0.0) {
    double ss = 0.0;
    for (double y : out) ss += y * y;
    const double rms = std::sqrt(ss / static_cast<double>(cols_));
    const double sd = cfg_.noise_sigma * rms;
    for (double& y : out) y += rng.normal(0.0, sd);
  }
  quantize_symmetric(out, cfg_.adc_bits);
  return out;
}

namespace {

// A [K, D] weight matrix split into crossbar tiles.
class TiledMatrix {
 public:
  TiledMatrix(std::span<const double> weight, std::size_t k, std::size_t d,
              const CrossbarConfig& cfg)
      : k_(k), d_(d) {
    if (weight.size() != k * d) {
      throw DimensionError("crossbar: " + std::to_string(weight.size()) + " weights for a " +
                           std::to_string(k) + "x" + std::to_string(d) + " matrix");
    }
    const auto tr = std::min(cfg.rows, k_);
    const auto tc = std::min(cfg.cols, d_);
    std::vector<double> block;
    for (std::size_t r0 = 0; r0 < k_; r0 += tr) {
      const auto r1 = std::min(k_, r0 + tr);
      for (std::size_t c0 = 0; c0 < d_; c0 += tc) {
        const auto c1 = std::min(d_, c0 + tc);
        block.clear();
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) block.push_back(weight[r * d_ + c]);
        tiles_.push_back({r0, c0, CrossbarTile(block, r1 - r0, c1 - c0, cfg)});
      }
    }
  }

  // One input vector through every tile; row-tile partials summed digitally.
  void apply(std::span<const double> input, std::span<double> out, Rng& rng) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : tiles_) {
      const auto part = t.tile.mvm(input.subspan(t.row0, t.tile.rows()), rng);
      for (std::size_t j = 0; j < part.size(); ++j) out[t.col0 + j] += part[j];
    }
  }

  std::size_t rows() const noexcept { return k_; }
  std::size_t cols() const noexcept { return d_; }

 private:
  struct Placed {
    std::size_t row0;
    std::size_t col0;
    CrossbarTile tile;
  };
  std::size_t k_;
  std::size_t d_;
  std::vector<Placed> tiles_;
};

}  // namespace

std::vector<double> simulate_mvm(std::span<const double> input, std::span<const double> weights,
                                 std::size_t rows, std::size_t cols, const CrossbarConfig& cfg,
                                 Rng& rng) {
  cfg.validate();
  if (input.size() != rows) {
    throw DimensionError("crossbar mvm: input length " + std::to_string(input.size()) +
                         " != matrix rows " + std::to_string(rows));
  }
  const TiledMatrix matrix(weights, rows, cols, cfg);
  std::vector<double> out(cols);
  matrix.apply(input, out, rng);
  return out;
}

Tensor simulate_graph(const ModelGraph& graph, const ParamStore& params, const Tensor& x,
                      const CrossbarConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed, "crossbar");
  LayerMatmul<double> mvm = [&](std::size_t layer, const TensorD& windows, const TensorD& weight) {
    const auto m = windows.dim(0), k = windows.dim(1), d = weight.dim(1);
    const TiledMatrix matrix(weight.data(), k, d, cfg);
    TensorD out({m, d});
    const std::string prefix = "l" + std::to_string(layer) + "/w";
    for (std::size_t w = 0; w < m; ++w) {
      Rng rng = root.child(prefix + std::to_string(w));
      matrix.apply(std::span<const double>(windows.data()).subspan(w * k, k),
                   std::span<double>(out.data()).subspan(w * d, d), rng);
    }
    return out;
  };
  return graph_forward(graph, cast_params<double>(params), x.cast<double>(), &mvm).cast<float>();
}

}  // namespace cimnet
