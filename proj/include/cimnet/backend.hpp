#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cimnet/model.hpp"
#include "cimnet/rng.hpp"

namespace cimnet {

inline constexpr std::size_t kUnboundedArray = std::numeric_limits<std::size_t>::max();

/// Crossbar geometry and the analog non-idealities applied by the simulator.
/// Inputs drive rows, each output is one column; a weight matrix [K, D] is
/// split into ceil(K/rows) x ceil(D/cols) tiles. A bit width of 0 disables
/// that quantizer.
struct CrossbarConfig {
  std::size_t rows = kUnboundedArray;
  std::size_t cols = kUnboundedArray;
  int weight_bits = 0;
  int input_bits = 0;
  int adc_bits = 0;
  // Std-dev of per-column Gaussian noise, relative to the RMS of the tile output.
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  static CrossbarConfig ideal() { return {}; }
  bool exact() const noexcept {
    return weight_bits == 0 && input_bits == 0 && adc_bits == 0 && noise_sigma == 0.0;
  }
  std::size_t row_tiles(std::size_t k) const noexcept { return k / rows + (k % rows != 0); }
  std::size_t col_tiles(std::size_t d) const noexcept { return d / cols + (d % cols != 0); }
  // Throws ConfigError.
  void validate() const;
};

struct MvmEntry {
  std::uint32_t layer = 0;
  std::uint32_t window = 0;
  std::uint32_t row_begin = 0;
  std::uint32_t row_end = 0;
  std::uint32_t col_begin = 0;
  std::uint32_t col_end = 0;
};

/// Every (window, tile) activation of the crossbar, in execution order.
struct MvmSchedule {
  std::vector<MvmEntry> entries;
  std::vector<std::size_t> per_layer;  // indexed like ModelGraph::layers()
  std::size_t total = 0;

  std::string to_csv(const ModelGraph& graph) const;
};

MvmSchedule lower(const ModelGraph& graph, const CrossbarConfig& cfg);

struct LayerCost {
  std::string id;
  std::string kind;
  std::size_t height = 0;  // layer input extent
  std::size_t width = 0;
  std::size_t windows = 0;
  std::size_t tiles = 0;   // per window
  std::size_t mvms = 0;    // windows * tiles
};

struct ReferenceCost {
  std::string name;
  std::size_t total_windows = 0;
  std::size_t total_mvms = 0;
  double window_ratio = 0.0;  // model / reference
  double mvm_ratio = 0.0;
};

struct CostReport {
  std::string model;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<LayerCost> layers;
  std::size_t total_windows = 0;
  std::size_t total_mvms = 0;
  std::optional<ReferenceCost> reference;

  /// Columns: layer_id,kind,H,W,windows,tiles,mvms. After the layer rows come
  /// a "total" row and, with a reference, "ref_total" and "ratio" rows whose
  /// kind column names the model(s) and whose windows/mvms columns hold the
  /// reference totals or model/reference ratios.
  std::string to_csv() const;
  std::string to_json() const;
};

// Per-layer window and MVM counts from the closed forms.
CostReport count_mvms(const ModelGraph& graph, const CrossbarConfig& cfg = CrossbarConfig::ideal());
CostReport with_reference(CostReport report, const CostReport& reference);

/// One programmed crossbar tile holding a [rows, cols] weight block.
class CrossbarTile {
 public:
  // `weights` is row-major [rows, cols]; quantized once here.
  CrossbarTile(std::span<const double> weights, std::size_t rows, std::size_t cols,
               const CrossbarConfig& cfg);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  // Input quantization, exact dot products, column noise, ADC quantization.
  std::vector<double> mvm(std::span<const double> input, Rng& rng) const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  CrossbarConfig cfg_;
  std::vector<double> weights_;
};

// Symmetric max-abs linear quantization with 2^(bits-1)-1 levels per sign;
// bits == 0 leaves the data unchanged.
void quantize_symmetric(std::span<double> data, int bits);

std::vector<double> simulate_mvm(std::span<const double> input, std::span<const double> weights,
                                 std::size_t rows, std::size_t cols, const CrossbarConfig& cfg,
                                 Rng& rng);

/// graph_forward with every conv/cimconv product executed on tiled crossbars.
/// Activations are carried in double between layers; the result is rounded
/// to float once. Row-tile partial sums are accumulated digitally. Window w of layer l draws
/// noise from stream (cfg.seed, "crossbar").child("l<l>/w<w>").
Tensor simulate_graph(const ModelGraph& graph, const ParamStore& params, const Tensor& x,
                      const CrossbarConfig& cfg);

}  // namespace cimnet
