#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cimnet/model.hpp"
#include "cimnet/tensor.hpp"
#include "cimnet/train.hpp"

namespace cimnet::io {

namespace fs = std::filesystem;

// Whole-file helpers. read_file throws FormatError when the file cannot be read.
std::string read_file(const fs::path& path);
// Writes to a sibling temporary and renames, so readers never see a partial file.
void write_file(const fs::path& path, std::string_view bytes);

// ---- PGM/PPM ---------------------------------------------------------------

/// Binary P5 (-> [1,1,H,W]) or P6 (-> [1,3,H,W]) with maxval 255; v -> v/255.
Tensor decode_pnm(std::string_view bytes);
Tensor read_pnm(const fs::path& path);
/// [1,1,H,W] -> P5, [1,3,H,W] -> P6; x -> round(255 * clamp(x, 0, 1)).
std::string encode_pnm(const Tensor& image);
void write_pnm(const Tensor& image, const fs::path& path);

// ---- Tensor container --------------------------------------------------------

enum class DType : std::uint8_t { f32 = 0, f64 = 1, raw = 2 };

struct ContainerEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian, row-major

  bool operator==(const ContainerEntry&) const = default;
};

/// Named tensors in the "CIMT" v1 layout:
///
///   "CIMT" | version u16 = 1 | flags u16 = 0 | count u32
///   per entry: name_len u16 | name | dtype u8 | rank u8 | dims u32 x rank | payload
///
/// All integers little-endian. Raw entries are rank 1 with dims = [length].
class TensorContainer {
 public:
  void add(std::string name, const Tensor& t);
  void add(std::string name, const TensorD& t);
  void add_raw(std::string name, std::string_view bytes);

  bool contains(std::string_view name) const;
  const ContainerEntry& entry(std::string_view name) const;
  Tensor get_f32(std::string_view name) const;
  TensorD get_f64(std::string_view name) const;
  std::string get_raw(std::string_view name) const;

  const std::vector<ContainerEntry>& entries() const noexcept { return entries_; }
  // Appends a prepared entry; throws DuplicateNameError.
  void push(ContainerEntry e);

  bool operator==(const TensorContainer&) const = default;

 private:
  std::vector<ContainerEntry> entries_;
};

std::string encode_container(const TensorContainer& c);
// Throws BadMagicError, VersionError, DuplicateNameError or LengthError.
TensorContainer decode_container(std::string_view bytes);
void save_container(const TensorContainer& c, const fs::path& path);
TensorContainer load_container(const fs::path& path);

// ---- Checkpoints -------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Entries "<layer>.weight" / "<layer>.bias" plus "__config__" holding the
/// model config JSON.
TensorContainer make_checkpoint(const ModelConfig& config, const ParamStore& params);
Checkpoint read_checkpoint(const TensorContainer& c);
void save_checkpoint(const fs::path& path, const ModelConfig& config, const ParamStore& params);
Checkpoint load_checkpoint(const fs::path& path);

// ---- JSON configs ------------------------------------------------------------

/// {"name", "input": {"channels", "height", "width"}, "layers": [...]}.
/// Layer objects carry "kind" and kind-specific fields; "f_scale" is a
/// "num/den" string. Unknown keys are rejected; messages carry the field
/// path (e.g. "layers[3].f_scale").
ModelConfig parse_model_config(std::string_view json_text);
std::string model_config_to_json(const ModelConfig& config);
// ConfigError (not FormatError) when the file is missing or invalid.
ModelConfig load_model_config(const fs::path& path);

TrainConfig parse_train_config(std::string_view json_text);
std::string train_config_to_json(const TrainConfig& config);

}  // namespace cimnet::io
