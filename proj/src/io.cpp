#include "cimnet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cimnet::io {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw FormatError("error reading '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("error writing '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

// ---- PGM/PPM ---------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (++digits > 9) throw FormatError(std::string("PNM header: ") + what + " too large");
      ++pos_;
    }
    if (digits == 0) throw FormatError(std::string("PNM header: missing ") + what);
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_space() const {
    return pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]));
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM (expected P5 or P6)");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader hr(bytes);
  const auto w = hr.number("width");
  const auto h = hr.number("height");
  const auto maxval = hr.number("maxval");
  if (w == 0 || h == 0) throw FormatError("PNM header: zero image dimension");
  if (maxval != 255) throw FormatError("PNM maxval must be 255, got " + std::to_string(maxval));
  if (!hr.at_space()) throw FormatError("PNM header: missing whitespace before payload");
  hr.advance();
  const std::size_t need = w * h * channels;
  if (bytes.size() - hr.pos() < need) {
    throw FormatError("PNM payload truncated: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - hr.pos()));
  }
  Tensor t({1, channels, h, w});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hr.pos());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        t.at(0, c, y, x) = static_cast<float>(*p++) / 255.0f;
  return t;
}

Tensor read_pnm(const fs::path& path) { return decode_pnm(read_file(path)); }

std::string encode_pnm(const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || (image.dim(1) != 1 && image.dim(1) != 3)) {
    throw DimensionError("PNM export needs [1,1,H,W] or [1,3,H,W], got " +
                         shape_str(image.shape()));
  }
  const auto c = image.dim(1), h = image.dim(2), w = image.dim(3);
  std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) +
                    "\n255\n";
  out.reserve(out.size() + c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image.at(0, ch, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
  return out;
}

void write_pnm(const Tensor& image, const fs::path& path) { write_file(path, encode_pnm(image)); }

// ---- Tensor container --------------------------------------------------------

namespace {

constexpr std::uint16_t kContainerVersion = 1;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::raw: return 1;
  }
  throw FormatError("unknown dtype");
}

template <typename T>
ContainerEntry make_entry(std::string name, const TensorT<T>& t, DType dtype) {
  if (t.empty()) throw DimensionError("container: cannot store an empty tensor '" + name + "'");
  if (t.rank() > 255) throw DimensionError("container: rank too large");
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = dtype;
  for (auto d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
  e.payload.reserve(t.size() * sizeof(T));
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (auto v : t.data()) put_le(e.payload, std::bit_cast<Bits>(v));
  return e;
}

template <typename T>
TensorT<T> entry_tensor(const ContainerEntry& e) {
  Shape shape(e.dims.begin(), e.dims.end());
  std::vector<T> data(numel(shape));
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<T>(get_le<Bits>(e.payload.data() + i * sizeof(T)));
  }
  return TensorT<T>(std::move(shape), std::move(data));
}

}  // namespace

void TensorContainer::push(ContainerEntry e) {
  if (e.name.size() > 0xFFFF) throw FormatError("container: entry name too long");
  if (contains(e.name)) throw DuplicateNameError("container: duplicate entry '" + e.name + "'");
  entries_.push_back(std::move(e));
}

void TensorContainer::add(std::string name, const Tensor& t) {
  push(make_entry(std::move(name), t, DType::f32));
}

void TensorContainer::add(std::string name, const TensorD& t) {
  push(make_entry(std::move(name), t, DType::f64));
}

void TensorContainer::add_raw(std::string name, std::string_view bytes) {
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = DType::raw;
  e.dims = {static_cast<std::uint32_t>(bytes.size())};
  e.payload.assign(bytes.begin(), bytes.end());
  push(std::move(e));
}

bool TensorContainer::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ContainerEntry& e) { return e.name == name; });
}

const ContainerEntry& TensorContainer::entry(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw FormatError("container: no entry '" + std::string(name) + "'");
}

Tensor TensorContainer::get_f32(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::f32) throw FormatError("container: '" + e.name + "' is not f32");
  return entry_tensor<float>(e);
}

TensorD TensorContainer::get_f64(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::f64) throw FormatError("container: '" + e.name + "' is not f64");
  return entry_tensor<double>(e);
}

std::string TensorContainer::get_raw(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::raw) throw FormatError("container: '" + e.name + "' is not raw");
  return std::string(e.payload.begin(), e.payload.end());
}

std::string encode_container(const TensorContainer& c) {
  std::vector<std::uint8_t> out = {'C', 'I', 'M', 'T'};
  put_le<std::uint16_t>(out, kContainerVersion);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries().size()));
  for (const auto& e : c.entries()) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_le<std::uint32_t>(out, d);
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return std::string(out.begin(), out.end());
}

TensorContainer decode_container(std::string_view bytes) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw LengthError(std::string("container truncated while reading ") + what);
    }
  };
  if (bytes.size() < 4 || bytes.substr(0, 4) != "CIMT") throw BadMagicError("container: bad magic");
  pos = 4;
  need(8, "header");
  const auto version = get_le<std::uint16_t>(p + pos);
  if (version != kContainerVersion) {
    throw VersionError("container: unsupported version " + std::to_string(version));
  }
  const auto flags = get_le<std::uint16_t>(p + pos + 2);
  if (flags != 0) throw FormatError("container: unsupported flags " + std::to_string(flags));
  const auto count = get_le<std::uint32_t>(p + pos + 4);
  pos += 8;

  TensorContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(2, "entry name length");
    const auto name_len = get_le<std::uint16_t>(p + pos);
    pos += 2;
    need(name_len + 2u, "entry name");
    ContainerEntry e;
    e.name.assign(bytes.data() + pos, name_len);
    pos += name_len;
    const auto dtype = p[pos];
    if (dtype > 2) throw FormatError("container: unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto rank = p[pos + 1];
    pos += 2;
    if (rank == 0) throw FormatError("container: entry '" + e.name + "' has rank 0");
    if (e.dtype == DType::raw && rank != 1) {
      throw FormatError("container: raw entry '" + e.name + "' must be rank 1");
    }
    need(4u * rank, "dims");
    std::size_t elems = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const auto d = get_le<std::uint32_t>(p + pos);
      pos += 4;
      if (d == 0 && e.dtype != DType::raw) {
        throw FormatError("container: entry '" + e.name + "' has a zero dimension");
      }
      e.dims.push_back(d);
      elems *= d;
    }
    const std::size_t payload = elems * dtype_size(e.dtype);
    if (bytes.size() - pos < payload) {
      throw LengthError("container: payload of '" + e.name + "' is " +
                        std::to_string(bytes.size() - pos) + " bytes, expected " +
                        std::to_string(payload));
    }
    e.payload.assign(p + pos, p + pos + payload);
    pos += payload;
    c.push(std::move(e));
  }
  if (pos != bytes.size()) {
    throw LengthError("container: " + std::to_string(bytes.size() - pos) + " trailing bytes");
  }
  return c;
}

void save_container(const TensorContainer& c, const fs::path& path) {
  write_file(path, encode_container(c));
}

TensorContainer load_container(const fs::path& path) { return decode_container(read_file(path)); }

// ---- Checkpoints -------------------------------------------------------------

namespace {
constexpr const char* kConfigEntry = "__config__";
}

TensorContainer make_checkpoint(const ModelConfig& config, const ParamStore& params) {
  const auto graph = ModelGraph::build(config);
  check_params(graph, params);
  TensorContainer c;
  c.add_raw(kConfigEntry, model_config_to_json(config));
  for (const auto& layer : graph.layers()) {
    if (!layer.spec.has_params()) continue;
    c.add(weight_key(layer.spec), params.at(weight_key(layer.spec)));
    c.add(bias_key(layer.spec), params.at(bias_key(layer.spec)));
  }
  return c;
}

Checkpoint read_checkpoint(const TensorContainer& c) {
  if (!c.contains(kConfigEntry)) throw FormatError("checkpoint has no __config__ entry");
  Checkpoint ck;
  ck.config = parse_model_config(c.get_raw(kConfigEntry));
  for (const auto& e : c.entries()) {
    if (e.name == kConfigEntry) continue;
    ck.params.emplace(e.name, c.get_f32(e.name));
  }
  check_params(ModelGraph::build(ck.config), ck.params);
  return ck;
}

void save_checkpoint(const fs::path& path, const ModelConfig& config, const ParamStore& params) {
  save_container(make_checkpoint(config, params), path);
}

Checkpoint load_checkpoint(const fs::path& path) { return read_checkpoint(load_container(path)); }

// ---- JSON configs ------------------------------------------------------------

namespace {

// Strict object access: every key must be consumed or finish() throws.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::size_t count(const std::string& key) {
    const auto& v = take(key);
    if (!v.is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }
  std::size_t count_or(const std::string& key, std::size_t dflt) {
    return has(key) ? count(key) : dflt;
  }
  double number(const std::string& key) {
    const auto& v = take(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }
  double number_or(const std::string& key, double dflt) { return has(key) ? number(key) : dflt; }
  std::string string(const std::string& key) {
    const auto& v = take(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string string_or(const std::string& key, std::string dflt) {
    return has(key) ? string(key) : dflt;
  }
  const json& take(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing");
    seen_.insert(key);
    return j_.at(key);
  }
  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

template <typename F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.starts_with(path)) throw ConfigError(msg);
    throw ConfigError(path + ": " + msg);
  }
}

LayerSpec parse_layer(const json& j, const std::string& path, std::size_t index) {
  ObjectReader r(j, path);
  LayerSpec l;
  l.kind = with_path(r.field("kind"), [&] { return parse_layer_kind(r.string("kind")); });
  l.id = r.string_or("id", "layer" + std::to_string(index));
  l.module = r.string_or("module", "");
  switch (l.kind) {
    case LayerKind::conv:
      l.kernel = r.count("kernel");
      l.stride = r.count_or("stride", 1);
      l.padding = r.count_or("padding", 1);
      l.c_out = r.count("c_out");
      break;
    case LayerKind::cimconv:
      l.stride = r.count("stride");
      l.c_out = r.count("c_out");
      l.f_scale = with_path(r.field("f_scale"), [&] { return Rational::parse(r.string_or("f_scale", "1")); });
      l.activation = with_path(r.field("activation"),
                               [&] { return parse_activation(r.string_or("activation", "relu")); });
      break;
    case LayerKind::pixelshuffle:
      l.factor = r.count("factor");
      break;
    case LayerKind::relu:
      break;
    case LayerKind::add_skip_marker: {
      l.skip_id = r.string("skip_id");
      const auto role = r.string("role");
      if (role == "source") {
        l.role = SkipRole::source;
      } else if (role == "sink") {
        l.role = SkipRole::sink;
      } else {
        throw ConfigError(r.field("role") + ": expected \"source\" or \"sink\"");
      }
      break;
    }
  }
  r.finish();
  return l;
}

}  // namespace

ModelConfig parse_model_config(std::string_view json_text) {
  const json j = parse_json(json_text);
  ObjectReader r(j, "");
  ModelConfig cfg;
  cfg.name = r.string("name");
  {
    ObjectReader in(r.take("input"), "input");
    cfg.channels = in.count("channels");
    cfg.height = in.count("height");
    cfg.width = in.count("width");
    in.finish();
  }
  const auto& layers = r.take("layers");
  if (!layers.is_array()) throw ConfigError("layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cfg.layers.push_back(parse_layer(layers[i], "layers[" + std::to_string(i) + "]", i));
  }
  r.finish();
  return cfg;
}

std::string model_config_to_json(const ModelConfig& config) {
  ordered_json j;
  j["name"] = config.name;
  j["input"] = {{"channels", config.channels}, {"height", config.height}, {"width", config.width}};
  auto& arr = j["layers"] = ordered_json::array();
  for (const auto& l : config.layers) {
    ordered_json o;
    o["kind"] = std::string(layer_kind_name(l.kind));
    o["id"] = l.id;
    if (!l.module.empty()) o["module"] = l.module;
    switch (l.kind) {
      case LayerKind::conv:
        o["kernel"] = l.kernel;
        o["stride"] = l.stride;
        o["padding"] = l.padding;
        o["c_out"] = l.c_out;
        break;
      case LayerKind::cimconv:
        o["stride"] = l.stride;
        o["c_out"] = l.c_out;
        o["f_scale"] = std::to_string(l.f_scale.num()) + "/" + std::to_string(l.f_scale.den());
        o["activation"] = std::string(activation_name(l.activation));
        break;
      case LayerKind::pixelshuffle:
        o["factor"] = l.factor;
        break;
      case LayerKind::relu:
        break;
      case LayerKind::add_skip_marker:
        o["skip_id"] = l.skip_id;
        o["role"] = l.role == SkipRole::source ? "source" : "sink";
        break;
    }
    arr.push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

ModelConfig load_model_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_model_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

TrainConfig parse_train_config(std::string_view json_text) {
  const json j = parse_json(json_text);
  ObjectReader r(j, "");
  TrainConfig cfg;
  cfg.epochs = r.count_or("epochs", cfg.epochs);
  cfg.batch = r.count_or("batch", cfg.batch);
  cfg.patch = r.count_or("patch", cfg.patch);
  cfg.sigma_min = r.number_or("sigma_min", cfg.sigma_min);
  cfg.sigma_max = r.number_or("sigma_max", cfg.sigma_max);
  if (r.has("seed")) {
    const auto& v = r.take("seed");
    if (!v.is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    cfg.seed = v.get<std::uint64_t>();
  }
  cfg.val_sigma = r.number_or("val_sigma", cfg.val_sigma);
  cfg.steps_per_epoch = r.count_or("steps_per_epoch", cfg.steps_per_epoch);
  if (r.has("lr_schedule")) {
    const auto& arr = r.take("lr_schedule");
    if (!arr.is_array()) throw ConfigError("lr_schedule: expected an array");
    cfg.schedule.pieces.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ObjectReader p(arr[i], "lr_schedule[" + std::to_string(i) + "]");
      LrPiece piece;
      piece.start_epoch = p.count("start_epoch");
      piece.lr = p.number("lr");
      p.finish();
      cfg.schedule.pieces.push_back(piece);
    }
  }
  r.finish();
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& config) {
  ordered_json j;
  j["epochs"] = config.epochs;
  j["batch"] = config.batch;
  j["patch"] = config.patch;
  j["sigma_min"] = config.sigma_min;
  j["sigma_max"] = config.sigma_max;
  j["seed"] = config.seed;
  j["val_sigma"] = config.val_sigma;
  j["steps_per_epoch"] = config.steps_per_epoch;
  auto& arr = j["lr_schedule"] = ordered_json::array();
  for (const auto& p : config.schedule.pieces) {
    arr.push_back({{"start_epoch", p.start_epoch}, {"lr", p.lr}});
  }
  return j.dump(2) + "\n";
}

}  // namespace cimnet::io
