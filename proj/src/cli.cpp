#include "cimnet/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cimnet/backend.hpp"
#include "cimnet/error.hpp"
#include "cimnet/io.hpp"
#include "cimnet/model.hpp"
#include "cimnet/train.hpp"

namespace cimnet {

namespace fs = std::filesystem;

namespace {

struct CountArgs {
  std::string model;
  std::string ref;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string out;
  std::string json;
};

struct DatasetArgs {
  std::string src;
  std::size_t n = 0;
  std::size_t patch = 96;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string model;
  std::string data;
  // Unset values fall back to the --config file, then to TrainConfig defaults.
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string metrics;
  std::string config;
};

struct DenoiseArgs {
  std::string ckpt;
  std::string in;
  double sigma = 15.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string metrics;
  bool no_noise = false;
  std::string clean;
};

struct SimulateArgs {
  std::string ckpt;
  std::string in;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int wbits = 0;
  int ibits = 0;
  int adcbits = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string metrics;
  double sigma = 0.0;
};

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::size_t array_extent(std::size_t flag) { return flag == 0 ? kUnboundedArray : flag; }

std::string extent_str(std::size_t v) {
  return v == kUnboundedArray ? "unbounded" : std::to_string(v);
}

ModelGraph graph_at(const ModelConfig& config, std::size_t h, std::size_t w) {
  return ModelGraph::build(with_input_size(config, h, w));
}

// ---- count -------------------------------------------------------------------

int run_count(const CountArgs& a, std::ostream& out) {
  const auto cfg = io::load_model_config(a.model);
  const std::size_t h = a.height ? a.height : cfg.height;
  const std::size_t w = a.width ? a.width : cfg.width;
  CrossbarConfig xbar;
  xbar.rows = array_extent(a.rows);
  xbar.cols = array_extent(a.cols);
  xbar.validate();

  auto report = count_mvms(graph_at(cfg, h, w), xbar);
  if (!a.ref.empty()) {
    const auto ref_cfg = io::load_model_config(a.ref);
    report = with_reference(std::move(report), count_mvms(graph_at(ref_cfg, h, w), xbar));
  }

  io::write_file(a.out, report.to_csv());
  if (!a.json.empty()) io::write_file(a.json, report.to_json());

  out << report.model << " at " << h << "x" << w << " (arrays " << extent_str(xbar.rows) << "x"
      << extent_str(xbar.cols) << "): " << report.total_windows << " windows, "
      << report.total_mvms << " MVMs\n";
  if (report.reference) {
    const auto& r = *report.reference;
    out << "reference " << r.name << ": " << r.total_windows << " windows, " << r.total_mvms
        << " MVMs; MVM ratio model/reference " << fixed(r.mvm_ratio, 6)
        << ", reference/model " << fixed(1.0 / r.mvm_ratio, 2) << "\n";
  }
  return kExitOk;
}

// ---- dataset -----------------------------------------------------------------

bool is_pnm(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int run_dataset(const DatasetArgs& a, std::ostream& out, std::ostream& err) {
  if (a.n == 0) throw ConfigError("--n must be positive");
  if (a.patch == 0) throw ConfigError("--patch must be positive");
  if (!fs::is_directory(a.src)) throw ConfigError("--src '" + a.src + "' is not a directory");

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.src)) {
    if (e.is_regular_file() && is_pnm(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  struct Source {
    std::string name;
    Tensor image;
  };
  std::vector<Source> sources;
  for (const auto& f : files) {
    auto img = io::read_pnm(f);
    if (img.dim(2) < a.patch || img.dim(3) < a.patch) {
      err << "warning: skipping " << f.filename().string() << " (" << img.dim(3) << "x"
          << img.dim(2) << " is smaller than the " << a.patch << " patch)\n";
      continue;
    }
    if (!sources.empty() && img.dim(1) != sources.front().image.dim(1)) {
      throw FormatError(f.filename().string() + " has " + std::to_string(img.dim(1)) +
                        " channels, earlier sources have " +
                        std::to_string(sources.front().image.dim(1)));
    }
    sources.push_back({f.filename().string(), std::move(img)});
  }
  if (sources.empty()) throw FormatError("no usable PGM/PPM images in '" + a.src + "'");

  // Split labels: a seeded permutation, 80% train, 10% val, the rest test.
  std::vector<std::size_t> order(a.n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(a.seed, "split");
  for (std::size_t i = a.n; i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  const std::size_t n_train = a.n * 8 / 10;
  const std::size_t n_val = a.n / 10;
  std::vector<const char*> split(a.n);
  for (std::size_t r = 0; r < a.n; ++r) {
    split[order[r]] = r < n_train ? "train" : r < n_train + n_val ? "val" : "test";
  }

  fs::create_directories(a.out);
  const Rng crop_root(a.seed, "crop");
  const std::size_t c = sources.front().image.dim(1);
  std::string manifest = "index,file,source,y,x,split\n";
  for (std::size_t i = 0; i < a.n; ++i) {
    Rng rng = crop_root.child("patch" + std::to_string(i));
    const auto& src = sources[rng.below(sources.size())];
    const std::size_t y = rng.below(src.image.dim(2) - a.patch + 1);
    const std::size_t x = rng.below(src.image.dim(3) - a.patch + 1);
    Tensor patch({1, c, a.patch, a.patch});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < a.patch; ++r)
        for (std::size_t q = 0; q < a.patch; ++q)
          patch.at(0, ch, r, q) = src.image.at(0, ch, y + r, x + q);
    io::TensorContainer box;
    box.add("image", patch);
    const std::string file = "patch_" + std::to_string(i) + ".cimt";
    io::save_container(box, fs::path(a.out) / file);
    manifest += std::to_string(i) + "," + file + "," + src.name + "," + std::to_string(y) + "," +
                std::to_string(x) + "," + split[i] + "\n";
  }
  io::write_file(fs::path(a.out) / "manifest.csv", manifest);
  out << "wrote " << a.n << " patches of " << a.patch << "x" << a.patch << " from "
      << sources.size() << " source image(s): " << n_train << " train, " << n_val << " val, "
      << a.n - n_train - n_val << " test\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

Dataset load_dataset(const fs::path& dir) {
  const auto manifest = dir / "manifest.csv";
  if (!fs::exists(manifest)) throw FormatError("no manifest.csv in '" + dir.string() + "'");
  std::istringstream lines(io::read_file(manifest));
  std::string line;
  std::getline(lines, line);
  if (line != "index,file,source,y,x,split") throw FormatError("unexpected manifest header");
  Dataset data;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) throw FormatError("malformed manifest row: " + line);
    if (cells[5] != "train" && cells[5] != "val") continue;
    auto patch = io::load_container(dir / cells[1]).get_f32("image");
    (cells[5] == "train" ? data.train : data.val).push_back(std::move(patch));
  }
  if (data.train.empty()) throw FormatError("dataset has no training patches");
  return data;
}

int run_train(const TrainArgs& a, std::ostream& out) {
  auto model_cfg = io::load_model_config(a.model);
  TrainConfig cfg;
  if (!a.config.empty()) {
    std::string text;
    try {
      text = io::read_file(a.config);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
    cfg = io::parse_train_config(text);
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch = *a.batch;
  if (a.seed) cfg.seed = *a.seed;

  const auto data = load_dataset(a.data);
  const auto& first = data.train.front();
  cfg.patch = first.dim(2);
  cfg.validate();
  if (first.dim(1) != model_cfg.channels && first.dim(1) + 1 != model_cfg.channels) {
    throw FormatError("patches have " + std::to_string(first.dim(1)) + " channels, model '" +
                      model_cfg.name + "' expects " + std::to_string(model_cfg.channels));
  }
  model_cfg = with_input_size(std::move(model_cfg), first.dim(2), first.dim(3));
  const auto graph = ModelGraph::build(model_cfg);

  auto result = train(graph, init_params(graph, cfg.seed), data, cfg);
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  io::save_checkpoint(a.out, model_cfg, result.params);
  io::write_file(metrics, metrics_csv(result.log));

  out << "trained " << model_cfg.name << " for " << cfg.epochs << " epoch(s), "
      << result.log.size() << " step(s)";
  if (!result.log.empty()) {
    out << "; final loss " << result.log.back().loss;
    if (result.log.back().val_psnr) out << ", val PSNR " << format_psnr(*result.log.back().val_psnr);
  }
  out << "\n";
  return kExitOk;
}

// ---- denoise / simulate --------------------------------------------------------

// Builds the checkpoint graph at the image size. Shape failures are data errors.
ModelGraph graph_for_image(const io::Checkpoint& ck, const Tensor& image) {
  if (image.dim(1) != ck.config.channels && image.dim(1) + 1 != ck.config.channels) {
    throw FormatError("image has " + std::to_string(image.dim(1)) + " channels, model '" +
                      ck.config.name + "' expects " + std::to_string(ck.config.channels));
  }
  try {
    return graph_at(ck.config, image.dim(2), image.dim(3));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("image ") + std::to_string(image.dim(3)) + "x" +
                      std::to_string(image.dim(2)) + " does not fit the model: " + e.what());
  }
}

int run_denoise(const DenoiseArgs& a, std::ostream& out) {
  if (a.sigma < 0.0) throw ConfigError("--sigma must be non-negative");
  const auto ck = io::load_checkpoint(a.ckpt);
  const auto input = io::read_pnm(a.in);
  const auto graph = graph_for_image(ck, input);

  Tensor reference = a.clean.empty() ? input : io::read_pnm(a.clean);
  if (reference.shape() != input.shape()) {
    throw FormatError("--clean image " + shape_str(reference.shape()) + " does not match input " +
                      shape_str(input.shape()));
  }
  Tensor noisy = input;
  if (!a.no_noise) {
    Rng rng(a.seed, "denoise");
    noisy = add_awgn(input, a.sigma, rng);
  }
  const Tensor model_in =
      uses_noise_map(graph, input.dim(1)) ? append_noise_map(noisy, {a.sigma / 255.0}) : noisy;
  const Tensor denoised = clamp01(graph_forward(graph, ck.params, model_in));
  io::write_pnm(denoised, a.out);

  const double noisy_db = psnr(noisy, reference);
  const double denoised_db = psnr(denoised, reference);
  if (!a.metrics.empty()) {
    io::write_file(a.metrics, "image,sigma,noisy_psnr,denoised_psnr\n" +
                                  fs::path(a.in).filename().string() + "," + fixed(a.sigma, 2) +
                                  "," + format_psnr(noisy_db) + "," + format_psnr(denoised_db) +
                                  "\n");
  }
  out << "noisy PSNR " << format_psnr(noisy_db) << " dB, denoised PSNR "
      << format_psnr(denoised_db) << " dB\n";
  return kExitOk;
}

int run_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.sigma < 0.0) throw ConfigError("--sigma must be non-negative");
  CrossbarConfig xbar;
  xbar.rows = array_extent(a.rows);
  xbar.cols = array_extent(a.cols);
  xbar.weight_bits = a.wbits;
  xbar.input_bits = a.ibits;
  xbar.adc_bits = a.adcbits;
  xbar.noise_sigma = a.noise;
  xbar.seed = a.seed;
  xbar.validate();

  const auto ck = io::load_checkpoint(a.ckpt);
  const auto input = io::read_pnm(a.in);
  const auto graph = graph_for_image(ck, input);
  Tensor x = input;
  if (a.sigma > 0.0) {
    Rng rng(a.seed, "denoise");
    x = add_awgn(input, a.sigma, rng);
  }
  if (uses_noise_map(graph, input.dim(1))) x = append_noise_map(x, {a.sigma / 255.0});
  const Tensor exact =
      clamp01(graph_forward(graph, cast_params<double>(ck.params), x.cast<double>()).cast<float>());
  const Tensor simulated = clamp01(simulate_graph(graph, ck.params, x, xbar));
  const auto schedule = lower(graph, xbar);
  io::write_pnm(simulated, a.out);

  const double fidelity = psnr(simulated, exact);
  io::write_file(a.metrics,
                 "rows,cols,wbits,ibits,adcbits,noise,mvms,fidelity_psnr,denoised_psnr\n" +
                     extent_str(xbar.rows) + "," + extent_str(xbar.cols) + "," +
                     std::to_string(a.wbits) + "," + std::to_string(a.ibits) + "," +
                     std::to_string(a.adcbits) + "," + fixed(a.noise, 6) + "," +
                     std::to_string(schedule.total) + "," + format_psnr(fidelity) + "," +
                     format_psnr(psnr(simulated, input)) + "\n");
  out << "crossbar run: " << schedule.total << " MVMs, fidelity PSNR vs exact forward "
      << format_psnr(fidelity) << " dB\n";
  return kExitOk;
}

// ---- psnr --------------------------------------------------------------------

int run_psnr(const std::string& a, const std::string& b, std::ostream& out) {
  const auto x = io::read_pnm(a);
  const auto y = io::read_pnm(b);
  if (x.shape() != y.shape()) {
    throw ConfigError("image sizes differ: " + shape_str(x.shape()) + " vs " +
                      shape_str(y.shape()));
  }
  out << format_psnr(psnr(x, y)) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Denoiser models on compute-in-memory crossbars", "cimnet"};
  app.require_subcommand(1);

  CountArgs count;
  auto* c = app.add_subcommand("count", "Per-layer sliding-window and MVM counts");
  c->add_option("--model", count.model, "Model config JSON")->required();
  c->add_option("--height", count.height, "Input height (default: config)");
  c->add_option("--width", count.width, "Input width (default: config)");
  c->add_option("--ref", count.ref, "Reference model config JSON");
  c->add_option("--rows", count.rows, "Crossbar rows (0 = unbounded)");
  c->add_option("--cols", count.cols, "Crossbar columns (0 = unbounded)");
  c->add_option("--out", count.out, "Report CSV")->required();
  c->add_option("--json", count.json, "Report JSON");

  DatasetArgs dataset;
  auto* d = app.add_subcommand("dataset", "Crop clean training patches from PGM/PPM images");
  d->add_option("--src", dataset.src, "Directory of PGM/PPM images")->required();
  d->add_option("--n", dataset.n, "Number of patches")->required();
  d->add_option("--patch", dataset.patch, "Patch size");
  d->add_option("--seed", dataset.seed, "Seed");
  d->add_option("--out", dataset.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a patch dataset");
  t->add_option("--model", tr.model, "Model config JSON")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--epochs", tr.epochs, "Epochs (default 100)");
  t->add_option("--batch", tr.batch, "Batch size (default 96)");
  t->add_option("--seed", tr.seed, "Seed (default 0)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "Metrics CSV (default: <out>.metrics.csv)");
  t->add_option("--config", tr.config, "Training config JSON (noise range, lr schedule, ...)");

  DenoiseArgs dn;
  auto* n = app.add_subcommand("denoise", "Corrupt an image with AWGN and denoise it");
  n->add_option("--ckpt", dn.ckpt, "Checkpoint")->required();
  n->add_option("--in", dn.in, "Input PGM/PPM")->required();
  n->add_option("--sigma", dn.sigma, "Noise std-dev in 0-255 units");
  n->add_option("--seed", dn.seed, "Seed");
  n->add_option("--out", dn.out, "Output PGM/PPM")->required();
  n->add_option("--metrics", dn.metrics, "Metrics CSV");
  n->add_flag("--no-noise", dn.no_noise, "Input is already noisy");
  n->add_option("--clean", dn.clean, "Clean reference image for PSNR");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a checkpoint on simulated crossbars");
  s->add_option("--ckpt", sim.ckpt, "Checkpoint")->required();
  s->add_option("--in", sim.in, "Input PGM/PPM")->required();
  s->add_option("--rows", sim.rows, "Crossbar rows (0 = unbounded)");
  s->add_option("--cols", sim.cols, "Crossbar columns (0 = unbounded)");
  s->add_option("--wbits", sim.wbits, "Weight bits (0 = exact)");
  s->add_option("--ibits", sim.ibits, "Input bits (0 = exact)");
  s->add_option("--adcbits", sim.adcbits, "ADC bits (0 = exact)");
  s->add_option("--noise", sim.noise, "Relative column noise std-dev");
  s->add_option("--seed", sim.seed, "Seed");
  s->add_option("--out", sim.out, "Output PGM/PPM")->required();
  s->add_option("--metrics", sim.metrics, "Metrics CSV")->required();
  s->add_option("--sigma", sim.sigma, "Corrupt the input with AWGN first (0-255 units)");

  std::string psnr_a, psnr_b;
  auto* p = app.add_subcommand("psnr", "PSNR between two images");
  p->add_option("a", psnr_a, "First image")->required();
  p->add_option("b", psnr_b, "Second image")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c->parsed()) return run_count(count, out);
    if (d->parsed()) return run_dataset(dataset, out, err);
    if (t->parsed()) return run_train(tr, out);
    if (n->parsed()) return run_denoise(dn, out);
    if (s->parsed()) return run_simulate(sim, out);
    return run_psnr(psnr_a, psnr_b, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace cimnet
