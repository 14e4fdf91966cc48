// Writes the preset model configs as JSON files into a directory.
#include <filesystem>
#include <iostream>

#include "cimnet/io.hpp"
#include "cimnet/model.hpp"

int main(int argc, char** argv) {
  using namespace cimnet;
  const std::filesystem::path dir = argc > 1 ? argv[1] : "configs";
  std::filesystem::create_directories(dir);

  auto emit = [&](const ModelConfig& cfg, const std::string& file) {
    ModelGraph::build(cfg);
    io::write_file(dir / file, io::model_config_to_json(cfg));
    std::cout << (dir / file).string() << "\n";
  };

  emit(fastdvd_block_config(96, 96), "fastdvd-block.json");
  for (std::size_t s : {1, 2, 4, 8}) {
    const auto tag = "-s" + std::to_string(s) + ".json";
    emit(baseline_o1_config(s, 96, 96), "baseline-o1" + tag);
    emit(baseline_o2_config(s, 96, 96), "baseline-o2" + tag);
    emit(abla_net_config(s, 96, 96), "abla-net" + tag);
    emit(cim_net_config(s, 96, 96), "cimnet-v1" + tag);
  }

  PresetOptions tiny;
  tiny.widths = {8, 16, 32};
  auto small = cim_net_config(4, 32, 32, tiny);
  small.name = "cimnet-v1-s4-tiny";
  emit(small, "cimnet-v1-s4-tiny.json");
  return 0;
}
