#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "stld/tinynet.hpp"

namespace stld {

namespace {

constexpr const char* kFormat = "stld-checkpoint";
constexpr int kVersion = 1;

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_checkpoint(const TinyModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json h;
  h["format"] = kFormat;
  h["version"] = kVersion;
  h["pathway"] = to_string(model.pathway);
  h["grid"] = model.dims.grid;
  h["landmarks"] = model.dims.landmarks;
  h["hidden"] = model.dims.hidden;
  h["step"] = model.step;
  h["parameters"] = model.parameter_count();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("save_checkpoint: cannot open " + path.string());
  out << h.dump() << '\n';
  const Eigen::VectorXd p = model.flat_parameters();
  for (Index i = 0; i < p.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(p(i)));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw RuntimeError("save_checkpoint: write failed for " + path.string());
}

TinyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("load_checkpoint: cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("load_checkpoint: bad header in " + path.string() + ": " + e.what());
  }
  if (h.value("format", "") != kFormat || h.value("version", 0) != kVersion)
    throw ValidationError("load_checkpoint: " + path.string() + " is not a version-1 checkpoint");
  ModelDims dims{h.at("grid").get<int>(), h.at("landmarks").get<int>(), h.at("hidden").get<int>()};
  TinyModel m = init_model(pathway_from_string(h.at("pathway").get<std::string>()), dims, 0);
  const auto count = h.at("parameters").get<Index>();
  require(count == m.parameter_count(), "load_checkpoint: parameter count does not match dims");
  Eigen::VectorXd p(count);
  for (Index i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if (!in) throw ValidationError("load_checkpoint: truncated parameter block in " + path.string());
    p(i) = std::bit_cast<double>(to_le(bits));
  }
  m.set_flat_parameters(p);
  m.step = h.at("step").get<std::uint64_t>();
  m.version = 0;
  return m;
}

}  // namespace stld
