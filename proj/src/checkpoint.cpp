#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dynmole/mole.hpp"

namespace dynmole {

namespace {

using nlohmann::json;

constexpr const char* kLayerFormat = "dynmole-layer/1";

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix matrix_from(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string layer_to_json(const MoleLayer& layer) {
  json experts = json::array();
  for (const auto& e : layer.experts) {
    experts.push_back({{"rank", e.rank}, {"scaling", e.scaling}, {"a", matrix_json(e.a)}, {"b", matrix_json(e.b)}});
  }
  const auto& c = layer.cfg;
  json j = {
      {"format", kLayerFormat},
      {"seed", layer.seed},
      {"input_dim", layer.input_dim()},
      {"output_dim", layer.output_dim()},
      {"routing",
       {{"n_experts", c.n_experts},
        {"top_p", c.top_p},
        {"keep_top_k", c.keep_top_k},
        {"entropy_threshold", c.entropy_threshold},
        {"entropic_index", c.entropic_index}}},
      {"w0", matrix_json(layer.w0)},
      {"w_g", matrix_json(layer.router.w_g)},
      {"experts", std::move(experts)},
  };
  return j.dump(1);
}

MoleLayer layer_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("layer checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kLayerFormat) throw ConfigError("unsupported layer checkpoint format");
    MoleLayer layer;
    layer.seed = j.at("seed").get<std::uint64_t>();
    const auto& r = j.at("routing");
    layer.cfg = {r.at("n_experts").get<std::size_t>(), r.at("top_p").get<double>(), r.at("keep_top_k").get<std::size_t>(),
                 r.at("entropy_threshold").get<double>(), r.at("entropic_index").get<double>()};
    layer.w0 = matrix_from(j.at("w0"));
    layer.router.w_g = matrix_from(j.at("w_g"));
    for (const auto& e : j.at("experts")) {
      layer.experts.push_back(
          {matrix_from(e.at("a")), matrix_from(e.at("b")), e.at("rank").get<std::size_t>(), e.at("scaling").get<double>()});
    }
    if (layer.input_dim() != j.at("input_dim").get<std::size_t>() ||
        layer.output_dim() != j.at("output_dim").get<std::size_t>()) {
      throw ShapeError("checkpoint dims disagree with its base weight");
    }
    // Fresh identity: caches taken before the save do not carry over.
    layer.id = fresh_layer_id();
    layer.validate();
    return layer;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed layer checkpoint: ") + e.what());
  }
}

void save_layer(const MoleLayer& layer, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out << layer_to_json(layer) << '\n';
  if (!out) throw IoError(path, "write failed");
}

MoleLayer load_layer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return layer_from_json(buf.str());
}

}  // namespace dynmole
