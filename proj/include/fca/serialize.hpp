#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fca/encoder.hpp"
#include "fca/tensor.hpp"

namespace fca {

using Json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;

inline Json tensor_to_json(const Tensor& t) {
  return Json{{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const Json& j, const Shape& expected,
                               const std::string& name) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (shape != expected) {
    throw DataError("checkpoint: tensor '" + name + "' has shape " +
                    shape_str(shape) + ", expected " + shape_str(expected));
  }
  if (data.size() != shape_numel(shape)) {
    throw DataError("checkpoint: tensor '" + name + "' data length mismatch");
  }
  Tensor t(shape, std::move(data));
  detail::check_finite(t, "checkpoint load");
  return t;
}

inline Json config_to_json(const EncoderConfig& cfg) {
  return Json{{"layers", cfg.layers},         {"heads", cfg.heads},
              {"hidden", cfg.hidden},         {"ffn_inner", cfg.ffn_inner},
              {"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
              {"num_classes", cfg.num_classes}};
}

inline EncoderConfig config_from_json(const Json& j) {
  EncoderConfig cfg;
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.ffn_inner = j.at("ffn_inner").get<std::size_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.validate();
  return cfg;
}

/// Checkpoint document: config, every weight tensor, and optionally the
/// vocabulary, under an explicit format version. Loading validates every
/// shape against the config.
inline Json model_to_json(const EncoderModel& m,
                          const std::vector<std::string>* vocab = nullptr) {
  Json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = config_to_json(m.config);
  j["token_embedding"] = tensor_to_json(m.token_embedding);
  j["position_embedding"] = tensor_to_json(m.position_embedding);
  Json layers = Json::array();
  for (const LayerWeights& w : m.layers) {
    Json lw;
    for (const char* key : {"wq", "wk", "wv"}) {
      const std::vector<Tensor>& heads =
          key[1] == 'q' ? w.wq : (key[1] == 'k' ? w.wk : w.wv);
      Json arr = Json::array();
      for (const Tensor& t : heads) arr.push_back(tensor_to_json(t));
      lw[key] = std::move(arr);
    }
    lw["wo"] = tensor_to_json(w.wo);
    lw["w1"] = tensor_to_json(w.w1);
    lw["b1"] = tensor_to_json(w.b1);
    lw["w2"] = tensor_to_json(w.w2);
    lw["b2"] = tensor_to_json(w.b2);
    lw["ln1_gain"] = tensor_to_json(w.ln1_gain);
    lw["ln1_bias"] = tensor_to_json(w.ln1_bias);
    lw["ln2_gain"] = tensor_to_json(w.ln2_gain);
    lw["ln2_bias"] = tensor_to_json(w.ln2_bias);
    layers.push_back(std::move(lw));
  }
  j["layers"] = std::move(layers);
  j["classifier_weight"] = tensor_to_json(m.classifier_weight);
  j["classifier_bias"] = tensor_to_json(m.classifier_bias);
  if (vocab) j["vocab"] = *vocab;
  return j;
}

inline EncoderModel model_from_json(const Json& j,
                                    std::vector<std::string>* vocab = nullptr) {
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw DataError("checkpoint: missing or unsupported format_version");
  }
  EncoderModel m;
  m.config = config_from_json(j.at("config"));
  const EncoderConfig& c = m.config;
  m.token_embedding = tensor_from_json(j.at("token_embedding"),
                                       {c.vocab_size, c.hidden},
                                       "token_embedding");
  m.position_embedding = tensor_from_json(j.at("position_embedding"),
                                          {c.max_len, c.hidden},
                                          "position_embedding");
  const Json& layers = j.at("layers");
  if (layers.size() != c.layers) {
    throw DataError("checkpoint: expected " + std::to_string(c.layers) +
                    " layers, found " + std::to_string(layers.size()));
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    const Json& lw = layers[l];
    LayerWeights w;
    for (const char* key : {"wq", "wk", "wv"}) {
      const Json& arr = lw.at(key);
      if (arr.size() != c.heads) {
        throw DataError("checkpoint: layer " + std::to_string(l) + " '" + key +
                        "' must hold one matrix per head");
      }
      std::vector<Tensor>& heads =
          key[1] == 'q' ? w.wq : (key[1] == 'k' ? w.wk : w.wv);
      for (std::size_t t = 0; t < c.heads; ++t) {
        heads.push_back(tensor_from_json(arr[t], {c.hidden, c.head_dim()},
                                         std::string(key) + "[" +
                                             std::to_string(t) + "]"));
      }
    }
    w.wo = tensor_from_json(lw.at("wo"), {c.hidden, c.hidden}, "wo");
    w.w1 = tensor_from_json(lw.at("w1"), {c.hidden, c.ffn_inner}, "w1");
    w.b1 = tensor_from_json(lw.at("b1"), {c.ffn_inner}, "b1");
    w.w2 = tensor_from_json(lw.at("w2"), {c.ffn_inner, c.hidden}, "w2");
    w.b2 = tensor_from_json(lw.at("b2"), {c.hidden}, "b2");
    w.ln1_gain = tensor_from_json(lw.at("ln1_gain"), {c.hidden}, "ln1_gain");
    w.ln1_bias = tensor_from_json(lw.at("ln1_bias"), {c.hidden}, "ln1_bias");
    w.ln2_gain = tensor_from_json(lw.at("ln2_gain"), {c.hidden}, "ln2_gain");
    w.ln2_bias = tensor_from_json(lw.at("ln2_bias"), {c.hidden}, "ln2_bias");
    m.layers.push_back(std::move(w));
  }
  m.classifier_weight = tensor_from_json(j.at("classifier_weight"),
                                         {c.hidden, c.num_classes},
                                         "classifier_weight");
  m.classifier_bias = tensor_from_json(j.at("classifier_bias"),
                                       {c.num_classes}, "classifier_bias");
  if (vocab && j.contains("vocab")) {
    *vocab = j.at("vocab").get<std::vector<std::string>>();
  }
  return m;
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump();
  out << "\n";
  if (!out) throw DataError("write failed: " + path);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_checkpoint(const EncoderModel& m, const std::string& path,
                            const std::vector<std::string>* vocab = nullptr) {
  write_json_file(model_to_json(m, vocab), path);
}

inline EncoderModel load_checkpoint(const std::string& path,
                                    std::vector<std::string>* vocab = nullptr) {
  return model_from_json(read_json_file(path), vocab);
}

}  // namespace fca
