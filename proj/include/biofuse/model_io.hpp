#pragma once

// Encoder model files: JSON with a format tag and version, the encoder config,
// the input channel order, every parameter tensor (row-major) and the
// batch-norm running statistics. Doubles are written in shortest round-trip
// form, so save -> load reproduces parameters bit-exactly.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"

namespace biofuse {

inline constexpr const char* kModelFormat = "biofuse-lstm-encoder";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols) {
    throw Error(ErrorCode::CorruptFile, "tensor shape does not match the config");
  }
  const auto& data = j.at("data");
  if (data.size() != static_cast<std::size_t>(rows * cols)) {
    throw Error(ErrorCode::CorruptFile, "tensor element count does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, Eigen::Index size) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(size)) {
    throw Error(ErrorCode::CorruptFile, "vector length does not match the config");
  }
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_units", c.hidden_units},
          {"num_layers", c.num_layers},
          {"dropout_between", c.dropout_between},
          {"recurrent_dropout", c.recurrent_dropout},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps}};
}

inline nlohmann::json model_to_json(const EncoderModel& model) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelFormatVersion;
  j["modality"] = std::string(name(model.modality));
  j["config"] = encoder_config_to_json(model.config);
  j["channels"] = model.channels;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) {
    j["layers"].push_back({{"W", detail::matrix_to_json(l.W)},
                           {"U", detail::matrix_to_json(l.U)},
                           {"b", detail::vector_to_json(l.b)}});
  }
  j["norms"] = nlohmann::json::array();
  for (const auto& n : model.norms) {
    j["norms"].push_back({{"gamma", detail::vector_to_json(n.gamma)},
                          {"beta", detail::vector_to_json(n.beta)},
                          {"running_mean", detail::vector_to_json(n.running_mean)},
                          {"running_var", detail::vector_to_json(n.running_var)}});
  }
  return j;
}

inline EncoderModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw Error(ErrorCode::CorruptFile, "not an encoder model file");
    }
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error(ErrorCode::VersionMismatch, "model format version " + std::to_string(version) +
                                                  ", expected " + std::to_string(kModelFormatVersion));
    }
    EncoderModel model;
    model.modality = parse_modality(j.at("modality").get<std::string>());
    const auto& c = j.at("config");
    model.config.input_dim = c.at("input_dim").get<int>();
    model.config.hidden_units = c.at("hidden_units").get<int>();
    model.config.num_layers = c.at("num_layers").get<int>();
    model.config.dropout_between = c.at("dropout_between").get<double>();
    model.config.recurrent_dropout = c.at("recurrent_dropout").get<double>();
    model.config.bn_momentum = c.at("bn_momentum").get<double>();
    model.config.bn_eps = c.at("bn_eps").get<double>();
    model.config.validate();
    model.channels = j.at("channels").get<std::vector<std::string>>();
    const Eigen::Index h = model.config.hidden_units;
    const auto& layers = j.at("layers");
    const auto& norms = j.at("norms");
    if (layers.size() != static_cast<std::size_t>(model.config.num_layers) ||
        norms.size() != static_cast<std::size_t>(model.config.num_layers - 1)) {
      throw Error(ErrorCode::CorruptFile, "layer count does not match the config");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Eigen::Index in = l == 0 ? model.config.input_dim : h;
      model.layers.push_back({detail::matrix_from_json(layers[l].at("W"), 4 * h, in),
                              detail::matrix_from_json(layers[l].at("U"), 4 * h, h),
                              detail::vector_from_json(layers[l].at("b"), 4 * h)});
    }
    for (const auto& n : norms) {
      model.norms.push_back({detail::vector_from_json(n.at("gamma"), h), detail::vector_from_json(n.at("beta"), h),
                             detail::vector_from_json(n.at("running_mean"), h),
                             detail::vector_from_json(n.at("running_var"), h)});
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed model: ") + e.what());
  }
}

inline void save_model(const EncoderModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline EncoderModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace biofuse
