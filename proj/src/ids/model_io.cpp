#include "canhil/ids/model_io.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "canhil/error.hpp"

namespace canhil::ids {
namespace {

using nlohmann::json;

[[noreturn]] void parse_error(const std::string& what) { throw Error(ErrorCode::ParseError, what); }

void check_header(const json& doc, const char* format) {
  if (!doc.is_object() || doc.value("format", "") != format) {
    parse_error(std::string("not a ") + format + " document");
  }
  if (doc.value("format_version", 0) != kModelFormatVersion) {
    parse_error("unsupported format_version " + doc.value("format_version", json(nullptr)).dump());
  }
}

template <typename Matrix>
json row_major(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

template <typename T, typename Matrix>
void fill_row_major(const json& values, Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw Error(ErrorCode::DimensionMismatch, "weight array does not match declared shape");
  }
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values.at(static_cast<std::size_t>(i * cols + j)).get<T>();
  }
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    parse_error(std::string("model file: ") + e.what());
  }
}

}  // namespace

std::string serialize(const QuantMlpModel& model) {
  json doc;
  doc["format"] = "canhil-qmlp";
  doc["format_version"] = kModelFormatVersion;
  doc["input_scale"] = model.input_scale;
  doc["output_scale"] = model.output_scale;
  json layers = json::array();
  for (const auto& l : model.layers) {
    json layer;
    layer["in"] = l.in_dim();
    layer["out"] = l.out_dim();
    layer["weight_scale"] = l.weight_scale;
    layer["weights"] = row_major(l.weights.cast<int>());
    layer["bias"] = row_major(l.bias);
    layer["multiplier"] = l.multiplier;
    layer["shift"] = l.shift;
    layer["activation_bits"] = l.activation_bits;
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

std::string serialize(const FloatMlp& mlp) {
  json doc;
  doc["format"] = "canhil-mlp";
  doc["format_version"] = kModelFormatVersion;
  doc["input_scale"] = mlp.input_scale;
  json layers = json::array();
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    json layer;
    layer["in"] = mlp.weights[l].cols();
    layer["out"] = mlp.weights[l].rows();
    layer["weights"] = row_major(mlp.weights[l]);
    layer["bias"] = row_major(mlp.biases[l]);
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  if (!mlp.activation_clip.empty()) doc["activation_clip"] = mlp.activation_clip;
  return doc.dump(1) + "\n";
}

QuantMlpModel parse_quant_model(const std::string& text) {
  const json doc = parse_json(text);
  check_header(doc, "canhil-qmlp");
  QuantMlpModel model;
  try {
    model.input_scale = doc.at("input_scale").get<double>();
    model.output_scale = doc.at("output_scale").get<double>();
    for (const auto& jl : doc.at("layers")) {
      QuantLayer l;
      const auto in = jl.at("in").get<Eigen::Index>();
      const auto out = jl.at("out").get<Eigen::Index>();
      Eigen::MatrixXi w;
      fill_row_major<int>(jl.at("weights"), w, out, in);
      if (w.size() > 0 && (w.minCoeff() < kInt4Min || w.maxCoeff() > kInt4Max)) {
        throw Error(ErrorCode::ValidationError, "weight outside the int4 range");
      }
      l.weights = w.cast<std::int8_t>();
      fill_row_major<std::int32_t>(jl.at("bias"), l.bias, out, 1);
      l.weight_scale = jl.at("weight_scale").get<double>();
      l.multiplier = jl.at("multiplier").get<std::int32_t>();
      l.shift = jl.at("shift").get<int>();
      l.activation_bits = jl.at("activation_bits").get<int>();
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    parse_error(std::string("model file: ") + e.what());
  }
  validate(model);
  return model;
}

FloatMlp parse_float_model(const std::string& text) {
  const json doc = parse_json(text);
  check_header(doc, "canhil-mlp");
  FloatMlp mlp;
  try {
    mlp.input_scale = doc.at("input_scale").get<float>();
    for (const auto& jl : doc.at("layers")) {
      const auto in = jl.at("in").get<Eigen::Index>();
      const auto out = jl.at("out").get<Eigen::Index>();
      FloatMlp::Matrix w;
      FloatMlp::Vector b;
      fill_row_major<float>(jl.at("weights"), w, out, in);
      fill_row_major<float>(jl.at("bias"), b, out, 1);
      mlp.weights.push_back(std::move(w));
      mlp.biases.push_back(std::move(b));
    }
    if (doc.contains("activation_clip")) mlp.activation_clip = doc.at("activation_clip").get<std::vector<float>>();
  } catch (const json::exception& e) {
    parse_error(std::string("model file: ") + e.what());
  }
  validate(mlp);
  return mlp;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void save(const QuantMlpModel& model, const std::filesystem::path& path) {
  write_text_file(path, serialize(model));
}
void save(const FloatMlp& mlp, const std::filesystem::path& path) { write_text_file(path, serialize(mlp)); }

QuantMlpModel load_quant_model(const std::filesystem::path& path) {
  return parse_quant_model(read_text_file(path));
}
FloatMlp load_float_model(const std::filesystem::path& path) {
  return parse_float_model(read_text_file(path));
}

}  // namespace canhil::ids
