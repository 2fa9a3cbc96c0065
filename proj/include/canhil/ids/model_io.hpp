#pragma once

#include <filesystem>
#include <string>

#include "canhil/ids/mlp.hpp"
#include "canhil/ids/quant_mlp.hpp"

namespace canhil::ids {

// Model files are JSON documents tagged with "format" and "format_version".
//
// Quantised:
//   {"format": "canhil-qmlp", "format_version": 1, "input_scale": s,
//    "output_scale": s, "layers": [{"in": n, "out": m, "weight_scale": s,
//    "weights": [row-major int4...], "bias": [...], "multiplier": k,
//    "shift": k, "activation_bits": 4}, ...]}
//
// Float:
//   {"format": "canhil-mlp", "format_version": 1, "input_scale": s,
//    "layers": [{"in": n, "out": m, "weights": [row-major...], "bias": [...]}]}

inline constexpr int kModelFormatVersion = 1;

std::string serialize(const QuantMlpModel& model);
std::string serialize(const FloatMlp& mlp);

/// Throws ParseError on malformed documents and the validate() errors on
/// out-of-range content.
QuantMlpModel parse_quant_model(const std::string& text);
FloatMlp parse_float_model(const std::string& text);

void save(const QuantMlpModel& model, const std::filesystem::path& path);
void save(const FloatMlp& mlp, const std::filesystem::path& path);
QuantMlpModel load_quant_model(const std::filesystem::path& path);
FloatMlp load_float_model(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace canhil::ids
