#pragma once

// Plain-text persistence helpers. Floats are written with 17 significant
// digits so that every double round-trips bitwise.

#include "mol/core.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mol {

using Json = nlohmann::json;

std::string format_double(double value);

// Headerless numeric CSV, one matrix row per line.
void write_matrix_csv(const std::string& path, const Matrix& m);
Matrix read_matrix_csv(const std::string& path);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

std::vector<std::string> split(const std::string& line, char sep);

}  // namespace mol
