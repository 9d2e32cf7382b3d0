#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "snode/systems.hpp"

namespace snode::io {

/// Raw little-endian float64 arrays with a JSON shape sidecar (<file>.shape.json).
void write_array(const std::filesystem::path& file, std::span<const double> values, const std::vector<std::size_t>& shape);
std::vector<double> read_array(const std::filesystem::path& file, std::vector<std::size_t>* shape = nullptr);

/// Directory layout: manifest.json plus one states array per trajectory.
/// Round trips are bit-exact.
void save_dataset(const systems::Dataset& ds, const std::filesystem::path& dir);
systems::Dataset load_dataset(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace snode::io
