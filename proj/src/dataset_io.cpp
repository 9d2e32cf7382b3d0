#include "snode/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "json_util.hpp"

namespace snode::io {

namespace fs = std::filesystem;
using detail::json;

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
  if (!out) throw Error("failed writing " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) { return fmt::format("{}", v); }

void write_array(const fs::path& file, std::span<const double> values, const std::vector<std::size_t>& shape) {
  std::size_t expected = 1;
  for (auto s : shape) expected *= s;
  if (expected != values.size()) throw InvalidArgument("array shape does not match its size");
  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + file.string());
  json side = {{"dtype", "float64"}, {"byte_order", "little"}, {"shape", shape}};
  write_text(file.string() + ".shape.json", side.dump() + "\n");
}

std::vector<double> read_array(const fs::path& file, std::vector<std::size_t>* shape) {
  const auto side = json::parse(read_text(file.string() + ".shape.json"));
  if (side.at("dtype").get<std::string>() != "float64" || side.at("byte_order").get<std::string>() != "little")
    throw Error("unsupported array encoding in " + file.string());
  const auto sh = side.at("shape").get<std::vector<std::size_t>>();
  std::size_t n = 1;
  for (auto s : sh) n *= s;
  const std::string bytes = read_text(file);
  if (bytes.size() != n * 8)
    throw Error(fmt::format("{} holds {} bytes, shape needs {}", file.string(), bytes.size(), n * 8));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= std::uint64_t{static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)])} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  if (shape) *shape = sh;
  return out;
}

void save_dataset(const systems::Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["format"] = "snode-dataset";
  m["version"] = 1;
  m["system"] = detail::to_json(ds.system);
  m["grid"] = detail::to_json(ds.grid);
  m["times"] = ds.times;
  m["seed"] = ds.seed;
  m["rtol"] = ds.rtol;
  m["atol"] = ds.atol;
  m["pde_dt"] = ds.pde_dt;
  m["noise"] = ds.noise;
  m["refine"] = ds.refine;
  m["dropped"] = ds.dropped;
  m["config"] = ds.config_echo.empty() ? json(nullptr) : json::parse(ds.config_echo);
  m["trajectories"] = json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    const std::string name = fmt::format("traj_{:05d}.bin", i);
    const auto T = tr.states.size();
    const auto C = static_cast<std::size_t>(tr.states.front().rows());
    const auto P = static_cast<std::size_t>(tr.states.front().cols());
    std::vector<double> flat;
    flat.reserve(T * C * P);
    for (const auto& s : tr.states) flat.insert(flat.end(), s.data(), s.data() + s.size());
    write_array(dir / name, flat, {T, C, P});
    m["trajectories"].push_back(
        {{"states", name}, {"seed", tr.seed}, {"knot_times", tr.knot_times}, {"knot_values", tr.knot_values}});
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

systems::Dataset load_dataset(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw Error("no dataset manifest at " + path.string());
  json m;
  try {
    m = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
  try {
    if (m.at("format").get<std::string>() != "snode-dataset") throw Error(path.string() + " is not a dataset manifest");
    systems::Dataset ds;
    ds.system = detail::system_from_json(m.at("system"));
    ds.grid = detail::grid_from_json(m.at("grid"));
    ds.times = m.at("times").get<std::vector<double>>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.rtol = m.at("rtol").get<double>();
    ds.atol = m.at("atol").get<double>();
    ds.pde_dt = m.at("pde_dt").get<double>();
    ds.noise = m.at("noise").get<double>();
    ds.refine = m.value("refine", 1);
    ds.dropped = m.at("dropped").get<std::vector<std::size_t>>();
    if (!m.at("config").is_null()) ds.config_echo = m.at("config").dump();
    for (const auto& t : m.at("trajectories")) {
      systems::Trajectory tr;
      std::vector<std::size_t> shape;
      const auto flat = read_array(dir / t.at("states").get<std::string>(), &shape);
      if (shape.size() != 3 || shape[0] != ds.times.size() || shape[2] != ds.grid.size())
        throw Error("trajectory array shape does not match the manifest");
      const auto C = static_cast<Eigen::Index>(shape[1]);
      const auto P = static_cast<Eigen::Index>(shape[2]);
      for (std::size_t k = 0; k < shape[0]; ++k)
        tr.states.push_back(Eigen::Map<const RowMatrix>(flat.data() + k * shape[1] * shape[2], C, P));
      tr.times = ds.times;
      tr.seed = t.at("seed").get<std::uint64_t>();
      tr.knot_times = t.at("knot_times").get<std::vector<double>>();
      tr.knot_values = t.at("knot_values").get<std::vector<double>>();
      tr.param = grf::fit_spline(tr.knot_times, tr.knot_values);
      ds.trajectories.push_back(std::move(tr));
    }
    return ds;
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed dataset manifest {}: {}", path.string(), e.what()));
  }
}

}  // namespace snode::io
