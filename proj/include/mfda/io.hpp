#pragma once

// File formats. Tables are whitespace-separated text with a versioned header
// and 17 significant digits (bit-exact round trip). Bundles and manifests
// are versioned JSON documents.

#include "mfda/common.hpp"
#include "mfda/dmd.hpp"
#include "mfda/models.hpp"
#include "mfda/pipeline.hpp"
#include "mfda/reconstruction.hpp"

#include "json.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mfda::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kTableMagic = "# mfda-table";
inline constexpr int kTableVersion = 1;
inline constexpr const char* kDatasetFormat = "mfda-dataset";
inline constexpr const char* kBundleFormat = "mfda-bundle";
inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Hashing

/// FNV-1a 64 of a byte string.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_hash(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partially written file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Tables

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Table {
  std::vector<std::string> columns;
  Matrix values;  // rows x columns

  Index column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<Index>(i);
    throw DataError("table has no column '" + name + "'");
  }
};

inline std::string format_table(const Table& t) {
  require(static_cast<Index>(t.columns.size()) == t.values.cols(),
          "table column names do not match the value matrix");
  std::string out = std::string(kTableMagic) + " " + std::to_string(kTableVersion) + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += '\t';
    out += t.columns[i];
  }
  out += '\n';
  for (Index r = 0; r < t.values.rows(); ++r) {
    for (Index c = 0; c < t.values.cols(); ++c) {
      if (c) out += '\t';
      out += format_double(t.values(r, c));
    }
    out += '\n';
  }
  return out;
}

inline void write_table(const fs::path& path, const Table& t) {
  write_file_atomic(path, format_table(t));
}

inline Table parse_table(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  Index lineno = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  ++lineno;
  if (!std::getline(in, line) || line.rfind(kTableMagic, 0) != 0)
    throw fail("missing '" + std::string(kTableMagic) + "' header");
  const std::string ver = line.substr(std::string(kTableMagic).size());
  if (std::stoi(ver.empty() ? "0" : ver) != kTableVersion)
    throw fail("unsupported table version '" + ver + "'");
  ++lineno;
  if (!std::getline(in, line)) throw fail("missing column header");
  Table t;
  {
    std::istringstream hs(line);
    std::string name;
    while (hs >> name) t.columns.push_back(name);
  }
  if (t.columns.empty()) throw fail("empty column header");
  std::vector<double> flat;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    std::size_t count = 0;
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p >= end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r'))
        throw fail("malformed number");
      if (!std::isfinite(v)) throw fail("non-finite value");
      flat.push_back(v);
      ++count;
      p = next;
    }
    if (count != t.columns.size())
      throw fail("expected " + std::to_string(t.columns.size()) + " values, found " +
                 std::to_string(count));
    ++rows;
  }
  t.values.resize(rows, static_cast<Index>(t.columns.size()));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < t.values.cols(); ++c)
      t.values(r, c) = flat[static_cast<std::size_t>(r * t.values.cols() + c)];
  return t;
}

inline Table read_table(const fs::path& path) { return parse_table(read_file(path), path.string()); }

inline std::vector<std::string> indexed_names(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  for (Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// JSON helpers for matrices

inline json to_json(const Matrix& a) {
  json j;
  j["rows"] = a.rows();
  j["cols"] = a.cols();
  std::vector<double> data(static_cast<std::size_t>(a.size()));
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) data[static_cast<std::size_t>(r * a.cols() + c)] = a(r, c);
  j["data"] = std::move(data);
  return j;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  try {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
      throw DataError(what + ": matrix size does not match its data");
    Matrix a(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) a(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return a;
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j, const std::string& what) {
  try {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(data.data(), static_cast<Index>(data.size()));
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Operators, regressors, libraries, bundles

inline json dictionary_to_json(const Dictionary& d) {
  if (d.kind() == DictionaryKind::kCustom)
    throw ContractViolation("custom dictionaries cannot be serialized");
  return json{{"kind", d.kind() == DictionaryKind::kIdentity ? "identity" : "polynomial"},
              {"input_dim", d.input_dim()},
              {"degree", d.degree()}};
}

inline Dictionary dictionary_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const Index m = j.at("input_dim").get<Index>();
  if (kind == "identity") return Dictionary::identity(m);
  if (kind == "polynomial") return Dictionary::polynomial(m, j.at("degree").get<int>());
  throw DataError("unknown dictionary kind '" + kind + "'");
}

inline json to_json(const DmdOperator& op) {
  return json{{"k", to_json(op.k)},
              {"dictionary", dictionary_to_json(op.dictionary)},
              {"tolerance", op.tolerance},
              {"effective_rank", op.effective_rank},
              {"pair_count", op.pair_count},
              {"iteration", op.iteration},
              {"data_hash", hex64(op.data_hash)},
              {"warnings", op.warnings}};
}

inline DmdOperator operator_from_json(const json& j) {
  DmdOperator op;
  op.k = matrix_from_json(j.at("k"), "dmd operator");
  op.dictionary = dictionary_from_json(j.at("dictionary"));
  if (op.k.rows() != op.dictionary.size() || op.k.cols() != op.dictionary.size())
    throw DataError("dmd operator size does not match its dictionary");
  op.k_y = op.k.topRows(op.dictionary.input_dim());
  op.tolerance = j.at("tolerance").get<double>();
  op.effective_rank = j.at("effective_rank").get<Index>();
  op.pair_count = j.at("pair_count").get<Index>();
  op.iteration = j.at("iteration").get<int>();
  op.data_hash = std::stoull(j.at("data_hash").get<std::string>(), nullptr, 16);
  op.warnings = j.at("warnings").get<std::vector<std::string>>();
  return op;
}

inline json to_json(const RegressorSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) layers.push_back({{"weight", to_json(l.weight)}, {"bias", to_json(l.bias)}});
  return json{{"hidden", s.hidden},
              {"activation", to_string(s.activation)},
              {"optimizer", s.optimizer},
              {"learning_rate", s.learning_rate},
              {"final_lr_fraction", s.final_lr_fraction},
              {"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"seed", s.seed},
              {"trained", s.trained},
              {"layers", layers},
              {"input_norm", {{"mean", to_json(s.input_norm.mean)}, {"scale", to_json(s.input_norm.scale)}}},
              {"output_norm", {{"mean", to_json(s.output_norm.mean)}, {"scale", to_json(s.output_norm.scale)}}},
              {"final_mse", s.final_mse},
              {"loss_history", s.loss_history}};
}

inline RegressorSpec regressor_from_json(const json& j) {
  RegressorSpec s;
  s.hidden = j.at("hidden").get<std::vector<Index>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.optimizer = j.at("optimizer").get<std::string>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.final_lr_fraction = j.at("final_lr_fraction").get<double>();
  s.epochs = j.at("epochs").get<int>();
  s.batch_size = j.at("batch_size").get<Index>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.trained = j.at("trained").get<bool>();
  for (const auto& l : j.at("layers")) {
    DenseLayer layer{matrix_from_json(l.at("weight"), "regressor layer"),
                     vector_from_json(l.at("bias"), "regressor bias")};
    if (layer.bias.size() != layer.weight.rows())
      throw DataError("regressor layer bias does not match weight rows");
    if (!s.layers.empty() && s.layers.back().weight.rows() != layer.weight.cols())
      throw DataError("regressor layers have inconsistent shapes");
    s.layers.push_back(std::move(layer));
  }
  s.input_norm.mean = vector_from_json(j.at("input_norm").at("mean"), "input_norm");
  s.input_norm.scale = vector_from_json(j.at("input_norm").at("scale"), "input_norm");
  s.output_norm.mean = vector_from_json(j.at("output_norm").at("mean"), "output_norm");
  s.output_norm.scale = vector_from_json(j.at("output_norm").at("scale"), "output_norm");
  s.final_mse = j.at("final_mse").get<double>();
  s.loss_history = j.at("loss_history").get<std::vector<double>>();
  return s;
}

inline json to_json(const AnalogLibrary& lib) {
  return json{{"keys", to_json(lib.keys)},
              {"values", to_json(lib.values)},
              {"role", lib.role == LibraryRole::kTransition ? "transition" : "reconstruction"},
              {"lambda", lib.lambda},
              {"weighting", lib.weighting == Weighting::kKernel ? "kernel" : "uniform"},
              {"delay", lib.delay}};
}

inline AnalogLibrary library_from_json(const json& j) {
  const std::string role = j.at("role").get<std::string>();
  AnalogLibrary lib = make_library(matrix_from_json(j.at("keys"), "library keys"),
                                   matrix_from_json(j.at("values"), "library values"),
                                   role == "transition" ? LibraryRole::kTransition
                                                        : LibraryRole::kReconstruction,
                                   j.at("delay").get<Index>(), j.at("lambda").get<double>());
  lib.weighting = j.at("weighting").get<std::string>() == "uniform" ? Weighting::kUniform
                                                                    : Weighting::kKernel;
  return lib;
}

inline SurrogateMethod parse_method(const std::string& s) {
  if (s == "dmd_t") return SurrogateMethod::kDmdT;
  if (s == "knn_t") return SurrogateMethod::kKnnT;
  throw ConfigError("unknown surrogate method '" + s + "' (expected dmd_t or knn_t)");
}

inline ReconstructionKind parse_reconstruction(const std::string& s) {
  if (s == "nn") return ReconstructionKind::kRegressor;
  if (s == "lc") return ReconstructionKind::kLocallyConstant;
  if (s == "ll") return ReconstructionKind::kLocallyLinear;
  throw ConfigError("unknown reconstruction '" + s + "' (expected nn, lc or ll)");
}

inline AnalogOperator parse_operator(const std::string& s) {
  if (s == "lc") return AnalogOperator::kLocallyConstant;
  if (s == "ll") return AnalogOperator::kLocallyLinear;
  throw ConfigError("unknown analog operator '" + s + "' (expected lc or ll)");
}

inline json bundle_to_json(const SurrogateBundle& b) {
  b.validate();
  json j;
  j["format"] = kBundleFormat;
  j["version"] = kFormatVersion;
  j["method"] = to_string(b.method);
  j["reconstruction"] = to_string(b.reconstruction);
  j["delay"] = b.delay;
  j["observation_dim"] = b.observation_dim;
  j["state_dim"] = b.state_dim;
  j["training_length"] = b.training_length;
  if (b.dmd) {
    j["dmd"] = to_json(*b.dmd);
    json hist = json::array();
    for (const auto& op : b.dmd_history) hist.push_back(to_json(op));
    j["dmd_history"] = hist;
  }
  if (b.transition_library) {
    j["transition_library"] = to_json(*b.transition_library);
    j["transition_operator"] = to_string(b.transition_operator);
    j["transition_neighbors"] = b.transition_neighbors;
  }
  if (b.regressor) j["regressor"] = to_json(*b.regressor);
  if (b.reconstruction_library) {
    j["reconstruction_library"] = to_json(*b.reconstruction_library);
    j["reconstruction_neighbors"] = b.reconstruction_neighbors;
  }
  j["noise"] = {{"q", to_json(b.noise.q)},
                {"r", to_json(b.noise.r)},
                {"alpha", b.noise.alpha},
                {"floor", b.noise.floor},
                {"adapt_q", b.noise.adapt_q},
                {"adapt_r", b.noise.adapt_r}};
  j["report"] = {{"costs", b.report.costs},
                 {"regressor_mse", b.report.regressor_mse},
                 {"reconstruction_pairs", b.report.reconstruction_pairs},
                 {"warnings", b.report.warnings}};
  return j;
}

inline SurrogateBundle bundle_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kBundleFormat)
      throw DataError("not a surrogate bundle");
    if (j.at("version").get<int>() != kFormatVersion)
      throw DataError("unsupported bundle version " + j.at("version").dump());
    SurrogateBundle b;
    b.method = parse_method(j.at("method").get<std::string>());
    b.reconstruction = parse_reconstruction(j.at("reconstruction").get<std::string>());
    b.delay = j.at("delay").get<Index>();
    b.observation_dim = j.at("observation_dim").get<Index>();
    b.state_dim = j.at("state_dim").get<Index>();
    b.training_length = j.at("training_length").get<Index>();
    if (j.contains("dmd")) {
      b.dmd = operator_from_json(j.at("dmd"));
      for (const auto& op : j.at("dmd_history")) b.dmd_history.push_back(operator_from_json(op));
    }
    if (j.contains("transition_library")) {
      b.transition_library = library_from_json(j.at("transition_library"));
      b.transition_operator = parse_operator(j.at("transition_operator").get<std::string>());
      b.transition_neighbors = j.at("transition_neighbors").get<Index>();
    }
    if (j.contains("regressor")) b.regressor = regressor_from_json(j.at("regressor"));
    if (j.contains("reconstruction_library")) {
      b.reconstruction_library = library_from_json(j.at("reconstruction_library"));
      b.reconstruction_neighbors = j.at("reconstruction_neighbors").get<Index>();
    }
    const json& n = j.at("noise");
    b.noise = NoiseEstimate::initial(matrix_from_json(n.at("q"), "noise q"),
                                     matrix_from_json(n.at("r"), "noise r"),
                                     n.at("alpha").get<double>(), n.at("floor").get<double>());
    b.noise.adapt_q = n.at("adapt_q").get<bool>();
    b.noise.adapt_r = n.at("adapt_r").get<bool>();
    const json& r = j.at("report");
    b.report.costs = r.at("costs").get<std::vector<double>>();
    b.report.regressor_mse = r.at("regressor_mse").get<double>();
    b.report.reconstruction_pairs = r.at("reconstruction_pairs").get<Index>();
    b.report.warnings = r.at("warnings").get<std::vector<std::string>>();
    try {
      b.validate();
    } catch (const ContractViolation& e) {
      throw DataError(e.what());
    }
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed bundle: ") + e.what());
  }
}

inline void write_bundle(const fs::path& path, const SurrogateBundle& b) {
  write_file_atomic(path, bundle_to_json(b).dump(1) + "\n");
}

inline SurrogateBundle read_bundle(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return bundle_from_json(j);
}

// ---------------------------------------------------------------------------
// Datasets: one table per trajectory (x0.. then y0..) plus a manifest.

inline std::string trajectory_file_name(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%04lld.tsv", static_cast<long long>(i));
  return buf;
}

inline Table trajectory_table(const Trajectory& t) {
  Table tab;
  tab.columns = indexed_names("x", t.states.cols());
  const auto ys = indexed_names("y", t.observations.cols());
  tab.columns.insert(tab.columns.end(), ys.begin(), ys.end());
  tab.values.resize(t.length(), t.states.cols() + t.observations.cols());
  tab.values << t.states, t.observations;
  return tab;
}

inline json write_dataset(const fs::path& dir, const TrajectorySet& set, const std::string& model) {
  fs::create_directories(dir);
  json files = json::array();
  for (Index i = 0; i < set.size(); ++i) {
    const std::string name = trajectory_file_name(i);
    const std::string content = format_table(trajectory_table(set.trajectories[static_cast<std::size_t>(i)]));
    write_file_atomic(dir / name, content);
    files.push_back({{"name", name}, {"hash", hex64(fnv1a(content))}});
  }
  json manifest{{"format", kDatasetFormat},
                {"version", kFormatVersion},
                {"model", model},
                {"trajectories", set.size()},
                {"length", set.length()},
                {"state_dim", set.state_dim()},
                {"observation_dim", set.observation_dim()},
                {"seed", set.seed},
                {"files", files}};
  write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
  return manifest;
}

inline TrajectorySet read_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != kDatasetFormat)
      throw DataError(dir.string() + ": not a dataset manifest");
    if (manifest.at("version").get<int>() != kFormatVersion)
      throw DataError(dir.string() + ": unsupported dataset version");
    const Index n = manifest.at("state_dim").get<Index>();
    const Index m = manifest.at("observation_dim").get<Index>();
    const Index len = manifest.at("length").get<Index>();
    TrajectorySet set;
    set.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& f : manifest.at("files")) {
      const fs::path path = dir / f.at("name").get<std::string>();
      const std::string content = read_file(path);
      if (hex64(fnv1a(content)) != f.at("hash").get<std::string>())
        throw DataError(path.string() + ": content hash does not match the manifest");
      const Table tab = parse_table(content, path.string());
      if (tab.values.cols() != n + m)
        throw DataError(path.string() + ": expected " + std::to_string(n + m) + " columns");
      if (tab.values.rows() != len)
        throw DataError(path.string() + ": expected " + std::to_string(len) + " rows");
      Trajectory t;
      t.states = tab.values.leftCols(n);
      t.observations = tab.values.rightCols(m);
      set.trajectories.push_back(std::move(t));
    }
    if (set.size() != manifest.at("trajectories").get<Index>())
      throw DataError(dir.string() + ": trajectory count does not match the manifest");
    return set;
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": malformed manifest: " + e.what());
  }
}

/// Observation stream file: a table whose columns y0..y{m-1} are read.
inline Matrix read_observation_stream(const fs::path& path) {
  const Table t = read_table(path);
  std::vector<Index> cols;
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    if (!t.columns[i].empty() && t.columns[i][0] == 'y') cols.push_back(static_cast<Index>(i));
  if (cols.empty()) throw DataError(path.string() + ": no observation columns (y0, y1, ...)");
  Matrix y(t.values.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) y.col(static_cast<Index>(c)) = t.values.col(cols[c]);
  return y;
}

}  // namespace mfda::io
