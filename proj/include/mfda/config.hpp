#pragma once

// Experiment configuration: strict JSON schema (unknown keys rejected, errors
// anchored to a line of the source document), resolved-config output with
// every default filled in, and built-in presets for the benchmark suites.

#include "mfda/common.hpp"
#include "mfda/embedding.hpp"
#include "mfda/io.hpp"
#include "mfda/models.hpp"
#include "mfda/pipeline.hpp"

#include "json.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mfda {

inline constexpr int kConfigSchemaVersion = 1;

/// Configuration error already carrying its source location.
struct AnchoredConfigError : ConfigError {
  using ConfigError::ConfigError;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelSpec model{PendulumParams{}, 0.05};
  ObservationSpec observation = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  InitialConditionSampler initial_condition;
  std::optional<InitialConditionSampler> test_initial_condition;  // defaults to the above

  Index trajectories = 40;
  Index length = 800;
  std::uint64_t seed = 1;
  Index test_length = 1000;
  std::uint64_t test_seed = 1001;

  PipelineConfig pipeline;
  bool delay_auto = false;  // choose d by false nearest neighbours
  FnnOptions fnn;

  bool regressor_hidden_default = true;  // widths follow the resolved delay

  std::vector<double> kde_times;  // model time units; step k = round(t / dt)
  Index kde_grid_points = 60;

  const InitialConditionSampler& test_ic() const {
    return test_initial_condition ? *test_initial_condition : initial_condition;
  }
};

namespace config_detail {

using json = nlohmann::json;

/// Line of every JSON pointer in a document, found by a lightweight scan.
inline std::map<std::string, int> pointer_lines(const std::string& text) {
  struct Frame {
    bool object;
    std::string base;
    std::string key;
    Index index = 0;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;
  bool expect_key = false;
  auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  };
  auto value_pointer = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.base + "/" + (f.object ? escape(f.key) : std::to_string(f.index));
  };
  auto mark_value = [&]() {
    const std::string p = value_pointer();
    if (!lines.count(p)) lines[p] = line;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      continue;
    }
    if (c == '"') {
      std::string s;
      ++i;
      for (; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) {
          s += text[++i];
          continue;
        }
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      if (expect_key && !stack.empty() && stack.back().object) {
        stack.back().key = s;
        lines[value_pointer()] = line;
        expect_key = false;
      } else {
        mark_value();
      }
      continue;
    }
    if (c == '{' || c == '[') {
      mark_value();
      const std::string base = value_pointer();
      stack.push_back(Frame{c == '{', base, "", 0});
      expect_key = c == '{';
      continue;
    }
    if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
      expect_key = false;
      continue;
    }
    if (c == ',') {
      if (!stack.empty()) {
        if (stack.back().object) expect_key = true;
        else ++stack.back().index;
      }
      continue;
    }
    if (!std::isspace(static_cast<unsigned char>(c)) && c != ':') mark_value();
  }
  return lines;
}

/// Typed, strict access to a parsed document with line-anchored errors.
class Reader {
 public:
  Reader(std::string origin, const std::string& text) : origin_(std::move(origin)) {
    try {
      root_ = json::parse(text);
    } catch (const json::parse_error& e) {
      throw AnchoredConfigError(origin_ + ":" + std::to_string(line_of_byte(text, e.byte)) +
                                ": syntax error: " + e.what());
    }
    lines_ = pointer_lines(text);
  }

  explicit Reader(json root) : origin_("<config>"), root_(std::move(root)) {}

  const json& root() const { return root_; }

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    int line = 0;
    for (std::string p = pointer;; p = p.substr(0, p.rfind('/'))) {
      auto it = lines_.find(p);
      if (it != lines_.end()) {
        line = it->second;
        break;
      }
      if (p.empty()) break;
    }
    throw AnchoredConfigError(origin_ + ":" + std::to_string(line) + ": " +
                              (pointer.empty() ? "/" : pointer) + ": " + msg);
  }

  /// Verifies that `node` is an object whose keys are all in `allowed`.
  void object(const json& node, const std::string& pointer,
              const std::set<std::string>& allowed) const {
    if (!node.is_object()) fail(pointer, "expected an object");
    for (auto it = node.begin(); it != node.end(); ++it)
      if (!allowed.count(it.key())) fail(pointer + "/" + it.key(), "unknown key '" + it.key() + "'");
  }

  template <class T>
  T get(const json& node, const std::string& pointer, const std::string& key, T fallback) const {
    if (!node.contains(key)) return fallback;
    return as<T>(node.at(key), pointer + "/" + key);
  }

  template <class T>
  T require(const json& node, const std::string& pointer, const std::string& key) const {
    if (!node.contains(key)) fail(pointer, "missing required key '" + key + "'");
    return as<T>(node.at(key), pointer + "/" + key);
  }

  template <class T>
  T as(const json& v, const std::string& pointer) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(pointer, "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(pointer, "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
            fail(pointer, "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(pointer, "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(pointer, "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      fail(pointer, e.what());
    }
  }

  std::vector<double> numbers(const json& v, const std::string& pointer) const {
    if (!v.is_array()) fail(pointer, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(as<double>(v[i], pointer + "/" + std::to_string(i)));
    return out;
  }

 private:
  static int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    return line;
  }

  std::string origin_;
  json root_;
  std::map<std::string, int> lines_;
};

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline InitialConditionSampler parse_ic(const Reader& rd, const json& node, const std::string& p,
                                        const ModelSpec& model) {
  rd.object(node, p, {"mean", "stddev", "spinup_steps", "perturbation", "perturbation_modes"});
  InitialConditionSampler ic;
  const Index n = model.state_dim();
  if (node.contains("mean")) {
    ic.mean = to_vector(rd.numbers(node.at("mean"), p + "/mean"));
    if (ic.mean.size() != n) rd.fail(p + "/mean", "length must equal the state dimension");
  }
  if (node.contains("stddev")) {
    ic.stddev = to_vector(rd.numbers(node.at("stddev"), p + "/stddev"));
    if (ic.stddev.size() != n) rd.fail(p + "/stddev", "length must equal the state dimension");
    if ((ic.stddev.array() < 0).any()) rd.fail(p + "/stddev", "entries must be >= 0");
  }
  ic.spinup_steps = rd.get<int>(node, p, "spinup_steps", 0);
  ic.perturbation = rd.get<double>(node, p, "perturbation", 0.0);
  ic.perturbation_modes = rd.get<int>(node, p, "perturbation_modes", 3);
  if (ic.spinup_steps < 0) rd.fail(p + "/spinup_steps", "must be >= 0");
  if (ic.perturbation < 0) rd.fail(p + "/perturbation", "must be >= 0");
  return ic;
}

inline json ic_to_json(const InitialConditionSampler& ic) {
  return json{{"mean", std::vector<double>(ic.mean.data(), ic.mean.data() + ic.mean.size())},
              {"stddev", std::vector<double>(ic.stddev.data(), ic.stddev.data() + ic.stddev.size())},
              {"spinup_steps", ic.spinup_steps},
              {"perturbation", ic.perturbation},
              {"perturbation_modes", ic.perturbation_modes}};
}

inline ModelSpec parse_model(const Reader& rd, const json& node) {
  const std::string p = "/model";
  rd.object(node, p, {"kind", "dt", "params"});
  const std::string kind = rd.require<std::string>(node, p, "kind");
  ModelSpec m;
  const json empty = json::object();
  const json& prm = node.contains("params") ? node.at("params") : empty;
  const std::string pp = p + "/params";
  if (kind == "pendulum") {
    rd.object(prm, pp, {"g", "length", "sigma1_sq", "sigma2_sq", "sqrt_dt_noise"});
    PendulumParams q;
    q.g = rd.get(prm, pp, "g", q.g);
    q.length = rd.get(prm, pp, "length", q.length);
    q.sigma1_sq = rd.get(prm, pp, "sigma1_sq", q.sigma1_sq);
    q.sigma2_sq = rd.get(prm, pp, "sigma2_sq", q.sigma2_sq);
    q.sqrt_dt_noise = rd.get(prm, pp, "sqrt_dt_noise", q.sqrt_dt_noise);
    m.params = q;
    m.dt = 0.05;
  } else if (kind == "triad") {
    rd.object(prm, pp, {"omega", "gamma", "beta", "a", "sigma"});
    TriadParams q;
    q.omega = rd.get(prm, pp, "omega", q.omega);
    q.gamma = rd.get(prm, pp, "gamma", q.gamma);
    q.beta = rd.get(prm, pp, "beta", q.beta);
    q.a = rd.get(prm, pp, "a", q.a);
    q.sigma = rd.get(prm, pp, "sigma", q.sigma);
    m.params = q;
    m.dt = 0.1;
  } else if (kind == "lorenz63") {
    rd.object(prm, pp, {"a", "b", "r", "noise"});
    Lorenz63Params q;
    q.a = rd.get(prm, pp, "a", q.a);
    q.b = rd.get(prm, pp, "b", q.b);
    q.r = rd.get(prm, pp, "r", q.r);
    if (prm.contains("noise")) {
      const auto v = rd.numbers(prm.at("noise"), pp + "/noise");
      if (v.size() != 3) rd.fail(pp + "/noise", "expected 3 entries");
      q.noise = {v[0], v[1], v[2]};
    }
    m.params = q;
    m.dt = 0.01;
  } else if (kind == "allen_cahn") {
    rd.object(prm, pp, {"epsilon", "theta", "grid_points", "noise"});
    AllenCahnParams q;
    q.epsilon = rd.get(prm, pp, "epsilon", q.epsilon);
    q.theta = rd.get(prm, pp, "theta", q.theta);
    q.grid_points = rd.get(prm, pp, "grid_points", q.grid_points);
    q.noise = rd.get(prm, pp, "noise", q.noise);
    m.params = q;
    m.dt = 1.0 / 500.0;
  } else {
    rd.fail(p + "/kind", "unknown model kind '" + kind +
                             "' (expected pendulum, triad, lorenz63 or allen_cahn)");
  }
  m.dt = rd.get(node, p, "dt", m.dt);
  try {
    m.validate();
  } catch (const AnchoredConfigError&) {
    throw;
  } catch (const ConfigError& e) {
    rd.fail(p, e.what());
  }
  return m;
}

inline json model_to_json(const ModelSpec& m) {
  json prm = std::visit(
      [](const auto& q) -> json {
        using P = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<P, PendulumParams>)
          return {{"g", q.g}, {"length", q.length}, {"sigma1_sq", q.sigma1_sq},
                  {"sigma2_sq", q.sigma2_sq}, {"sqrt_dt_noise", q.sqrt_dt_noise}};
        else if constexpr (std::is_same_v<P, TriadParams>)
          return {{"omega", q.omega}, {"gamma", q.gamma}, {"beta", q.beta}, {"a", q.a},
                  {"sigma", q.sigma}};
        else if constexpr (std::is_same_v<P, Lorenz63Params>)
          return {{"a", q.a}, {"b", q.b}, {"r", q.r},
                  {"noise", std::vector<double>(q.noise.begin(), q.noise.end())}};
        else
          return {{"epsilon", q.epsilon}, {"theta", q.theta}, {"grid_points", q.grid_points},
                  {"noise", q.noise}};
      },
      m.params);
  return json{{"kind", to_string(m.kind())}, {"dt", m.dt}, {"params", prm}};
}

inline ObservationSpec parse_observation(const Reader& rd, const json& node, Index n) {
  const std::string p = "/observation";
  rd.object(node, p, {"kind", "indices", "h", "noise_variance"});
  const std::string kind = rd.require<std::string>(node, p, "kind");
  const double r = rd.require<double>(node, p, "noise_variance");
  if (r < 0) rd.fail(p + "/noise_variance", "must be >= 0");
  try {
    if (kind == "selector") {
      if (!node.contains("indices")) rd.fail(p, "selector observation needs 'indices'");
      std::vector<Index> idx;
      const json& arr = node.at("indices");
      if (!arr.is_array() || arr.empty()) rd.fail(p + "/indices", "expected a non-empty array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const Index v = rd.as<Index>(arr[i], p + "/indices/" + std::to_string(i));
        if (v < 0 || v >= n) rd.fail(p + "/indices/" + std::to_string(i), "index out of range");
        idx.push_back(v);
      }
      const Index m = static_cast<Index>(idx.size());
      return ObservationSpec::selector(n, std::move(idx), r * Matrix::Identity(m, m));
    }
    if (kind == "sum") return ObservationSpec::sum_of_components(n, r);
    if (kind == "matrix") {
      if (!node.contains("h")) rd.fail(p, "matrix observation needs 'h'");
      const json& rows = node.at("h");
      if (!rows.is_array() || rows.empty()) rd.fail(p + "/h", "expected an array of rows");
      Matrix h(static_cast<Index>(rows.size()), n);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto row = rd.numbers(rows[i], p + "/h/" + std::to_string(i));
        if (static_cast<Index>(row.size()) != n)
          rd.fail(p + "/h/" + std::to_string(i), "row length must equal the state dimension");
        h.row(static_cast<Index>(i)) = to_vector(row).transpose();
      }
      return ObservationSpec::linear(h, r * Matrix::Identity(h.rows(), h.rows()));
    }
  } catch (const AnchoredConfigError&) {
    throw;
  } catch (const ConfigError& e) {
    rd.fail(p, e.what());
  }
  rd.fail(p + "/kind", "unknown observation kind '" + kind + "' (expected selector, sum or matrix)");
}

inline json observation_to_json(const ObservationSpec& o) {
  json j;
  j["noise_variance"] = o.noise_cov(0, 0);
  switch (o.kind) {
    case ObservationKind::kSelector:
      j["kind"] = "selector";
      j["indices"] = o.selection;
      break;
    case ObservationKind::kSum: j["kind"] = "sum"; break;
    case ObservationKind::kMatrix: {
      j["kind"] = "matrix";
      json rows = json::array();
      for (Index i = 0; i < o.h.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(o.h.cols()));
        for (Index c = 0; c < o.h.cols(); ++c) row[static_cast<std::size_t>(c)] = o.h(i, c);
        rows.push_back(row);
      }
      j["h"] = rows;
      break;
    }
  }
  return j;
}

}  // namespace config_detail

/// Parses and validates a configuration document. `origin` names the source
/// in error messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  using namespace config_detail;
  const Reader rd(origin, text);
  const json& root = rd.root();
  rd.object(root, "", {"schema_version", "name", "model", "observation", "initial_condition",
                       "dataset", "test", "filter", "surrogate", "embedding", "reconstruction",
                       "output"});
  const int version = rd.require<int>(root, "", "schema_version");
  if (version != kConfigSchemaVersion)
    rd.fail("/schema_version", "unsupported schema version " + std::to_string(version));
  ExperimentConfig cfg;
  cfg.name = rd.get<std::string>(root, "", "name", cfg.name);
  if (!root.contains("model")) rd.fail("", "missing required key 'model'");
  cfg.model = parse_model(rd, root.at("model"));
  const Index n = cfg.model.state_dim();
  if (!root.contains("observation")) rd.fail("", "missing required key 'observation'");
  cfg.observation = parse_observation(rd, root.at("observation"), n);
  if (root.contains("initial_condition"))
    cfg.initial_condition = parse_ic(rd, root.at("initial_condition"), "/initial_condition", cfg.model);

  const json empty = json::object();
  {
    const std::string p = "/dataset";
    const json& d = root.contains("dataset") ? root.at("dataset") : empty;
    rd.object(d, p, {"trajectories", "length", "seed"});
    cfg.trajectories = rd.get(d, p, "trajectories", cfg.trajectories);
    cfg.length = rd.get(d, p, "length", cfg.length);
    cfg.seed = rd.get(d, p, "seed", cfg.seed);
    if (cfg.trajectories < 1) rd.fail(p + "/trajectories", "must be >= 1");
    if (cfg.length < 2) rd.fail(p + "/length", "must be >= 2");
  }
  {
    const std::string p = "/test";
    const json& d = root.contains("test") ? root.at("test") : empty;
    rd.object(d, p, {"length", "seed", "initial_condition"});
    cfg.test_length = rd.get(d, p, "length", cfg.test_length);
    cfg.test_seed = rd.get(d, p, "seed", cfg.seed + 1000);
    if (cfg.test_length < 0) rd.fail(p + "/length", "must be >= 0");
    if (d.contains("initial_condition"))
      cfg.test_initial_condition = parse_ic(rd, d.at("initial_condition"), p + "/initial_condition", cfg.model);
  }
  PipelineConfig& pc = cfg.pipeline;
  {
    const std::string p = "/filter";
    const json& d = root.contains("filter") ? root.at("filter") : empty;
    rd.object(d, p, {"ensemble_size", "adaptive", "inflation", "jitter", "alpha", "cov_floor",
                     "initial_q_scale", "initial_r_scale"});
    pc.ensemble_size = rd.get(d, p, "ensemble_size", pc.ensemble_size);
    pc.filter.adaptive = rd.get(d, p, "adaptive", pc.filter.adaptive);
    pc.filter.inflation = rd.get(d, p, "inflation", pc.filter.inflation);
    pc.filter.jitter = rd.get(d, p, "jitter", pc.filter.jitter);
    pc.alpha = rd.get(d, p, "alpha", pc.alpha);
    pc.cov_floor = rd.get(d, p, "cov_floor", pc.cov_floor);
    pc.initial_q_scale = rd.get(d, p, "initial_q_scale", pc.initial_q_scale);
    pc.initial_r_scale = rd.get(d, p, "initial_r_scale", pc.initial_r_scale);
    if (pc.ensemble_size < 2) rd.fail(p + "/ensemble_size", "must be >= 2");
    if (!(pc.alpha > 0 && pc.alpha <= 1)) rd.fail(p + "/alpha", "must be in (0, 1]");
    if (!(pc.filter.inflation >= 1)) rd.fail(p + "/inflation", "must be >= 1");
    if (pc.cov_floor < 0) rd.fail(p + "/cov_floor", "must be >= 0");
    if (!(pc.initial_q_scale > 0)) rd.fail(p + "/initial_q_scale", "must be > 0");
    if (!(pc.initial_r_scale > 0)) rd.fail(p + "/initial_r_scale", "must be > 0");
  }
  {
    const std::string p = "/surrogate";
    const json& d = root.contains("surrogate") ? root.at("surrogate") : empty;
    rd.object(d, p, {"method", "dictionary", "degree", "iterations", "tolerance", "window_update",
                     "window_length", "window_cadence", "transition_operator",
                     "transition_neighbors", "transition_lambda",
                     "transition_jacobian_cutoff"});
    try {
      pc.method = io::parse_method(rd.get<std::string>(d, p, "method", to_string(pc.method)));
    } catch (const AnchoredConfigError&) {
      throw;
    } catch (const ConfigError& e) {
      rd.fail(p + "/method", e.what());
    }
    const std::string dict = rd.get<std::string>(d, p, "dictionary", "identity");
    if (dict == "identity") pc.dictionary = DictionaryKind::kIdentity;
    else if (dict == "polynomial") pc.dictionary = DictionaryKind::kPolynomial;
    else rd.fail(p + "/dictionary", "unknown dictionary '" + dict + "' (expected identity or polynomial)");
    pc.dictionary_degree = rd.get(d, p, "degree", pc.dictionary_degree);
    pc.refine_iterations = rd.get(d, p, "iterations", pc.refine_iterations);
    pc.dmd_tolerance = rd.get(d, p, "tolerance", pc.dmd_tolerance);
    pc.window_update = rd.get(d, p, "window_update", pc.window_update);
    pc.window_length = rd.get(d, p, "window_length", pc.window_length);
    pc.window_cadence = rd.get(d, p, "window_cadence", pc.window_cadence);
    try {
      pc.transition_operator = io::parse_operator(
          rd.get<std::string>(d, p, "transition_operator", to_string(pc.transition_operator)));
    } catch (const AnchoredConfigError&) {
      throw;
    } catch (const ConfigError& e) {
      rd.fail(p + "/transition_operator", e.what());
    }
    pc.transition_neighbors = rd.get(d, p, "transition_neighbors", pc.transition_neighbors);
    pc.transition_lambda = rd.get(d, p, "transition_lambda", pc.transition_lambda);
    pc.transition_jacobian_cutoff =
        rd.get(d, p, "transition_jacobian_cutoff", pc.transition_jacobian_cutoff);
    if (!(pc.transition_jacobian_cutoff >= 0))
      rd.fail(p + "/transition_jacobian_cutoff", "must be >= 0");
    if (pc.dictionary_degree < 1) rd.fail(p + "/degree", "must be >= 1");
    if (pc.refine_iterations < 1) rd.fail(p + "/iterations", "must be >= 1");
    if (!(pc.dmd_tolerance > 0)) rd.fail(p + "/tolerance", "must be > 0");
    if (pc.window_length < 0) rd.fail(p + "/window_length", "must be >= 0");
    if (pc.window_cadence < 0) rd.fail(p + "/window_cadence", "must be >= 0");
    if (pc.transition_neighbors < 1) rd.fail(p + "/transition_neighbors", "must be >= 1");
  }
  {
    const std::string p = "/embedding";
    const json& d = root.contains("embedding") ? root.at("embedding") : empty;
    rd.object(d, p, {"delay", "fnn"});
    if (d.contains("delay")) {
      const json& v = d.at("delay");
      if (v.is_string()) {
        if (v.get<std::string>() != "fnn") rd.fail(p + "/delay", "expected an integer or \"fnn\"");
        cfg.delay_auto = true;
      } else {
        pc.delay = rd.as<Index>(v, p + "/delay");
        if (pc.delay < 1) rd.fail(p + "/delay", "must be >= 1");
      }
    }
    if (d.contains("fnn")) {
      const json& f = d.at("fnn");
      rd.object(f, p + "/fnn", {"d_max", "r_tol", "threshold", "theiler_window"});
      cfg.fnn.d_max = rd.get(f, p + "/fnn", "d_max", cfg.fnn.d_max);
      cfg.fnn.r_tol = rd.get(f, p + "/fnn", "r_tol", cfg.fnn.r_tol);
      cfg.fnn.threshold = rd.get(f, p + "/fnn", "threshold", cfg.fnn.threshold);
      cfg.fnn.theiler_window = rd.get(f, p + "/fnn", "theiler_window", cfg.fnn.theiler_window);
      if (cfg.fnn.d_max < 1) rd.fail(p + "/fnn/d_max", "must be >= 1");
    }
  }
  {
    const std::string p = "/reconstruction";
    const json& d = root.contains("reconstruction") ? root.at("reconstruction") : empty;
    rd.object(d, p, {"kind", "hidden", "activation", "optimizer", "learning_rate",
                     "final_lr_fraction", "epochs", "batch_size", "neighbors", "lambda"});
    try {
      pc.reconstruction =
          io::parse_reconstruction(rd.get<std::string>(d, p, "kind", to_string(pc.reconstruction)));
    } catch (const AnchoredConfigError&) {
      throw;
    } catch (const ConfigError& e) {
      rd.fail(p + "/kind", e.what());
    }
    pc.reconstruction_neighbors = rd.get(d, p, "neighbors", pc.reconstruction_neighbors);
    pc.reconstruction_lambda = rd.get(d, p, "lambda", pc.reconstruction_lambda);
    if (pc.reconstruction_neighbors < 1) rd.fail(p + "/neighbors", "must be >= 1");
    if (pc.reconstruction == ReconstructionKind::kRegressor) {
      const Index input_dim = pc.delay * cfg.observation.observation_dim();
      RegressorSpec s = RegressorSpec::defaults_for(input_dim);
      if (d.contains("hidden")) {
        const json& h = d.at("hidden");
        if (!h.is_array() || h.empty()) rd.fail(p + "/hidden", "expected a non-empty array");
        s.hidden.clear();
        cfg.regressor_hidden_default = false;
        for (std::size_t i = 0; i < h.size(); ++i) {
          const Index w = rd.as<Index>(h[i], p + "/hidden/" + std::to_string(i));
          if (w < 1) rd.fail(p + "/hidden/" + std::to_string(i), "must be >= 1");
          s.hidden.push_back(w);
        }
      }
      try {
        s.activation = parse_activation(rd.get<std::string>(d, p, "activation", to_string(s.activation)));
      } catch (const AnchoredConfigError&) {
        throw;
      } catch (const ConfigError& e) {
        rd.fail(p + "/activation", e.what());
      }
      s.optimizer = rd.get(d, p, "optimizer", s.optimizer);
      if (s.optimizer != "adam" && s.optimizer != "sgd")
        rd.fail(p + "/optimizer", "expected adam or sgd");
      s.learning_rate = rd.get(d, p, "learning_rate", s.learning_rate);
      s.final_lr_fraction = rd.get(d, p, "final_lr_fraction", s.final_lr_fraction);
      s.epochs = rd.get(d, p, "epochs", s.epochs);
      s.batch_size = rd.get(d, p, "batch_size", s.batch_size);
      if (!(s.learning_rate > 0)) rd.fail(p + "/learning_rate", "must be > 0");
      if (!(s.final_lr_fraction > 0 && s.final_lr_fraction <= 1))
        rd.fail(p + "/final_lr_fraction", "must be in (0, 1]");
      if (s.epochs < 1) rd.fail(p + "/epochs", "must be >= 1");
      if (s.batch_size < 0) rd.fail(p + "/batch_size", "must be >= 0");
      s.seed = cfg.seed;
      pc.regressor = s;
    }
  }
  {
    const std::string p = "/output";
    const json& d = root.contains("output") ? root.at("output") : empty;
    rd.object(d, p, {"kde_times", "kde_grid_points"});
    if (d.contains("kde_times")) cfg.kde_times = rd.numbers(d.at("kde_times"), p + "/kde_times");
    cfg.kde_grid_points = rd.get(d, p, "kde_grid_points", cfg.kde_grid_points);
    if (cfg.kde_grid_points < 2) rd.fail(p + "/kde_grid_points", "must be >= 2");
  }
  pc.seed = cfg.seed;
  return cfg;
}

inline ExperimentConfig read_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string());
}

/// Resolved configuration with every default written out.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  using namespace config_detail;
  const PipelineConfig& pc = cfg.pipeline;
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["name"] = cfg.name;
  j["model"] = model_to_json(cfg.model);
  j["observation"] = observation_to_json(cfg.observation);
  j["initial_condition"] = ic_to_json(cfg.initial_condition);
  j["dataset"] = {{"trajectories", cfg.trajectories}, {"length", cfg.length}, {"seed", cfg.seed}};
  j["test"] = {{"length", cfg.test_length}, {"seed", cfg.test_seed}};
  if (cfg.test_initial_condition) j["test"]["initial_condition"] = ic_to_json(*cfg.test_initial_condition);
  j["filter"] = {{"ensemble_size", pc.ensemble_size},   {"adaptive", pc.filter.adaptive},
                 {"inflation", pc.filter.inflation},    {"jitter", pc.filter.jitter},
                 {"alpha", pc.alpha},                   {"cov_floor", pc.cov_floor},
                 {"initial_q_scale", pc.initial_q_scale}, {"initial_r_scale", pc.initial_r_scale}};
  j["surrogate"] = {{"method", to_string(pc.method)},
                    {"dictionary", pc.dictionary == DictionaryKind::kPolynomial ? "polynomial" : "identity"},
                    {"degree", pc.dictionary_degree},
                    {"iterations", pc.refine_iterations},
                    {"tolerance", pc.dmd_tolerance},
                    {"window_update", pc.window_update},
                    {"window_length", pc.window_length},
                    {"window_cadence", pc.window_cadence},
                    {"transition_operator", to_string(pc.transition_operator)},
                    {"transition_neighbors", pc.transition_neighbors},
                    {"transition_lambda", pc.transition_lambda},
                    {"transition_jacobian_cutoff", pc.transition_jacobian_cutoff}};
  j["embedding"] = {{"fnn", {{"d_max", cfg.fnn.d_max}, {"r_tol", cfg.fnn.r_tol},
                             {"threshold", cfg.fnn.threshold}, {"theiler_window", cfg.fnn.theiler_window}}}};
  if (cfg.delay_auto) j["embedding"]["delay"] = "fnn";
  else j["embedding"]["delay"] = pc.delay;
  json rec{{"kind", to_string(pc.reconstruction)},
           {"neighbors", pc.reconstruction_neighbors},
           {"lambda", pc.reconstruction_lambda}};
  if (pc.regressor) {
    const RegressorSpec& s = *pc.regressor;
    rec["hidden"] = s.hidden;
    rec["activation"] = to_string(s.activation);
    rec["optimizer"] = s.optimizer;
    rec["learning_rate"] = s.learning_rate;
    rec["final_lr_fraction"] = s.final_lr_fraction;
    rec["epochs"] = s.epochs;
    rec["batch_size"] = s.batch_size;
  }
  j["reconstruction"] = rec;
  j["output"] = {{"kde_times", cfg.kde_times}, {"kde_grid_points", cfg.kde_grid_points}};
  return j;
}

/// Fixes the delay length (e.g. after false-nearest-neighbour selection) and
/// the default regressor widths that depend on it.
inline void resolve_delay(ExperimentConfig& cfg, Index delay) {
  require(delay >= 1, "delay length must be >= 1");
  cfg.pipeline.delay = delay;
  cfg.delay_auto = false;
  if (cfg.pipeline.regressor && cfg.regressor_hidden_default)
    cfg.pipeline.regressor->hidden =
        RegressorSpec::defaults_for(delay * cfg.observation.observation_dim()).hidden;
}

/// Copy with a different base seed (dataset, test and training streams).
inline ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.test_seed = seed + (cfg.test_seed - cfg.seed);
  cfg.seed = seed;
  cfg.pipeline.seed = seed;
  if (cfg.pipeline.regressor) cfg.pipeline.regressor->seed = seed;
  return cfg;
}

}  // namespace mfda
