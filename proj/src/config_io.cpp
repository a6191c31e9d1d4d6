#include "fpt/config_io.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

namespace fpt {

std::string to_string(Mode mode) { return mode == Mode::train ? "train" : "eval"; }

std::string to_string(PyramidKind kind) {
  return kind == PyramidKind::instance ? "instance" : "pixel";
}

std::string to_string(Topology topology) {
  return topology == Topology::all_pairs ? "all_pairs" : "adjacent";
}

std::string to_string(Similarity similarity) {
  return similarity == Similarity::dot ? "dot" : "euclidean";
}

Mode parse_mode(std::string_view text) {
  if (text == "train") return Mode::train;
  if (text == "eval") return Mode::eval;
  throw ConfigError("mode must be train or eval, got '" + std::string(text) + "'");
}

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.pyramid.levels = {{256, 20, 20}, {256, 10, 10}, {256, 5, 5}};
  return cfg;
}

RunConfig RunConfig::tiny() {
  RunConfig cfg;
  cfg.fpt.d_model = 8;
  cfg.pyramid.levels = {{8, 8, 8}, {8, 4, 4}, {8, 2, 2}};
  return cfg;
}

void RunConfig::validate() const {
  fpt.validate();
  pyramid.validate();
  if (!(gradcheck_h > 0.0)) throw ConfigError("gradcheck.h must be positive");
  if (!(gradcheck_tol >= 0.0)) throw ConfigError("gradcheck.tol must be non-negative");
  if (bench_repeats == 0) throw ConfigError("bench.repeats must be >= 1");
}

namespace {

// Reads one YAML mapping, remembering its dotted path so errors can name the field.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.IsMap()) fail(path_, node_, "expected a mapping");
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.insert(key).second) fail(field(key), kv.first, "duplicate key");
    }
  }

  // Reject keys nobody asked for.
  void finish() const {
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!used_.contains(key)) fail(field(key), kv.first, "unknown key");
    }
  }

  std::optional<YAML::Node> get(const std::string& key) {
    used_.insert(key);
    if (!seen_.contains(key)) return std::nullopt;
    return node_[key];
  }

  template <std::unsigned_integral T>
  void read(const std::string& key, T& out) {
    if (auto n = get(key)) out = static_cast<T>(as_unsigned(*n, field(key)));
  }
  void read(const std::string& key, double& out) {
    if (auto n = get(key)) out = as_double(*n, field(key));
  }
  void read(const std::string& key, bool& out) {
    if (auto n = get(key)) {
      const std::string s = scalar(*n, field(key));
      if (s == "true") {
        out = true;
      } else if (s == "false") {
        out = false;
      } else {
        fail(field(key), *n, "expected true or false, got '" + s + "'");
      }
    }
  }
  template <class Enum>
  void read_enum(const std::string& key, Enum& out,
                 std::initializer_list<std::pair<const char*, Enum>> choices) {
    auto n = get(key);
    if (!n) return;
    const std::string s = scalar(*n, field(key));
    std::string allowed;
    for (const auto& [name, value] : choices) {
      if (s == name) {
        out = value;
        return;
      }
      allowed += allowed.empty() ? name : std::string(" | ") + name;
    }
    fail(field(key), *n, "expected " + allowed + ", got '" + s + "'");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] static void fail(const std::string& field, const YAML::Node& node,
                                const std::string& what) {
    const int line = node.Mark().line;
    throw ConfigError("config: line " + (line >= 0 ? std::to_string(line + 1) : std::string("?")) +
                      ", field '" + field + "': " + what);
  }

  static std::string scalar(const YAML::Node& node, const std::string& field) {
    if (!node.IsScalar()) fail(field, node, "expected a scalar");
    return node.Scalar();
  }

  static std::uint64_t as_unsigned(const YAML::Node& node, const std::string& field) {
    const std::string s = scalar(node, field);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
      fail(field, node, "expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  static double as_double(const YAML::Node& node, const std::string& field) {
    const std::string s = scalar(node, field);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
      fail(field, node, "expected a number, got '" + s + "'");
    }
    return v;
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
  std::set<std::string> used_;
};

LevelSpec parse_level(const YAML::Node& node, const std::string& path) {
  Section s(node, path);
  LevelSpec level;
  s.read("channels", level.channels);
  s.read("height", level.height);
  s.read("width", level.width);
  s.finish();
  return level;
}

void parse_fpt(const YAML::Node& node, FptConfig& cfg) {
  Section s(node, "fpt");
  PyramidKind kind = PyramidKind::instance;
  s.read_enum("kind", kind, {{"instance", PyramidKind::instance}, {"pixel", PyramidKind::pixel}});
  cfg = FptConfig::defaults(kind);
  s.read("d_model", cfg.d_model);
  s.read("n_st", cfg.n_st);
  s.read("n_gt", cfg.n_gt);
  if (auto n = s.get("square_size")) {
    if (n->IsNull()) {
      cfg.square_size.reset();
    } else {
      cfg.square_size = Section::as_unsigned(*n, "fpt.square_size");
    }
  }
  if (auto n = s.get("dropblock")) {
    Section db(*n, "fpt.dropblock");
    db.read("block_size", cfg.dropblock.block_size);
    db.read("keep_prob", cfg.dropblock.keep_prob);
    db.finish();
  }
  s.read_enum("topology", cfg.topology,
              {{"all_pairs", Topology::all_pairs}, {"adjacent", Topology::adjacent}});
  const std::initializer_list<std::pair<const char*, Similarity>> sims{
      {"dot", Similarity::dot}, {"euclidean", Similarity::euclidean}};
  s.read_enum("st_similarity", cfg.st_similarity, sims);
  s.read_enum("gt_similarity", cfg.gt_similarity, sims);
  s.read("scale_dot", cfg.scale_dot);
  s.read("use_st", cfg.use_st);
  s.read("use_gt", cfg.use_gt);
  s.read("use_rt", cfg.use_rt);
  s.finish();
}

void parse_pyramid(const YAML::Node& node, PyramidSpec& spec) {
  Section s(node, "pyramid");
  s.read("batch", spec.batch);
  spec.levels.clear();
  if (auto n = s.get("levels")) {
    if (!n->IsSequence()) Section::fail("pyramid.levels", *n, "expected a list of levels");
    for (std::size_t i = 0; i < n->size(); ++i) {
      spec.levels.push_back(parse_level((*n)[i], "pyramid.levels[" + std::to_string(i) + "]"));
    }
  }
  if (auto n = s.get("ufp")) {
    Section u(*n, "pyramid.ufp");
    UfpSpec ufp;
    if (auto in = u.get("input")) {
      ufp.input = parse_level(*in, "pyramid.ufp.input");
    } else {
      Section::fail("pyramid.ufp.input", *n, "missing");
    }
    if (auto k = u.get("kernels")) {
      if (!k->IsSequence()) Section::fail("pyramid.ufp.kernels", *k, "expected a list");
      ufp.kernels.clear();
      for (std::size_t i = 0; i < k->size(); ++i) {
        ufp.kernels.push_back(Section::as_unsigned(
            (*k)[i], "pyramid.ufp.kernels[" + std::to_string(i) + "]"));
      }
    }
    u.finish();
    spec.ufp = ufp;
  }
  s.finish();
}

std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  // Keep it a float in YAML's eyes.
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

void emit_level(YAML::Emitter& out, const LevelSpec& level) {
  out << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "channels" << YAML::Value << level.channels;
  out << YAML::Key << "height" << YAML::Value << level.height;
  out << YAML::Key << "width" << YAML::Value << level.width;
  out << YAML::EndMap;
}

}  // namespace

RunConfig parse_config(std::string_view yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config: line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  RunConfig cfg = RunConfig::defaults();
  if (root.IsNull()) return cfg;
  try {
    Section s(root, "");
    s.read("seed", cfg.seed);
    if (auto n = s.get("mode")) {
      try {
        cfg.mode = parse_mode(Section::scalar(*n, "mode"));
      } catch (const ConfigError& e) {
        Section::fail("mode", *n, e.what());
      }
    }
    s.read("threads", cfg.threads);
    if (auto n = s.get("fpt")) parse_fpt(*n, cfg.fpt);
    if (auto n = s.get("pyramid")) parse_pyramid(*n, cfg.pyramid);
    if (auto n = s.get("gradcheck")) {
      Section g(*n, "gradcheck");
      g.read("h", cfg.gradcheck_h);
      g.read("tol", cfg.gradcheck_tol);
      g.finish();
    }
    if (auto n = s.get("bench")) {
      Section b(*n, "bench");
      b.read("repeats", cfg.bench_repeats);
      b.finish();
    }
    s.finish();
  } catch (const YAML::Exception& e) {
    throw ConfigError("config: line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_config(const RunConfig& cfg) {
  YAML::Emitter out;
  out.SetBoolFormat(YAML::TrueFalseBool);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "mode" << YAML::Value << to_string(cfg.mode);
  out << YAML::Key << "threads" << YAML::Value << cfg.threads;

  const FptConfig& f = cfg.fpt;
  out << YAML::Key << "fpt" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << to_string(f.kind);
  out << YAML::Key << "d_model" << YAML::Value << f.d_model;
  out << YAML::Key << "n_st" << YAML::Value << f.n_st;
  out << YAML::Key << "n_gt" << YAML::Value << f.n_gt;
  out << YAML::Key << "square_size" << YAML::Value;
  if (f.square_size) {
    out << *f.square_size;
  } else {
    out << YAML::Null;
  }
  out << YAML::Key << "dropblock" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "block_size" << YAML::Value << f.dropblock.block_size;
  out << YAML::Key << "keep_prob" << YAML::Value << format_double(f.dropblock.keep_prob);
  out << YAML::EndMap;
  out << YAML::Key << "topology" << YAML::Value << to_string(f.topology);
  out << YAML::Key << "st_similarity" << YAML::Value << to_string(f.st_similarity);
  out << YAML::Key << "gt_similarity" << YAML::Value << to_string(f.gt_similarity);
  out << YAML::Key << "scale_dot" << YAML::Value << f.scale_dot;
  out << YAML::Key << "use_st" << YAML::Value << f.use_st;
  out << YAML::Key << "use_gt" << YAML::Value << f.use_gt;
  out << YAML::Key << "use_rt" << YAML::Value << f.use_rt;
  out << YAML::EndMap;

  const PyramidSpec& p = cfg.pyramid;
  out << YAML::Key << "pyramid" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch" << YAML::Value << p.batch;
  if (p.ufp) {
    out << YAML::Key << "ufp" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "input" << YAML::Value;
    emit_level(out, p.ufp->input);
    out << YAML::Key << "kernels" << YAML::Value << YAML::Flow << p.ufp->kernels;
    out << YAML::EndMap;
  } else {
    out << YAML::Key << "levels" << YAML::Value << YAML::BeginSeq;
    for (const LevelSpec& level : p.levels) emit_level(out, level);
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;

  out << YAML::Key << "gradcheck" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "h" << YAML::Value << format_double(cfg.gradcheck_h);
  out << YAML::Key << "tol" << YAML::Value << format_double(cfg.gradcheck_tol);
  out << YAML::EndMap;
  out << YAML::Key << "bench" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "repeats" << YAML::Value << cfg.bench_repeats;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace fpt
