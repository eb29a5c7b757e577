#include "pcdesc/config.hpp"

#include "pcdesc/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace pcdesc {

void EvalConfig::validate() const {
  auto check = [](bool ok, const char* what) { require(ok, ErrorCode::Configuration, what); };
  check(keypoints >= 1, "eval.keypoints must be >= 1");
  check(nms_radius >= 0.0, "eval.nms_radius must be >= 0");
  check(repeat_radius > 0.0, "eval.repeat_radius must be > 0");
  check(max_rte > 0.0 && max_rre > 0.0, "eval.max_rte and eval.max_rre must be > 0");
  check(positive_radius > 0.0, "eval.positive_radius must be > 0");
  check(recall_max_n >= 1, "eval.recall_max_n must be >= 1");
  check(min_points >= 1, "eval.min_points must be >= 1");
  check(max_yaw >= 0.0 && max_yaw <= 180.0, "eval.max_yaw must lie in [0, 180]");
  check(sigma >= 0.0, "eval.sigma must be >= 0");
  ransac(seed).validate();
}

reg::RansacConfig EvalConfig::ransac(std::uint64_t s) const {
  reg::RansacConfig r;
  r.inlier_threshold = inlier_threshold;
  r.max_iterations = max_iterations;
  r.confidence = confidence;
  r.threads = ransac_threads;
  r.seed = s;
  return r;
}

void PipelineConfig::validate() const {
  arch.validate();
  loss.validate();
  train.validate();
  global.validate();
  eval.validate();
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class I>
std::string fmt_int(I v) { return std::to_string(v); }

template <class N>
N parse_number(const std::string& s) {
  N v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument(s);
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument(s);
}

struct Field {
  std::string section, key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class V>
Field num(const char* section, const char* key, V& v) {
  if constexpr (std::is_floating_point_v<V>)
    return {section, key, [&v](const std::string& s) { v = parse_number<V>(s); }, [&v] { return fmt(v); }};
  else
    return {section, key, [&v](const std::string& s) { v = parse_number<V>(s); }, [&v] { return fmt_int(v); }};
}

Field flag(const char* section, const char* key, bool& v) {
  return {section, key, [&v](const std::string& s) { v = parse_bool(s); }, [&v] { return std::string(v ? "true" : "false"); }};
}

void arch_fields(nn::ArchConfig& a, std::vector<Field>& f) {
  const char* s = "arch";
  f.push_back(num(s, "conv_width", a.conv_width));
  f.push_back(num(s, "flex1_width", a.flex1_width));
  f.push_back(num(s, "descriptor_dim", a.descriptor_dim));
  f.push_back(num(s, "k1", a.k1));
  f.push_back(num(s, "d1", a.d1));
  f.push_back(num(s, "k2", a.k2));
  f.push_back(num(s, "d2", a.d2));
  f.push_back(num(s, "se_reduction", a.se_reduction));
  f.push_back(num(s, "coarse_ratio", a.coarse_ratio));
  f.push_back(num(s, "det_w1", a.det_w1));
  f.push_back(num(s, "det_w2", a.det_w2));
  f.push_back(num(s, "det_w3", a.det_w3));
  f.push_back({s, "aggregator",
               [&a](const std::string& v) {
                 try {
                   a.aggregator = nn::aggregator_from_string(v);
                 } catch (const Error&) {
                   throw std::invalid_argument(v);
                 }
               },
               [&a] { return std::string(nn::to_string(a.aggregator)); }});
  f.push_back(num(s, "proj1_width", a.proj1_width));
  f.push_back(num(s, "proj2_width", a.proj2_width));
  f.push_back(num(s, "proj_k", a.proj_k));
  f.push_back(num(s, "proj_d", a.proj_d));
  f.push_back(num(s, "att_w1", a.att_w1));
  f.push_back(num(s, "att_w2", a.att_w2));
  f.push_back(num(s, "clusters", a.clusters));
  f.push_back(num(s, "global_dim", a.global_dim));
  f.push_back(num(s, "aggregate_points", a.aggregate_points));
}

std::vector<Field> all_fields(PipelineConfig& c) {
  std::vector<Field> f;
  arch_fields(c.arch, f);
  {
    auto& l = c.loss;
    const char* s = "loss";
    f.push_back(num(s, "mu", l.mu));
    f.push_back(num(s, "eta_bal", l.eta_bal));
    f.push_back(num(s, "kappa", l.kappa));
    f.push_back(num(s, "asr_k", l.asr_k));
    f.push_back(num(s, "lambda", l.lambda));
    f.push_back(num(s, "alpha", l.alpha));
    f.push_back(num(s, "beta", l.beta));
    f.push_back(num(s, "gamma", l.gamma));
  }
  {
    auto& t = c.train;
    const char* s = "train";
    f.push_back(num(s, "steps", t.steps));
    f.push_back(num(s, "steps_per_epoch", t.steps_per_epoch));
    f.push_back(num(s, "pairs", t.pairs));
    f.push_back(num(s, "anchors", t.anchors));
    f.push_back(num(s, "max_yaw", t.max_yaw));
    f.push_back(num(s, "sigma", t.sigma));
    f.push_back(num(s, "tau", t.tau));
    f.push_back(num(s, "input_points", t.input_points));
    f.push_back(num(s, "lr", t.lr));
    f.push_back(num(s, "lr_every", t.lr_every));
    f.push_back(num(s, "detector_lr_scale", t.detector_lr_scale));
    f.push_back(flag(s, "detector_to_encoder", t.detector_to_encoder));
    f.push_back(num(s, "checkpoint_every", t.checkpoint_every));
    f.push_back(num(s, "seed", t.seed));
  }
  {
    auto& g = c.global;
    const char* s = "global";
    f.push_back(num(s, "steps", g.steps));
    f.push_back(num(s, "steps_per_epoch", g.steps_per_epoch));
    f.push_back(num(s, "positives", g.positives));
    f.push_back(num(s, "negatives", g.negatives));
    f.push_back(num(s, "pos_radius", g.pos_radius));
    f.push_back(num(s, "neg_radius", g.neg_radius));
    f.push_back(num(s, "max_yaw", g.max_yaw));
    f.push_back(num(s, "sigma", g.sigma));
    f.push_back(num(s, "input_points", g.input_points));
    f.push_back(num(s, "lr", g.lr));
    f.push_back(num(s, "lr_decay", g.lr_decay));
    f.push_back(num(s, "lr_every", g.lr_every));
    f.push_back(num(s, "lr_floor", g.lr_floor));
    f.push_back(num(s, "checkpoint_every", g.checkpoint_every));
    f.push_back(num(s, "seed", g.seed));
  }
  {
    auto& e = c.eval;
    const char* s = "eval";
    f.push_back(num(s, "keypoints", e.keypoints));
    f.push_back(num(s, "nms_radius", e.nms_radius));
    f.push_back(num(s, "repeat_radius", e.repeat_radius));
    f.push_back({s, "match_mode",
                 [&e](const std::string& v) {
                   try {
                     e.match_mode = reg::match_mode_from_string(v);
                   } catch (const Error&) {
                     throw std::invalid_argument(v);
                   }
                 },
                 [&e] { return std::string(reg::to_string(e.match_mode)); }});
    f.push_back(num(s, "inlier_threshold", e.inlier_threshold));
    f.push_back(num(s, "max_iterations", e.max_iterations));
    f.push_back(num(s, "confidence", e.confidence));
    f.push_back(num(s, "ransac_threads", e.ransac_threads));
    f.push_back(flag(s, "saliency_refit", e.saliency_refit));
    f.push_back(num(s, "max_rte", e.max_rte));
    f.push_back(num(s, "max_rre", e.max_rre));
    f.push_back(num(s, "positive_radius", e.positive_radius));
    f.push_back(num(s, "recall_max_n", e.recall_max_n));
    f.push_back(num(s, "min_points", e.min_points));
    f.push_back(num(s, "max_yaw", e.max_yaw));
    f.push_back(num(s, "sigma", e.sigma));
    f.push_back(num(s, "seed", e.seed));
  }
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_fields(const std::vector<Field>& fields) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

}  // namespace

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
  PipelineConfig c = std::move(base);
  const auto fields = all_fields(c);
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::Parse, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields) known = known || f.section == section;
      require(known, ErrorCode::Configuration, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Parse, where + ": expected key = value");
    if (section.empty()) fail(ErrorCode::Parse, where + ": key outside of a section");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields)
      if (f.section == section && f.key == key) field = &f;
    require(field != nullptr, ErrorCode::Configuration, where + ": unknown key '" + section + "." + key + "'");
    try {
      field->set(value);
    } catch (const std::invalid_argument&) {
      fail(ErrorCode::Parse, where + ": invalid value '" + value + "' for " + section + "." + key);
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::string format_config(const PipelineConfig& c) {
  PipelineConfig copy = c;
  return format_fields(all_fields(copy));
}

std::string format_arch(const nn::ArchConfig& a) {
  nn::ArchConfig copy = a;
  std::vector<Field> f;
  arch_fields(copy, f);
  return format_fields(f);
}

}  // namespace pcdesc
