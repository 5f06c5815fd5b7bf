#include "revnet/config.hpp"

#include <fstream>
#include <sstream>

namespace revnet {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<Index> parse_index_list(const std::string& v,
                                    const std::string& key) {
  std::vector<Index> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      out.push_back(static_cast<Index>(std::stoll(item)));
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer '" + item + "' in " + key);
    }
  }
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number '" + v + "' for " + key);
  }
}

Index parse_index(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<Index>(i);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer '" + v + "' for " + key);
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

void set_key(TrainConfig& cfg, const std::string& key,
             const std::string& value) {
  if (key == "family") {
    if (value == "resnet")
      cfg.arch.family = Family::resnet;
    else if (value == "revnet")
      cfg.arch.family = Family::revnet;
    else
      throw ConfigError("config: unknown family '" + value + "'");
  } else if (key == "bottleneck") {
    cfg.arch.bottleneck = parse_bool(value, key);
  } else if (key == "units") {
    cfg.arch.units = parse_index_list(value, key);
  } else if (key == "channels") {
    cfg.arch.channels = parse_index_list(value, key);
  } else if (key == "classes") {
    cfg.arch.classes = parse_index(value, key);
  } else if (key == "input") {
    // CxHxW
    std::vector<Index> dims;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, 'x'))
      dims.push_back(parse_index(trim(item), key));
    if (dims.size() != 3)
      throw ConfigError("config: input must be CxHxW, got '" + value + "'");
    cfg.arch.in_channels = dims[0];
    cfg.arch.in_height = dims[1];
    cfg.arch.in_width = dims[2];
  } else if (key == "lr") {
    cfg.lr = parse_double(value, key);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(value, key);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_double(value, key);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_index(value, key);
  } else if (key == "total_steps") {
    cfg.total_steps = parse_index(value, key);
  } else if (key == "decay_steps") {
    cfg.decay_steps = parse_index_list(value, key);
  } else if (key == "decay_factor") {
    cfg.decay_factor = parse_double(value, key);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_index(value, key));
  } else if (key == "precision") {
    if (value == "f32")
      cfg.precision = Precision::f32;
    else if (value == "f64")
      cfg.precision = Precision::f64;
    else
      throw ConfigError("config: precision must be f32 or f64, got '" +
                        value + "'");
  } else if (key == "angle_interval") {
    if (value == "off")
      cfg.angle_interval = 0;
    else
      cfg.angle_interval = parse_index(value, key);
  } else if (key == "engine") {
    if (value == "reversible")
      cfg.engine = Engine::reversible;
    else if (value == "stored")
      cfg.engine = Engine::stored;
    else
      throw ConfigError("config: engine must be reversible or stored, got '" +
                        value + "'");
  } else if (key == "augment") {
    if (value == "none")
      cfg.augment = Augment::none;
    else if (value == "crop_flip")
      cfg.augment = Augment::crop_flip;
    else
      throw ConfigError("config: augment must be none or crop_flip, got '" +
                        value + "'");
  } else if (key == "data") {
    if (value != "synthetic" && value.rfind("cifar10:", 0) != 0)
      throw ConfigError(
          "config: data must be 'synthetic' or 'cifar10:<path>', got '" +
          value + "'");
    cfg.data = value;
  } else if (key == "synthetic_margin") {
    cfg.synthetic_margin = parse_double(value, key);
  } else if (key == "synthetic_noise") {
    cfg.synthetic_noise = parse_double(value, key);
  } else if (key == "synthetic_count") {
    cfg.synthetic_count = parse_index(value, key);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " has no '='");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: override '" + assignment +
                      "' is not key=value");
  set_key(cfg, trim(assignment.substr(0, eq)),
          trim(assignment.substr(eq + 1)));
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "family = "
     << (cfg.arch.family == Family::resnet ? "resnet" : "revnet") << "\n";
  os << "bottleneck = " << (cfg.arch.bottleneck ? "true" : "false") << "\n";
  auto list = [&os](const std::string& key, const std::vector<Index>& v) {
    os << key << " = ";
    for (std::size_t i = 0; i < v.size(); ++i)
      os << (i ? "," : "") << v[i];
    os << "\n";
  };
  list("units", cfg.arch.units);
  list("channels", cfg.arch.channels);
  os << "classes = " << cfg.arch.classes << "\n";
  os << "input = " << cfg.arch.in_channels << "x" << cfg.arch.in_height << "x"
     << cfg.arch.in_width << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "momentum = " << cfg.momentum << "\n";
  os << "weight_decay = " << cfg.weight_decay << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "total_steps = " << cfg.total_steps << "\n";
  list("decay_steps", cfg.decay_steps);
  os << "decay_factor = " << cfg.decay_factor << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "precision = " << (cfg.precision == Precision::f32 ? "f32" : "f64")
     << "\n";
  os << "angle_interval = " << cfg.angle_interval << "\n";
  os << "engine = "
     << (cfg.engine == Engine::reversible ? "reversible" : "stored") << "\n";
  os << "augment = "
     << (cfg.augment == Augment::none ? "none" : "crop_flip") << "\n";
  os << "data = " << cfg.data << "\n";
  os << "synthetic_margin = " << cfg.synthetic_margin << "\n";
  os << "synthetic_noise = " << cfg.synthetic_noise << "\n";
  os << "synthetic_count = " << cfg.synthetic_count << "\n";
  return os.str();
}

}  // namespace revnet
