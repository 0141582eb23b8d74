#include "lrfr/config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "lrfr/common.hpp"

namespace lrfr {
namespace {

std::string trim(const std::string& s) {
  size_t a = 0;
  size_t b = s.size();
  while (a < b && std::isspace(uint8_t(s[a]))) ++a;
  while (b > a && std::isspace(uint8_t(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(text, &pos);
    check(trim(text.substr(pos)).empty(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("config: ", where, ": expected a number, got '", text, "'");
  }
}

int64_t parse_int(const std::string& text, const std::string& where) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(text, &pos);
    check(trim(text.substr(pos)).empty(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("config: ", where, ": expected an integer, got '", text, "'");
  }
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text,
                                    const std::string& origin) {
  ConfigFile f;
  f.origin_ = origin;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      check(line.back() == ']', "config: ", origin, ":", line_no,
            ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      check(!section.empty(), "config: ", origin, ":", line_no,
            ": empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    check(eq != std::string::npos, "config: ", origin, ":", line_no,
          ": expected key = value, got '", line, "'");
    check(!section.empty(), "config: ", origin, ":", line_no,
          ": key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    check(!key.empty(), "config: ", origin, ":", line_no, ": empty key");
    const std::string value = trim(line.substr(eq + 1));
    const bool fresh =
        f.sections_[section].emplace(key, Entry{value, line_no}).second;
    check(fresh, "config: ", origin, ":", line_no, ": duplicate key '", key,
          "' in [", section, "]");
  }
  return f;
}

ConfigFile ConfigFile::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot read ", path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path.string());
}

bool ConfigFile::has(const std::string& section,
                     const std::string& key) const {
  const auto sit = sections_.find(section);
  return sit != sections_.end() && sit->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section,
                            const std::string& key) const {
  const auto sit = sections_.find(section);
  check(sit != sections_.end(), "config: ", origin_, ": missing section [",
        section, "]");
  const auto kit = sit->second.find(key);
  check(kit != sit->second.end(), "config: ", origin_, ": missing key '",
        key, "' in [", section, "]");
  return kit->second.value;
}

std::string ConfigFile::get_or(const std::string& section,
                               const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double ConfigFile::get_double(const std::string& section,
                              const std::string& key, double fallback) const {
  if (!has(section, key)) return fallback;
  return parse_double(get(section, key), "[" + section + "] " + key);
}

int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                            int64_t fallback) const {
  if (!has(section, key)) return fallback;
  return parse_int(get(section, key), "[" + section + "] " + key);
}

std::vector<AugmentationPlan::Entry> parse_plan_entries(
    const std::string& text) {
  std::vector<AugmentationPlan::Entry> out;
  for (const std::string& tok : split(text, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    const size_t colon = t.find(':');
    AugmentationPlan::Entry e;
    if (colon == std::string::npos) {
      e.resolution_px = int(parse_int(t, "augment resolutions"));
      e.weight = 1.0;
    } else {
      e.resolution_px =
          int(parse_int(trim(t.substr(0, colon)), "augment resolutions"));
      e.weight = parse_double(trim(t.substr(colon + 1)),
                              "augment resolution weight");
    }
    out.push_back(e);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const std::string& tok : split(text, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    out.push_back(int(parse_int(t, "integer list")));
  }
  return out;
}

void RunConfig::validate() const {
  train.validate();
  data.validate();
  network.validate();
  check(train.plan.input_size == data.input_size,
        "config: plan input size ", train.plan.input_size,
        " vs data input size ", data.input_size);
  check(network.input_size == data.input_size, "config: network input size ",
        network.input_size, " vs data input size ", data.input_size);
}

RunConfig parse_run_config(const ConfigFile& f) {
  static const std::map<std::string, std::set<std::string>> kKnown = {
      {"loss", {"dist_kind", "p", "beta", "lambda", "cosface_s", "cosface_m"}},
      {"augment", {"resolutions", "flip_prob"}},
      {"optim",
       {"epochs", "batch_size", "lr", "lr_milestones", "warmup_epochs",
        "momentum", "weight_decay", "seed"}},
      {"data",
       {"dir", "n_identities", "images_per_identity", "input_size",
        "translation_px", "rotation_deg", "brightness_delta", "seed"}},
      {"model", {"channel_widths", "embedding_dim"}},
  };
  for (const auto& [section, keys] : f.sections()) {
    const auto it = kKnown.find(section);
    check(it != kKnown.end(), "config: ", f.origin(), ": unknown section [",
          section, "]");
    for (const auto& [key, entry] : keys)
      check(it->second.count(key) > 0, "config: ", f.origin(), ":",
            entry.line, ": unknown key '", key, "' in [", section, "]");
  }

  RunConfig c;
  c.data.n_identities = int(f.get_int("data", "n_identities", 50));
  c.data.images_per_identity =
      int(f.get_int("data", "images_per_identity", 40));
  c.data.input_size = int(f.get_int("data", "input_size", 112));
  c.data.translation_px = f.get_double("data", "translation_px", 3.0);
  c.data.rotation_deg = f.get_double("data", "rotation_deg", 4.0);
  c.data.brightness_delta = f.get_double("data", "brightness_delta", 0.08);
  c.data.seed = uint64_t(f.get_int("data", "seed", 0));
  c.data_dir = f.get_or("data", "dir", "");

  c.train.loss.dist_kind =
      dist_kind_from_name(f.get_or("loss", "dist_kind", "logexp"));
  c.train.loss.p = f.get_double("loss", "p", 1.0);
  c.train.loss.beta = f.get_double("loss", "beta", 1.0);
  c.train.loss.lambda = f.get_double("loss", "lambda", 1.0);
  c.train.loss.cosface_s = f.get_double("loss", "cosface_s", 48.0);
  c.train.loss.cosface_m = f.get_double("loss", "cosface_m", 0.4);

  c.train.plan.entries =
      parse_plan_entries(f.get_or("augment", "resolutions", "7:1,14:1,20:2"));
  c.train.plan.input_size = c.data.input_size;
  c.train.flip_prob = f.get_double("augment", "flip_prob", 0.5);

  c.train.epochs = int(f.get_int("optim", "epochs", 20));
  c.train.batch_size = int(f.get_int("optim", "batch_size", 64));
  c.train.lr = f.get_double("optim", "lr", 0.05);
  c.train.lr_milestones =
      parse_int_list(f.get_or("optim", "lr_milestones", "12,17"));
  c.train.warmup_epochs = int(f.get_int("optim", "warmup_epochs", 0));
  c.train.momentum = f.get_double("optim", "momentum", 0.9);
  c.train.weight_decay = f.get_double("optim", "weight_decay", 5e-4);
  c.train.seed = uint64_t(f.get_int("optim", "seed", 0));

  if (f.has("model", "channel_widths")) {
    c.network.channel_widths = parse_int_list(f.get("model", "channel_widths"));
  }
  c.network.embedding_dim = int(f.get_int("model", "embedding_dim", 128));
  c.network.input_size = c.data.input_size;

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(ConfigFile::parse_file(path));
}

}  // namespace lrfr
