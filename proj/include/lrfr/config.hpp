#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lrfr/datagen.hpp"
#include "lrfr/model.hpp"
#include "lrfr/train.hpp"

namespace lrfr {

// Plain-text sectioned key=value files. '#' starts a comment, blank
// lines are skipped, duplicate keys within a section are errors. Values
// are kept raw; typed accessors parse on demand and name the offending
// section/key/line on failure.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static ConfigFile parse_file(const std::filesystem::path& path);
  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key,
                  int64_t fallback) const;

  const std::map<std::string, std::map<std::string, Entry>>& sections() const {
    return sections_;
  }
  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::string origin_;
};

// Everything one run needs: loss/augmentation/optimizer settings plus
// the dataset source and network shape. data_dir empty means the
// dataset is generated from the [data] spec.
struct RunConfig {
  TrainConfig train;
  DatasetSpec data;
  NetworkConfig network;
  std::string data_dir;

  void validate() const;
};

// Binds sections [loss], [augment], [optim], [data], [model]. Unknown
// sections or keys are errors (they are almost always typos). input_size
// lives in [data] and is propagated to the plan and the network.
RunConfig parse_run_config(const ConfigFile& f);
RunConfig load_run_config(const std::filesystem::path& path);

// "7:1,14:1,20:2" -> plan entries; a bare resolution means weight 1.
std::vector<AugmentationPlan::Entry> parse_plan_entries(
    const std::string& text);

// Comma-separated integer list ("12,17"); empty string -> empty list.
std::vector<int> parse_int_list(const std::string& text);

}  // namespace lrfr
