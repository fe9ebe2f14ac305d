#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "t2ipal/corpus.hpp"
#include "t2ipal/training.hpp"

namespace t2ipal::config {

/// Everything a run reads from its JSON config.
struct RunConfig {
  training::TrainConfig train;
  std::map<std::string, std::string> synonyms;  // surface word -> class name

  corpus::CategorySet categories() const;
  corpus::SynonymMap synonym_map() const;
};

/// Parses a config object. Missing keys keep their defaults; unknown keys,
/// wrong types and out-of-range values throw InvalidArgument. The class list
/// may be omitted, in which case only class-free commands can use it.
RunConfig parse_config(const nlohmann::json& doc);

/// Reads and parses a config file. Malformed JSON throws ParseError.
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved config, defaults filled in. parse_config(to_json(c)) == c.
nlohmann::ordered_json to_json(const RunConfig& cfg);

}  // namespace t2ipal::config
