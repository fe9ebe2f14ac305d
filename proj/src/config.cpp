#include "t2ipal/config.hpp"

#include <fstream>
#include <set>

#include "t2ipal/errors.hpp"

namespace t2ipal::config {

using nlohmann::json;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "gamma",         "alpha",        "beta",          "eta",
      "tau",           "learning_rate", "batch_size",   "epochs",
      "seed",          "M",            "D_tok",         "D",
      "N_im",          "N_te",         "C",             "weight_decay",
      "momentum",      "lr_schedule",  "ranking_form",  "noise_sigma",
      "background_prob", "text_image_alignment", "fusion_weight", "classes",
      "synonyms"};
  return keys;
}

double get_real(const json& doc, const char* key, double fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_number()) throw InvalidArgument(std::string("config key \"") + key + "\" must be a number");
  return v.get<double>();
}

std::uint64_t get_uint(const json& doc, const char* key, std::uint64_t fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_number_unsigned()) {
    // nlohmann stores non-negative literals as unsigned; anything else is negative or fractional
    throw InvalidArgument(std::string("config key \"") + key + "\" must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::size_t get_size(const json& doc, const char* key, std::size_t fallback) {
  return static_cast<std::size_t>(get_uint(doc, key, fallback));
}

std::string get_string(const json& doc, const char* key, const std::string& fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_string()) throw InvalidArgument(std::string("config key \"") + key + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace

corpus::CategorySet RunConfig::categories() const {
  return corpus::CategorySet(train.class_names);
}

corpus::SynonymMap RunConfig::synonym_map() const {
  const auto classes = categories();
  corpus::SynonymMap out;
  for (const auto& [surface, name] : synonyms) {
    auto index = classes.index_of(name);
    if (!index) throw InvalidArgument("synonym \"" + surface + "\" names unknown class \"" + name + "\"");
    out[surface] = *index;
  }
  return out;
}

RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known_keys().contains(key)) throw InvalidArgument("unknown config key \"" + key + "\"");
  }

  RunConfig cfg;
  auto& t = cfg.train;
  t.hp.gamma = get_real(doc, "gamma", t.hp.gamma);
  t.hp.alpha = get_real(doc, "alpha", t.hp.alpha);
  t.hp.beta = get_real(doc, "beta", t.hp.beta);
  t.hp.eta = get_real(doc, "eta", t.hp.eta);
  t.hp.tau = get_real(doc, "tau", t.hp.tau);
  t.learning_rate = get_real(doc, "learning_rate", t.learning_rate);
  t.batch_size = get_size(doc, "batch_size", t.batch_size);
  t.epochs = get_size(doc, "epochs", t.epochs);
  t.seed = get_uint(doc, "seed", t.seed);
  t.context_length = get_size(doc, "M", t.context_length);
  t.encoder.token_dim = get_size(doc, "D_tok", t.encoder.token_dim);
  t.encoder.feature_dim = get_size(doc, "D", t.encoder.feature_dim);
  t.encoder.image_grid = get_size(doc, "N_im", t.encoder.image_grid);
  t.encoder.text_capacity = get_size(doc, "N_te", t.encoder.text_capacity);
  t.encoder.noise_sigma = get_real(doc, "noise_sigma", t.encoder.noise_sigma);
  t.encoder.background_prob = get_real(doc, "background_prob", t.encoder.background_prob);
  t.encoder.text_image_alignment =
      get_real(doc, "text_image_alignment", t.encoder.text_image_alignment);
  t.weight_decay = get_real(doc, "weight_decay", t.weight_decay);
  t.momentum = get_real(doc, "momentum", t.momentum);
  t.fusion_weight = get_real(doc, "fusion_weight", t.fusion_weight);
  t.lr_schedule = training::lr_schedule_from_string(
      get_string(doc, "lr_schedule", training::to_string(t.lr_schedule)));
  t.ranking_form = training::ranking_form_from_string(
      get_string(doc, "ranking_form", training::to_string(t.ranking_form)));

  if (doc.contains("classes")) {
    const auto& classes = doc.at("classes");
    if (!classes.is_array()) throw InvalidArgument("config key \"classes\" must be an array");
    std::vector<std::string> names;
    for (const auto& c : classes) {
      if (!c.is_string()) throw InvalidArgument("class names must be strings");
      names.push_back(c.get<std::string>());
    }
    t.class_names = corpus::CategorySet(std::move(names)).names();
  }
  if (doc.contains("C")) {
    const std::size_t c = get_size(doc, "C", 0);
    if (!doc.contains("classes")) throw InvalidArgument("config gives C without a class list");
    if (c != t.class_names.size()) {
      throw InvalidArgument("config C = " + std::to_string(c) + " but " +
                            std::to_string(t.class_names.size()) + " classes are listed");
    }
  }
  if (doc.contains("synonyms")) {
    const auto& syn = doc.at("synonyms");
    if (!syn.is_object()) throw InvalidArgument("config key \"synonyms\" must be an object");
    for (const auto& [surface, name] : syn.items()) {
      if (!name.is_string()) throw InvalidArgument("synonym targets must be class-name strings");
      cfg.synonyms[surface] = name.get<std::string>();
    }
    if (!cfg.synonyms.empty() && t.class_names.empty()) {
      throw InvalidArgument("config gives synonyms without a class list");
    }
    if (!t.class_names.empty()) cfg.synonym_map();
  }

  if (t.class_names.empty()) {
    // Check everything else against a placeholder class list.
    auto probe = t;
    probe.class_names = {"a", "b"};
    probe.validate();
  } else {
    t.validate();
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte position; count lines up to it for the message
    std::ifstream again(path);
    std::size_t line = 1;
    std::size_t pos = 0;
    for (char ch; pos < e.byte && again.get(ch); ++pos) line += ch == '\n' ? 1 : 0;
    throw ParseError(std::string("invalid JSON in ") + path.string() + ": " + e.what(), line);
  }
  return parse_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  nlohmann::ordered_json out;
  out["gamma"] = t.hp.gamma;
  out["alpha"] = t.hp.alpha;
  out["beta"] = t.hp.beta;
  out["eta"] = t.hp.eta;
  out["tau"] = t.hp.tau;
  out["learning_rate"] = t.learning_rate;
  out["batch_size"] = t.batch_size;
  out["epochs"] = t.epochs;
  out["seed"] = t.seed;
  out["M"] = t.context_length;
  out["D_tok"] = t.encoder.token_dim;
  out["D"] = t.encoder.feature_dim;
  out["N_im"] = t.encoder.image_grid;
  out["N_te"] = t.encoder.text_capacity;
  out["noise_sigma"] = t.encoder.noise_sigma;
  out["background_prob"] = t.encoder.background_prob;
  out["text_image_alignment"] = t.encoder.text_image_alignment;
  out["weight_decay"] = t.weight_decay;
  out["momentum"] = t.momentum;
  out["lr_schedule"] = training::to_string(t.lr_schedule);
  out["ranking_form"] = training::to_string(t.ranking_form);
  out["fusion_weight"] = t.fusion_weight;
  if (!t.class_names.empty()) {
    out["C"] = t.class_names.size();
    out["classes"] = t.class_names;
  }
  if (!cfg.synonyms.empty()) {
    nlohmann::ordered_json syn = nlohmann::ordered_json::object();
    for (const auto& [surface, name] : cfg.synonyms) syn[surface] = name;
    out["synonyms"] = std::move(syn);
  }
  return out;
}

}  // namespace t2ipal::config
