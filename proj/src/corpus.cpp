#include "t2ipal/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "t2ipal/errors.hpp"

namespace t2ipal::corpus {

namespace {

// Decodes one UTF-8 code point starting at `i`; returns its byte length.
// Malformed sequences are treated as single opaque bytes.
std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) {
      cp = (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
      return 2;
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      cp = (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
      return 3;
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      cp = (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) | (char32_t(c2) << 6) |
           char32_t(c3);
      return 4;
    }
  }
  cp = 0xFFFD;
  return 1;
}

// White_Space code points from the Unicode character database.
bool is_unicode_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 ||
         cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2F) || (u >= 0x3A && u <= 0x40) || (u >= 0x5B && u <= 0x60) ||
         (u >= 0x7B && u <= 0x7E);
}

std::string fold(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string fold_name(std::string_view raw) {
  auto words = tokenize(raw);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

void validate_labels(const std::vector<std::size_t>& labels) {
  if (labels.empty()) throw InvalidArgument("caption record has no labels");
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] <= labels[i - 1]) {
      throw InvalidArgument("caption labels must be strictly ascending");
    }
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  std::size_t start = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (start == std::string_view::npos) return;
    std::string_view raw = text.substr(start, end - start);
    while (!raw.empty() && is_ascii_punct(raw.front())) raw.remove_prefix(1);
    while (!raw.empty() && is_ascii_punct(raw.back())) raw.remove_suffix(1);
    if (!raw.empty()) tokens.push_back(fold(raw));
    start = std::string_view::npos;
  };
  while (i < text.size()) {
    char32_t cp = 0;
    const std::size_t len = decode_utf8(text, i, cp);
    if (is_unicode_space(cp)) {
      flush(i);
    } else if (start == std::string_view::npos) {
      start = i;
    }
    i += len;
  }
  flush(text.size());
  return tokens;
}

CategorySet::CategorySet(std::vector<std::string> names) {
  if (names.size() < 2) throw InvalidArgument("a category set needs at least two classes");
  names_.reserve(names.size());
  for (const auto& raw : names) {
    std::string name = fold_name(raw);
    if (name.empty()) throw InvalidArgument("class names must be non-empty");
    if (!index_.emplace(name, names_.size()).second) {
      throw InvalidArgument("duplicate class name '" + name + "'");
    }
    names_.push_back(std::move(name));
  }
}

CategorySet CategorySet::load(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (auto& line : read_lines(path)) {
    if (!tokenize(line).empty()) names.push_back(std::move(line));
  }
  return CategorySet(std::move(names));
}

std::optional<std::size_t> CategorySet::index_of(std::string_view name) const {
  auto it = index_.find(fold_name(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("error reading " + path.string());
  return lines;
}

SynonymMap load_synonyms(const std::filesystem::path& path, const CategorySet& classes) {
  SynonymMap synonyms;
  const auto lines = read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto& line = lines[n];
    if (tokenize(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected 'surface<TAB>class_name'", n + 1);
    const std::string surface = fold_name(line.substr(0, tab));
    const std::string target = line.substr(tab + 1);
    if (surface.empty()) throw ParseError("empty surface word", n + 1);
    auto index = classes.index_of(target);
    if (!index) throw InvalidArgument("synonym '" + surface + "' targets unknown class '" + target + "'");
    synonyms[surface] = *index;
  }
  return synonyms;
}

std::vector<std::uint8_t> CaptionRecord::multi_hot(std::size_t num_classes) const {
  std::vector<std::uint8_t> hot(num_classes, 0);
  for (auto label : labels) {
    if (label >= num_classes) {
      throw ConsistencyError("label index " + std::to_string(label) + " out of range for " +
                             std::to_string(num_classes) + " classes");
    }
    hot[label] = 1;
  }
  return hot;
}

NounFilter::NounFilter(const CategorySet& classes, const SynonymMap& synonyms)
    : num_classes_(classes.size()) {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    phrases_.push_back({tokenize(classes.name(i)), i});
  }
  for (const auto& [surface, label] : synonyms) {
    if (label >= num_classes_) {
      throw InvalidArgument("synonym '" + surface + "' targets class index " +
                            std::to_string(label) + " but only " +
                            std::to_string(num_classes_) + " classes exist");
    }
    auto words = tokenize(surface);
    if (words.empty()) throw InvalidArgument("synonym surface form is empty after tokenising");
    phrases_.push_back({std::move(words), label});
  }
  std::stable_sort(phrases_.begin(), phrases_.end(), [](const Phrase& a, const Phrase& b) {
    return a.words.size() > b.words.size();
  });
}

std::vector<std::string> NounFilter::vocabulary() const {
  std::set<std::string> vocab;
  for (const auto& p : phrases_) {
    std::string joined;
    for (const auto& w : p.words) {
      if (!joined.empty()) joined += ' ';
      joined += w;
    }
    vocab.insert(std::move(joined));
  }
  return {vocab.begin(), vocab.end()};
}

std::pair<std::size_t, std::size_t> NounFilter::match_at(const std::vector<std::string>& tokens,
                                                         std::size_t pos) const {
  for (const auto& phrase : phrases_) {
    const std::size_t len = phrase.words.size();
    if (pos + len > tokens.size()) continue;
    bool ok = true;
    for (std::size_t k = 0; k + 1 < len && ok; ++k) ok = tokens[pos + k] == phrase.words[k];
    if (!ok) continue;
    const std::string& last = phrase.words.back();
    const std::string& tok = tokens[pos + len - 1];
    if (tok == last || tok == last + "s" || tok == last + "es") return {len, phrase.label};
  }
  return {0, 0};
}

std::vector<std::size_t> NounFilter::match(std::string_view caption) const {
  std::vector<std::size_t> labels;
  for (const auto& token : canonical_tokens(caption)) {
    if (const auto* label = std::get_if<std::size_t>(&token)) labels.push_back(*label);
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

std::vector<CanonicalToken> NounFilter::canonical_tokens(std::string_view caption) const {
  const auto tokens = tokenize(caption);
  std::vector<CanonicalToken> out;
  std::size_t pos = 0;
  while (pos < tokens.size()) {
    const auto [len, label] = match_at(tokens, pos);
    if (len > 0) {
      out.emplace_back(label);
      pos += len;
    } else {
      out.emplace_back(tokens[pos]);
      ++pos;
    }
  }
  return out;
}

NounFilter build_noun_filter(const CategorySet& classes, const SynonymMap& synonyms) {
  return NounFilter(classes, synonyms);
}

std::optional<CaptionRecord> filter_caption(std::string_view caption, const NounFilter& filter) {
  auto labels = filter.match(caption);
  if (labels.empty()) return std::nullopt;
  return CaptionRecord{std::string(caption), std::move(labels)};
}

std::vector<CaptionRecord> load_corpus(const std::filesystem::path& path) {
  std::vector<CaptionRecord> records;
  const auto lines = read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto& line = lines[n];
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), n + 1);
    }
    if (!obj.is_object() || obj.size() != 2 || !obj.contains("text") ||
        !obj.contains("labels") || !obj["text"].is_string() || !obj["labels"].is_array()) {
      throw ParseError("expected {\"text\": string, \"labels\": [int]}", n + 1);
    }
    CaptionRecord rec;
    rec.text = obj["text"].get<std::string>();
    for (const auto& v : obj["labels"]) {
      if (!v.is_number_unsigned()) throw ParseError("labels must be non-negative integers", n + 1);
      rec.labels.push_back(v.get<std::size_t>());
    }
    try {
      validate_labels(rec.labels);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), n + 1);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_corpus(const std::vector<CaptionRecord>& records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& rec : records) {
    validate_labels(rec.labels);
    nlohmann::ordered_json obj;
    obj["text"] = rec.text;
    obj["labels"] = rec.labels;
    try {
      out += obj.dump();
    } catch (const nlohmann::json::type_error& e) {
      throw InvalidArgument(std::string("caption is not valid UTF-8: ") + e.what());
    }
    out += '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file << out;
  if (!file) throw IoError("error writing " + path.string());
}

}  // namespace t2ipal::corpus
