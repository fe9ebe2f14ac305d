#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace t2ipal::corpus {

/// Ordered class names; position defines the class index.
class CategorySet {
 public:
  // Names are lowercase-folded and trimmed. Throws InvalidArgument on
  // duplicates, empty names, or fewer than two classes.
  explicit CategorySet(std::vector<std::string> names);

  static CategorySet load(const std::filesystem::path& path);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  std::optional<std::size_t> index_of(std::string_view name) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Surface word → class index, many-to-one.
using SynonymMap = std::map<std::string, std::size_t>;

// Reads "surface<TAB>class_name" lines, resolving names against `classes`.
SynonymMap load_synonyms(const std::filesystem::path& path, const CategorySet& classes);

struct CaptionRecord {
  std::string text;
  std::vector<std::size_t> labels;  // ascending, unique, non-empty

  std::vector<std::uint8_t> multi_hot(std::size_t num_classes) const;
  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

// Splits on Unicode whitespace, strips leading/trailing ASCII punctuation,
// folds ASCII to lowercase, and drops tokens that end up empty.
std::vector<std::string> tokenize(std::string_view text);

/// Caption token after class matching: either a recognised class (a
/// whole phrase collapsed to its index) or an ordinary word.
using CanonicalToken = std::variant<std::size_t, std::string>;

/// Whole-token matcher for class names and their synonyms. Multi-word
/// phrases match contiguous token runs; the final token of a phrase may
/// carry a plural "s" or "es".
class NounFilter {
 public:
  NounFilter(const CategorySet& classes, const SynonymMap& synonyms);

  std::size_t num_classes() const noexcept { return num_classes_; }

  // Every surface phrase the filter recognises, space-joined.
  std::vector<std::string> vocabulary() const;

  // Union of matched class indices, ascending; empty when nothing matches.
  std::vector<std::size_t> match(std::string_view caption) const;

  // Caption tokens with matched phrases replaced by their class index.
  std::vector<CanonicalToken> canonical_tokens(std::string_view caption) const;

 private:
  struct Phrase {
    std::vector<std::string> words;
    std::size_t label;
  };

  // Length of the phrase matched at `pos` (0 when none) and its label.
  std::pair<std::size_t, std::size_t> match_at(const std::vector<std::string>& tokens,
                                               std::size_t pos) const;

  std::size_t num_classes_;
  std::vector<Phrase> phrases_;  // longest first
};

NounFilter build_noun_filter(const CategorySet& classes, const SynonymMap& synonyms);

// Empty optional when no class is mentioned.
std::optional<CaptionRecord> filter_caption(std::string_view caption, const NounFilter& filter);

/// JSONL: {"text": ..., "labels": [ascending indices]} per line.
std::vector<CaptionRecord> load_corpus(const std::filesystem::path& path);
void write_corpus(const std::vector<CaptionRecord>& records, const std::filesystem::path& path);

// Plain-text helpers shared by the CLI: one entry per line, trailing CR removed.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace t2ipal::corpus
