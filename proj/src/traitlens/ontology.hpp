#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace traitlens {

// Big Five traits in canonical order O < C < E < A < N.
enum class Trait : int { O = 0, C = 1, E = 2, A = 3, N = 4 };
inline constexpr std::array<Trait, 5> kTraits = {Trait::O, Trait::C, Trait::E, Trait::A, Trait::N};

// High = strong presence of the trait, Low = its absence. The integer value is
// the class index used by the two-way classifiers.
enum class Polarity : int { High = 0, Low = 1 };
inline constexpr std::array<Polarity, 2> kPolarities = {Polarity::High, Polarity::Low};

inline constexpr int kNumTraits = 5;
inline constexpr int kNumClasses = 10;  // (trait, polarity) pairs
inline constexpr int kWordsPerClass = 11;

char trait_letter(Trait t);
const char* trait_name(Trait t);
const char* polarity_name(Polarity p);  // "high" / "low"
std::optional<Trait> parse_trait(std::string_view s);       // "O", "openness", ...
std::optional<Polarity> parse_polarity(std::string_view s);  // "high", "low"

struct TraitClass {
  Trait trait;
  Polarity polarity;

  // Dense index in [0, 10): 2 * trait + polarity.
  int index() const { return 2 * static_cast<int>(trait) + static_cast<int>(polarity); }
  static TraitClass from_index(int i) {
    return {static_cast<Trait>(i / 2), static_cast<Polarity>(i % 2)};
  }
  friend bool operator==(const TraitClass&, const TraitClass&) = default;
  friend auto operator<=>(const TraitClass& a, const TraitClass& b) { return a.index() <=> b.index(); }
};

struct TraitWord {
  std::string word;
  Trait trait;
  Polarity polarity;

  TraitClass trait_class() const { return {trait, polarity}; }
  friend bool operator==(const TraitWord&, const TraitWord&) = default;
};

class OntologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The word lists correlated with each (trait, polarity) class. Immutable once
// constructed; entries are ordered by class, then by list position.
class TraitOntology {
 public:
  // Validates the invariants: 11 entries per class, lowercase single tokens,
  // no duplicate (word, trait, polarity).
  explicit TraitOntology(std::vector<TraitWord> entries);

  const std::vector<TraitWord>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // All classes whose list contains the word; input is lowercased first.
  std::vector<TraitClass> lookup(std::string_view word) const;

  // The 11 words of one class in list order.
  std::vector<std::string> words_for(Trait trait, Polarity polarity) const;

  // Position of entry i inside its class list, in [0, 11).
  int slot_of(std::size_t entry_index) const { return static_cast<int>(entry_index % kWordsPerClass); }

  std::size_t distinct_word_count() const;

  // word<TAB>trait-letter<TAB>high|low, LF-terminated, canonical order.
  void write(std::ostream& os) const;
  static TraitOntology read(std::istream& is);

  friend bool operator==(const TraitOntology&, const TraitOntology&) = default;

 private:
  std::vector<TraitWord> entries_;
};

const TraitOntology& builtin_ontology();

std::string to_lower(std::string_view s);

}  // namespace traitlens
