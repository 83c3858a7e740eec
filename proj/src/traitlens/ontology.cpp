#include "traitlens/ontology.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace traitlens {

namespace {

struct ClassList {
  Trait trait;
  Polarity polarity;
  std::array<const char*, kWordsPerClass> words;
};

// Yarkoni's word-personality correlations, as used to query the image corpus.
constexpr std::array<ClassList, kNumClasses> kTable = {{
    {Trait::O, Polarity::High,
     {"culture", "films", "folk", "humans", "literature", "moon", "narrative", "novel", "poet",
      "poetry", "sky"}},
    {Trait::O, Polarity::Low,
     {"anniversary", "detest", "diaper", "hate", "hatred", "hubby", "implore", "loves", "prayers",
      "thankful", "thanks"}},
    {Trait::C, Polarity::High,
     {"achieved", "adventure", "challenging", "determined", "discipline", "persistence",
      "recovery", "routine", "snack", "vegetables", "visit"}},
    {Trait::C, Polarity::Low,
     {"bang", "bloody", "boring", "deny", "drunk", "fool", "protest", "soldier", "stupid", "swear",
      "vain"}},
    {Trait::E, Polarity::High,
     {"bar", "concert", "crowd", "dancing", "drinking", "friends", "girls", "grandfather", "party",
      "pool", "restaurant"}},
    {Trait::E, Polarity::Low,
     {"blankets", "books", "cats", "computer", "enough", "interest", "knitting", "lazy", "minor",
      "pages", "winter"}},
    {Trait::A, Polarity::High,
     {"afternoon", "beautiful", "feelings", "gifts", "hug", "joy", "spring", "summer", "together",
      "walked", "wonderful"}},
    {Trait::A, Polarity::Low,
     {"asshole", "bin", "cost", "drugs", "excuse", "harm", "idiot", "porn", "sexual", "stupid",
      "violence"}},
    {Trait::N, Polarity::High,
     {"annoying", "ashamed", "awful", "horrible", "lazy", "sick", "stress", "stressful",
      "terrible", "upset", "worse"}},
    {Trait::N, Polarity::Low,
     {"completed", "county", "ground", "later", "mountain", "oldest", "poem", "road", "southern",
      "sunset", "thirty"}},
}};

bool is_token(std::string_view w) {
  return !w.empty() && std::none_of(w.begin(), w.end(), [](unsigned char c) {
    return std::isspace(c) || std::isupper(c);
  });
}

}  // namespace

char trait_letter(Trait t) { return "OCEAN"[static_cast<int>(t)]; }

const char* trait_name(Trait t) {
  static constexpr const char* kNames[] = {"openness", "conscientiousness", "extraversion",
                                           "agreeableness", "neuroticism"};
  return kNames[static_cast<int>(t)];
}

const char* polarity_name(Polarity p) { return p == Polarity::High ? "high" : "low"; }

std::optional<Trait> parse_trait(std::string_view s) {
  const std::string lower = to_lower(s);
  for (Trait t : kTraits) {
    if (lower.size() == 1 && std::tolower(static_cast<unsigned char>(trait_letter(t))) == lower[0]) {
      return t;
    }
    if (lower == trait_name(t)) return t;
  }
  return std::nullopt;
}

std::optional<Polarity> parse_polarity(std::string_view s) {
  const std::string lower = to_lower(s);
  if (lower == "high" || lower == "h") return Polarity::High;
  if (lower == "low" || lower == "l") return Polarity::Low;
  return std::nullopt;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

TraitOntology::TraitOntology(std::vector<TraitWord> entries) : entries_(std::move(entries)) {
  if (entries_.size() != static_cast<std::size_t>(kNumClasses * kWordsPerClass)) {
    throw OntologyError("ontology must hold exactly 110 entries, got " +
                        std::to_string(entries_.size()));
  }
  std::set<std::tuple<std::string, int, int>> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const TraitWord& e = entries_[i];
    if (!is_token(e.word)) {
      throw OntologyError("ontology word '" + e.word + "' is not a lowercase token");
    }
    if (e.trait_class().index() != static_cast<int>(i) / kWordsPerClass) {
      throw OntologyError("ontology entry " + std::to_string(i) + " ('" + e.word +
                          "') is out of canonical class order");
    }
    if (!seen.emplace(e.word, static_cast<int>(e.trait), static_cast<int>(e.polarity)).second) {
      throw OntologyError("duplicate ontology entry '" + e.word + "'");
    }
  }
}

std::vector<TraitClass> TraitOntology::lookup(std::string_view word) const {
  const std::string key = to_lower(word);
  std::vector<TraitClass> out;
  for (const auto& e : entries_) {
    if (e.word == key) out.push_back(e.trait_class());
  }
  return out;
}

std::vector<std::string> TraitOntology::words_for(Trait trait, Polarity polarity) const {
  const int cls = TraitClass{trait, polarity}.index();
  std::vector<std::string> out;
  out.reserve(kWordsPerClass);
  for (int k = 0; k < kWordsPerClass; ++k) out.push_back(entries_[cls * kWordsPerClass + k].word);
  return out;
}

std::size_t TraitOntology::distinct_word_count() const {
  std::set<std::string> words;
  for (const auto& e : entries_) words.insert(e.word);
  return words.size();
}

void TraitOntology::write(std::ostream& os) const {
  for (const auto& e : entries_) {
    os << e.word << '\t' << trait_letter(e.trait) << '\t' << polarity_name(e.polarity) << '\n';
  }
}

TraitOntology TraitOntology::read(std::istream& is) {
  std::vector<TraitWord> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word, trait, polarity, extra;
    if (!std::getline(fields, word, '\t') || !std::getline(fields, trait, '\t') ||
        !std::getline(fields, polarity, '\t') || std::getline(fields, extra, '\t')) {
      throw OntologyError("ontology line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    auto t = parse_trait(trait);
    auto p = parse_polarity(polarity);
    if (!t || !p) {
      throw OntologyError("ontology line " + std::to_string(lineno) + ": bad trait or polarity");
    }
    entries.push_back({to_lower(word), *t, *p});
  }
  return TraitOntology(std::move(entries));
}

const TraitOntology& builtin_ontology() {
  static const TraitOntology ontology = [] {
    std::vector<TraitWord> entries;
    for (const auto& cls : kTable) {
      for (const char* w : cls.words) entries.push_back({w, cls.trait, cls.polarity});
    }
    return TraitOntology(std::move(entries));
  }();
  return ontology;
}

}  // namespace traitlens
