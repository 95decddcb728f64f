#include "relprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "relprobe/error.hpp"

namespace relprobe {

namespace {

using json = nlohmann::json;

// Generic-jsonl records with slot and filler markers.
constexpr const char* kDefaultTemplates = R"jsonl(
{"id":"acquired","tokens":["[PERSON|ORGANIZATION]","[ADV*]","acquired","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","[PP*]","."],"pos":["NNP","RB","VBD","NNP","IN","."],"ner":["O","O","O","O","O","O"],"dep_head":[3,3,0,3,3,3],"dep_label":["nsubj","advmod","ROOT","dobj","prep","punct"],"head_start":0,"head_end":0,"tail_start":3,"tail_end":3}
{"id":"acquired-by","tokens":["[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","was","acquired","by","[PERSON|ORGANIZATION]","[PP*]","."],"pos":["NNP","VBD","VBN","IN","NNP","IN","."],"ner":["O","O","O","O","O","O","O"],"dep_head":[3,3,0,3,4,3,3],"dep_label":["nsubjpass","auxpass","ROOT","prep","pobj","prep","punct"],"head_start":4,"head_end":4,"tail_start":0,"tail_end":0}
{"id":"partner-of","tokens":["[PERSON|ORGANIZATION]",",","the","[ADJ*]","partner","of","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]",",","spoke","[PP*]","."],"pos":["NNP",",","DT","JJ","NN","IN","NNP",",","VBD","IN","."],"ner":["O","O","O","O","O","O","O","O","O","O","O"],"dep_head":[9,1,5,5,1,5,6,1,0,9,9],"dep_label":["nsubj","punct","det","amod","appos","prep","pobj","punct","ROOT","prep","punct"],"head_start":0,"head_end":0,"tail_start":6,"tail_end":6}
{"id":"in-met","tokens":["In","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]",",","[PERSON|ORGANIZATION]","[ADV*]","met","reporters","[PP*]","."],"pos":["IN","NNP",",","NNP","RB","VBD","NNS","IN","."],"ner":["O","O","O","O","O","O","O","O","O"],"dep_head":[6,1,6,6,6,0,6,6,6],"dep_label":["prep","pobj","punct","nsubj","advmod","ROOT","dobj","prep","punct"],"head_start":3,"head_end":3,"tail_start":1,"tail_end":1}
{"id":"gave","tokens":["[PERSON|ORGANIZATION]","gave","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","the","[ADJ*]","award","[PP*]","."],"pos":["NNP","VBD","NNP","DT","JJ","NN","IN","."],"ner":["O","O","O","O","O","O","O","O"],"dep_head":[2,0,2,6,6,2,2,2],"dep_label":["nsubj","ROOT","iobj","det","amod","dobj","prep","punct"],"head_start":0,"head_end":0,"tail_start":2,"tail_end":2}
{"id":"meeting","tokens":["The","meeting","between","[PERSON|ORGANIZATION]","and","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","[ADV*]","ended","[PP*]","."],"pos":["DT","NN","IN","NNP","CC","NNP","RB","VBD","IN","."],"ner":["O","O","O","O","O","O","O","O","O","O"],"dep_head":[2,8,2,3,4,4,8,0,8,8],"dep_label":["det","nsubj","prep","pobj","cc","conj","advmod","ROOT","prep","punct"],"head_start":3,"head_end":3,"tail_start":5,"tail_end":5}
{"id":"hosted","tokens":["[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","[ADV*]","hosted","[PERSON|ORGANIZATION]","[PP*]","."],"pos":["NNP","RB","VBD","NNP","IN","."],"ner":["O","O","O","O","O","O"],"dep_head":[3,3,0,3,3,3],"dep_label":["nsubj","advmod","ROOT","dobj","prep","punct"],"head_start":3,"head_end":3,"tail_start":0,"tail_end":0}
{"id":"possessive","tokens":["[PERSON|ORGANIZATION]","'s","[PERSON|ORGANIZATION|LOCATION|DATE|TITLE]","[ADV*]","resigned","[PP*]","."],"pos":["NNP","POS","NNP","RB","VBD","IN","."],"ner":["O","O","O","O","O","O","O"],"dep_head":[3,1,5,5,0,5,5],"dep_label":["poss","possessive","nsubj","advmod","ROOT","prep","punct"],"head_start":0,"head_end":0,"tail_start":2,"tail_end":2}
)jsonl";

enum class MarkerKind { Plain, Slot, Filler, Phrases };

struct ParsedToken {
  MarkerKind kind = MarkerKind::Plain;
  std::vector<std::string> slot_types;
  std::string filler;
};

ParsedToken parse_marker(const std::string& token) {
  ParsedToken p;
  if (token.size() < 3 || token.front() != '[' || token.back() != ']') return p;
  std::string body = token.substr(1, token.size() - 2);
  if (body.back() == '*') {
    body.pop_back();
    p.kind = body == "PP" ? MarkerKind::Phrases : MarkerKind::Filler;
    p.filler = body;
    return p;
  }
  p.kind = MarkerKind::Slot;
  std::stringstream ss(body);
  std::string type;
  while (std::getline(ss, type, '|')) {
    if (!type.empty()) p.slot_types.push_back(type);
  }
  if (p.slot_types.empty()) throw Error("empty slot marker " + token);
  return p;
}

std::vector<std::string> split_words(const std::string& entry) {
  std::vector<std::string> words;
  std::istringstream ss(entry);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

struct SlotChoice {
  std::string type;
  std::vector<std::string> words;
};

struct Phrase {
  std::string prep;
  std::vector<std::string> adjectives;
  std::string noun;
  bool place = false;
  bool chain = false;  // attach to the previous phrase's noun

  int length() const { return place ? 2 : 3 + static_cast<int>(adjectives.size()); }
};

struct Plan {
  std::vector<SlotChoice> slots;                 // indexed by template token
  std::vector<std::vector<std::string>> fills;   // filler words per token
  std::vector<std::vector<Phrase>> phrases;      // phrases per token
};

class Generator {
 public:
  explicit Generator(const SynthConfig& config) : config_(config) {
    check_synth_config(config);
    for (const auto& t : config.templates) {
      std::vector<ParsedToken> parsed;
      for (const auto& tok : t.pattern.tokens) parsed.push_back(parse_marker(tok));
      parsed_.push_back(std::move(parsed));
    }
  }

  size_t template_count() const { return config_.templates.size(); }

  Plan draw(size_t tmpl, std::mt19937_64& rng) const {
    const auto& parsed = parsed_[tmpl];
    Plan plan;
    plan.slots.resize(parsed.size());
    plan.fills.resize(parsed.size());
    plan.phrases.resize(parsed.size());
    for (size_t i = 0; i < parsed.size(); ++i) {
      const auto& p = parsed[i];
      switch (p.kind) {
        case MarkerKind::Plain:
          break;
        case MarkerKind::Slot: {
          const auto& type = pick(p.slot_types, rng);
          plan.slots[i] = {type, split_words(pick(config_.lexicons.at(type), rng))};
          break;
        }
        case MarkerKind::Filler: {
          int n = uniform_int(0, config_.max_fill, rng);
          for (int k = 0; k < n; ++k) plan.fills[i].push_back(pick(config_.fillers.at(p.filler), rng));
          break;
        }
        case MarkerKind::Phrases: {
          int n = uniform_int(0, config_.max_pp, rng);
          for (int k = 0; k < n; ++k) {
            Phrase ph;
            ph.prep = pick(config_.fillers.at("PREP"), rng);
            ph.place = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config_.place_rate;
            if (ph.place) {
              ph.noun = pick(config_.fillers.at("PLACE"), rng);
            } else {
              int adjectives = uniform_int(0, 2, rng);
              for (int a = 0; a < adjectives; ++a) ph.adjectives.push_back(pick(config_.fillers.at("ADJ"), rng));
              ph.noun = pick(config_.fillers.at("NOUN"), rng);
            }
            ph.chain = k > 0 && uniform_int(0, 1, rng) == 1;
            plan.phrases[i].push_back(std::move(ph));
          }
          break;
        }
      }
    }
    return plan;
  }

  // Renders a plan. With `swap_arguments` the head and tail fillers trade
  // places while keeping their roles, which reverses argument order.
  Sentence render(size_t tmpl, Plan plan, bool swap_arguments, std::string id) const {
    const auto& t = config_.templates[tmpl];
    const auto& pattern = t.pattern;
    const auto& parsed = parsed_[tmpl];
    int head_slot = pattern.head.start;
    int tail_slot = pattern.tail.start;
    if (swap_arguments) {
      std::swap(plan.slots[head_slot], plan.slots[tail_slot]);
      std::swap(head_slot, tail_slot);
    }

    const int n = static_cast<int>(parsed.size());
    std::vector<int> anchor(n, -1);
    int cursor = 0;
    for (int i = 0; i < n; ++i) {
      switch (parsed[i].kind) {
        case MarkerKind::Plain:
          anchor[i] = cursor++;
          break;
        case MarkerKind::Slot:
          cursor += static_cast<int>(plan.slots[i].words.size());
          anchor[i] = cursor - 1;
          break;
        case MarkerKind::Filler:
          cursor += static_cast<int>(plan.fills[i].size());
          break;
        case MarkerKind::Phrases:
          for (const auto& ph : plan.phrases[i]) cursor += ph.length();
          break;
      }
    }
    auto resolve = [&](int template_head) { return template_head == 0 ? 0 : anchor[template_head - 1] + 1; };

    Sentence s;
    s.id = std::move(id);
    auto emit = [&](const std::string& tok, const std::string& pos, const std::string& ner, int head,
                    const std::string& label) {
      s.tokens.push_back(tok);
      s.pos.push_back(pos);
      s.ner.push_back(ner);
      s.dep_head.push_back(head);
      s.dep_label.push_back(label);
    };

    for (int i = 0; i < n; ++i) {
      const int head = resolve(pattern.dep_head[i]);
      const auto& pos = pattern.pos[i];
      const auto& label = pattern.dep_label[i];
      switch (parsed[i].kind) {
        case MarkerKind::Plain:
          emit(pattern.tokens[i], pos, pattern.ner[i], head, label);
          break;
        case MarkerKind::Slot: {
          const auto& choice = plan.slots[i];
          for (size_t k = 0; k + 1 < choice.words.size(); ++k) {
            emit(choice.words[k], pos, choice.type, anchor[i] + 1, "compound");
          }
          emit(choice.words.back(), pos, choice.type, head, label);
          break;
        }
        case MarkerKind::Filler:
          for (const auto& w : plan.fills[i]) emit(w, pos, "O", head, label);
          break;
        case MarkerKind::Phrases: {
          int previous_noun = -1;
          for (const auto& ph : plan.phrases[i]) {
            const int prep = s.size();
            const int noun = prep + ph.length() - 1;
            emit(ph.prep, "IN", "O", (ph.chain && previous_noun >= 0) ? previous_noun + 1 : head, "prep");
            if (!ph.place) {
              emit("the", "DT", "O", noun + 1, "det");
              for (const auto& adj : ph.adjectives) emit(adj, "JJ", "O", noun + 1, "amod");
              emit(ph.noun, "NN", "O", prep + 1, "pobj");
            } else {
              emit(ph.noun, "NNP", "LOCATION", prep + 1, "pobj");
            }
            previous_noun = noun;
          }
          break;
        }
      }
    }

    auto slot_span = [&](int slot) {
      int len = static_cast<int>(plan.slots[slot].words.size());
      return Span{anchor[slot] - len + 1, anchor[slot]};
    };
    s.head = slot_span(head_slot);
    s.tail = slot_span(tail_slot);
    if (t.relation) {
      s.relation = *t.relation;
    } else {
      auto rule = config_.relation_rules.find(plan.slots[head_slot].type + "|" + plan.slots[tail_slot].type);
      s.relation = rule == config_.relation_rules.end() ? config_.default_relation : rule->second;
    }
    return s;
  }

 private:
  static int uniform_int(int lo, int hi, std::mt19937_64& rng) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  }

  static const std::string& pick(const std::vector<std::string>& items, std::mt19937_64& rng) {
    return items[std::uniform_int_distribution<size_t>(0, items.size() - 1)(rng)];
  }

  const SynthConfig& config_;
  std::vector<std::vector<ParsedToken>> parsed_;
};

std::string make_id(Split split, size_t index, const char* suffix = "") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "synth-%s-%06zu%s", std::string(split_name(split)).c_str(), index, suffix);
  return buf;
}

size_t split_count(const SynthConfig& c, Split split) {
  switch (split) {
    case Split::Train: return c.n_train;
    case Split::Validation: return c.n_val;
    case Split::Test: return c.n_test;
  }
  return 0;
}

}  // namespace

std::vector<SynthTemplate> read_templates_jsonl(std::istream& in) {
  std::vector<SynthTemplate> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = json::parse(line);
      SynthTemplate t;
      auto& s = t.pattern;
      s.id = rec.value("id", "template-" + std::to_string(lineno));
      s.tokens = rec.at("tokens").get<std::vector<std::string>>();
      s.pos = rec.at("pos").get<std::vector<std::string>>();
      s.ner = rec.contains("ner") ? rec.at("ner").get<std::vector<std::string>>()
                                  : std::vector<std::string>(s.tokens.size(), "O");
      s.dep_head = rec.at("dep_head").get<std::vector<int>>();
      s.dep_label = rec.at("dep_label").get<std::vector<std::string>>();
      s.head = {rec.at("head_start").get<int>(), rec.at("head_end").get<int>()};
      s.tail = {rec.at("tail_start").get<int>(), rec.at("tail_end").get<int>()};
      if (auto it = rec.find("relation"); it != rec.end() && !it->get<std::string>().empty()) {
        t.relation = it->get<std::string>();
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw Error("template line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SynthTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_templates_jsonl(in);
}

void apply_lexicon_json(SynthConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    auto doc = json::parse(in);
    if (doc.contains("lexicons")) config.lexicons = doc["lexicons"].get<std::map<std::string, std::vector<std::string>>>();
    if (doc.contains("fillers")) config.fillers = doc["fillers"].get<std::map<std::string, std::vector<std::string>>>();
    if (doc.contains("relation_rules")) config.relation_rules = doc["relation_rules"].get<std::map<std::string, std::string>>();
    if (doc.contains("default_relation")) config.default_relation = doc["default_relation"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

SynthConfig default_synth_config() {
  SynthConfig c;
  std::istringstream in(kDefaultTemplates);
  c.templates = read_templates_jsonl(in);
  c.lexicons = {
      {"PERSON",
       {"Alice", "Bruno", "Chen Wei", "Dana", "Emeka", "Farah", "Goran", "Hiro", "Ines", "Jamal", "Kira",
        "Larry Page", "Mona", "Nils", "Olga", "Priya Nair", "Quinn", "Rosa", "Sven", "Tariq", "Uma", "Viktor"}},
      {"ORGANIZATION",
       {"Acme", "Bayer", "Monsanto", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Soylent",
        "General Motors", "Cyberdyne", "Tyrell", "Wonka", "Stark Industries", "Aerolineas", "Austral",
        "Oscorp", "Dunder Mifflin", "Gringotts", "Wayne"}},
      {"LOCATION",
       {"Madrid", "Nairobi", "Quito", "Hanoi", "Dublin", "Boston", "New York", "Accra", "Perth", "Zurich",
        "Seoul", "Lagos", "Havana", "Tbilisi", "Cusco", "Riga"}},
      {"DATE",
       {"1987", "2004", "1999", "2012", "1975", "2020", "1961", "March", "June 2008", "1993", "2001",
        "October", "1958", "2016"}},
      {"TITLE",
       {"CEO", "chairman", "director", "president", "treasurer", "spokesman", "founder", "editor",
        "chief economist", "secretary", "governor", "coach"}},
  };
  c.fillers = {
      {"ADV", {"recently", "reportedly", "quietly", "finally", "officially", "again", "openly", "later"}},
      {"ADJ", {"new", "major", "annual", "local", "former", "rare", "public", "small", "old"}},
      {"PREP", {"in", "near", "with", "after", "during", "for", "without", "before"}},
      {"NOUN", {"city", "market", "week", "office", "summit", "deal", "region", "crisis", "program", "season",
                "network", "court", "river", "station"}},
      {"PLACE", {"Paris", "Berlin", "Kenya", "Ohio", "Tokyo", "Lima", "Oslo", "Chile"}},
  };
  c.relation_rules = {
      {"PERSON|PERSON", "per:spouse"},
      {"PERSON|ORGANIZATION", "per:employee_of"},
      {"PERSON|LOCATION", "per:cities_of_residence"},
      {"PERSON|DATE", "per:date_of_birth"},
      {"PERSON|TITLE", "per:title"},
      {"ORGANIZATION|PERSON", "org:top_members/employees"},
      {"ORGANIZATION|ORGANIZATION", "org:subsidiaries"},
      {"ORGANIZATION|LOCATION", "org:city_of_headquarters"},
      {"ORGANIZATION|DATE", "org:founded"},
  };
  c.default_relation = "no_relation";
  return c;
}

void check_synth_config(const SynthConfig& config) {
  if (config.templates.empty()) throw Error("synthetic config has no templates");
  if (config.max_fill < 0 || config.max_pp < 0) throw Error("filler counts must be non-negative");
  for (const auto& t : config.templates) {
    const auto& s = t.pattern;
    const int n = s.size();
    const std::string where = "template " + s.id + ": ";
    if (n == 0 || static_cast<int>(s.pos.size()) != n || static_cast<int>(s.ner.size()) != n ||
        static_cast<int>(s.dep_head.size()) != n || static_cast<int>(s.dep_label.size()) != n) {
      throw Error(where + "annotation lists must all match the token count");
    }
    std::vector<ParsedToken> parsed;
    for (const auto& tok : s.tokens) parsed.push_back(parse_marker(tok));
    for (const auto* span : {&s.head, &s.tail}) {
      if (span->start != span->end || span->start < 0 || span->start >= n ||
          parsed[span->start].kind != MarkerKind::Slot) {
        throw Error(where + "head and tail spans must each cover exactly one slot marker");
      }
    }
    if (s.head.start == s.tail.start) throw Error(where + "head and tail use the same slot");
    for (int i = 0; i < n; ++i) {
      const auto& p = parsed[i];
      if (p.kind == MarkerKind::Slot) {
        for (const auto& type : p.slot_types) {
          auto it = config.lexicons.find(type);
          if (it == config.lexicons.end() || it->second.empty()) {
            throw Error(where + "template/lexicon mismatch: slot " + type + " has no lexicon");
          }
          for (const auto& entry : it->second) {
            if (split_words(entry).empty()) throw Error("lexicon " + type + " has an empty entry");
          }
        }
      } else if (p.kind == MarkerKind::Filler) {
        auto it = config.fillers.find(p.filler);
        if (it == config.fillers.end() || it->second.empty()) {
          throw Error(where + "template/lexicon mismatch: filler " + p.filler + " has no word list");
        }
      } else if (p.kind == MarkerKind::Phrases) {
        for (const char* list : {"PREP", "NOUN", "ADJ", "PLACE"}) {
          auto it = config.fillers.find(list);
          if (it == config.fillers.end() || it->second.empty()) {
            throw Error(where + "template/lexicon mismatch: phrase filler " + list + " has no word list");
          }
        }
      }
      int h = s.dep_head[i];
      if (h > 0 && h <= n && (parsed[h - 1].kind == MarkerKind::Filler || parsed[h - 1].kind == MarkerKind::Phrases)) {
        throw Error(where + "token " + std::to_string(i) + " attaches to a filler marker");
      }
    }
    // The pattern itself (markers as single tokens) must be a valid sentence.
    Sentence probe = s;
    probe.relation = "x";
    auto violations = validate_sentence(probe);
    if (!violations.empty()) throw Error(where + violations.front());
  }
}

namespace {

// Evaluation sentences are redrawn until their relation occurs in train, so
// rare type combinations missing from a small train split cannot leak in.
constexpr int kMaxRedraws = 1000;

}  // namespace

Corpus generate(const SynthConfig& config) {
  Generator gen(config);
  std::mt19937_64 rng(config.seed);
  Corpus corpus;
  std::set<std::string> train_labels;
  for (Split split : kAllSplits) {
    const size_t count = split_count(config, split);
    for (size_t i = 0; i < count; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw Error("cannot draw a sentence whose relation occurs in train");
        size_t tmpl = std::uniform_int_distribution<size_t>(0, gen.template_count() - 1)(rng);
        Sentence s = gen.render(tmpl, gen.draw(tmpl, rng), false, make_id(split, i));
        if (split != Split::Train && !train_labels.count(s.relation)) continue;
        if (split == Split::Train) train_labels.insert(s.relation);
        corpus.split(split).push_back(std::move(s));
        break;
      }
    }
  }
  finalize_corpus(corpus);
  return corpus;
}

Corpus generate_order_controlled(const SynthConfig& config, std::uint64_t seed) {
  Generator gen(config);
  std::mt19937_64 rng(seed);
  Corpus corpus;
  std::set<std::string> train_labels;
  for (Split split : kAllSplits) {
    const size_t pairs = split_count(config, split);
    for (size_t i = 0; i < pairs; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw Error("cannot draw a sentence whose relation occurs in train");
        size_t tmpl = std::uniform_int_distribution<size_t>(0, gen.template_count() - 1)(rng);
        Plan plan = gen.draw(tmpl, rng);
        Sentence a = gen.render(tmpl, plan, false, make_id(split, i, "a"));
        if (split != Split::Train && !train_labels.count(a.relation)) continue;
        Sentence b = gen.render(tmpl, std::move(plan), true, make_id(split, i, "b"));
        if (split == Split::Train) train_labels.insert(a.relation);
        corpus.split(split).push_back(std::move(a));
        corpus.split(split).push_back(std::move(b));
        break;
      }
    }
  }
  finalize_corpus(corpus);
  return corpus;
}

EmbeddingTable synth_embeddings(const SynthConfig& config, size_t dim, std::uint64_t seed) {
  std::set<std::string> vocab;
  for (const auto& t : config.templates) {
    for (const auto& tok : t.pattern.tokens) {
      if (parse_marker(tok).kind == MarkerKind::Plain) vocab.insert(tok);
    }
  }
  for (const auto& [type, entries] : config.lexicons) {
    for (const auto& e : entries) {
      for (auto& w : split_words(e)) vocab.insert(w);
    }
  }
  for (const auto& [kind, words] : config.fillers) vocab.insert(words.begin(), words.end());
  vocab.insert("the");

  EmbeddingTable table(dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(dim)));
  std::vector<float> v(dim);
  for (const auto& w : vocab) {
    for (auto& x : v) x = normal(rng);
    table.add(w, v);
  }
  return table;
}

}  // namespace relprobe
