#pragma once

// Deterministic template-based generator for fully annotated synthetic
// relation-extraction corpora.
//
// Templates use the generic-jsonl record schema. Marker tokens are expanded
// at generation time:
//   [PERSON|ORGANIZATION]  argument slot, filled from one of the named lexicons;
//                          the NE tag of the filler is the lexicon name
//   [ADV*]                 0..max_fill words from the ADV filler list, each taking
//                          the marker's POS, label and parent
//   [PP*]                  0..max_pp prepositional phrases attached to the
//                          marker's parent, optionally chained
// Nothing may attach to a filler marker. Head and tail spans must each cover
// exactly one slot marker.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relprobe/corpus.hpp"

namespace relprobe {

struct SynthTemplate {
  Sentence pattern;
  std::optional<std::string> relation;  // fixed label; otherwise the config rules
};

struct SynthConfig {
  size_t n_train = 64;
  size_t n_val = 16;
  size_t n_test = 16;
  std::vector<SynthTemplate> templates;
  // Slot type (also the NE tag) -> entries; an entry may hold several
  // space-separated tokens, which become a compound headed by the last one.
  std::map<std::string, std::vector<std::string>> lexicons;
  // Filler words: ADV and ADJ for markers, PREP / NOUN / PLACE for phrases.
  std::map<std::string, std::vector<std::string>> fillers;
  // "HEADTYPE|TAILTYPE" -> relation label
  std::map<std::string, std::string> relation_rules;
  std::string default_relation = "no_relation";
  int max_fill = 2;
  int max_pp = 4;
  double place_rate = 0.3;  // chance that a phrase noun is a LOCATION entity
  std::uint64_t seed = 0;
};

// Built-in templates, lexicons and relation rules where relation labels are
// a function of the argument entity types.
SynthConfig default_synth_config();

std::vector<SynthTemplate> read_templates_jsonl(std::istream& in);
std::vector<SynthTemplate> load_templates(const std::filesystem::path& path);

// Applies {"lexicons", "fillers", "relation_rules", "default_relation"} from a JSON object.
void apply_lexicon_json(SynthConfig& config, const std::filesystem::path& path);

// Throws Error naming the first slot or marker that cannot be generated.
void check_synth_config(const SynthConfig& config);

Corpus generate(const SynthConfig& config);

// Pairs of sentences sharing their token multiset, one with the head before
// the tail and one with the order reversed (the head mention keeps its role).
// n_train/n_val/n_test count pairs, so every split holds 2x sentences.
Corpus generate_order_controlled(const SynthConfig& config, std::uint64_t seed);

// Random vectors for every token the config can produce, for experiments that
// need a fixed "pre-trained" table.
EmbeddingTable synth_embeddings(const SynthConfig& config, size_t dim, std::uint64_t seed);

}  // namespace relprobe
