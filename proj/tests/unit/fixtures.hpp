#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "relprobe/corpus.hpp"
#include "relprobe/synth.hpp"

namespace fixtures {

inline relprobe::Sentence bayer() {
  relprobe::Sentence s;
  s.id = "bayer";
  s.tokens = {"Bayer", "acquired", "Monsanto"};
  s.pos = {"NNP", "VBD", "NNP"};
  s.ner = {"ORGANIZATION", "O", "ORGANIZATION"};
  s.dep_head = {2, 0, 2};
  s.dep_label = {"nsubj", "ROOT", "dobj"};
  s.head = {0, 0};
  s.tail = {2, 2};
  s.relation = "org:subsidiaries";
  return s;
}

// 1-based dep_head of a uniformly shuffled random recursive tree.
inline std::vector<int> random_dep_head(std::mt19937_64& rng, int n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> head(n, 0);
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    head[order[i]] = order[pick(rng)] + 1;
  }
  return head;
}

inline relprobe::Corpus synth_corpus(size_t n_train, size_t n_val, size_t n_test, std::uint64_t seed) {
  auto cfg = relprobe::default_synth_config();
  cfg.n_train = n_train;
  cfg.n_val = n_val;
  cfg.n_test = n_test;
  cfg.seed = seed;
  return relprobe::generate(cfg);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("relprobe-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
