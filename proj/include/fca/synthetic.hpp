#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fca/data.hpp"
#include "fca/errors.hpp"

namespace fca {

// Labeled toy tasks whose signal lives in a handful of tokens buried in
// distractor noise, so token triage has something real to find.
//   marker_majority: 3 class-marker words among 60 distractors; the label is
//                    the majority marker class.
//   keyword_pair:    two sentences; label 1 iff they share a keyword.
//   long_noise:      one signal word hidden in a near-max-length stream.
inline const std::vector<std::string> kSyntheticKinds = {
    "marker_majority", "keyword_pair", "long_noise"};

namespace detail {

inline std::string filler_word(std::size_t i) {
  std::string n = std::to_string(i);
  return "filler" + std::string(3 - std::min<std::size_t>(3, n.size()), '0') +
         n;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline std::string marker_majority_line(std::mt19937_64& rng) {
  static const std::array<std::array<const char*, 3>, 2> markers = {
      {{"amber", "ochre", "sienna"}, {"cobalt", "azure", "teal"}}};
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> word3(0, 2);
  std::uniform_int_distribution<std::size_t> filler(0, 199);
  int votes = 0;
  std::vector<std::string> words;
  for (int m = 0; m < 3; ++m) {
    const int cls = coin(rng);
    votes += cls;
    words.push_back(markers[cls][word3(rng)]);
  }
  const int label = votes >= 2 ? 1 : 0;
  for (int i = 0; i < 60; ++i) words.push_back(filler_word(filler(rng)));
  std::shuffle(words.begin(), words.end(), rng);
  return std::to_string(label) + "\t" + join(words);
}

inline std::string keyword_pair_line(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> key(0, 9);
  std::uniform_int_distribution<std::size_t> filler(0, 199);
  std::uniform_int_distribution<std::size_t> len(18, 24);
  auto keyword = [](int k) { return "keyword" + std::to_string(k); };

  const int label = coin(rng);
  int k1 = key(rng);
  int k2 = label ? k1 : (k1 + 1 + key(rng) % 9) % 10;
  auto sentence = [&](int k) {
    std::vector<std::string> words;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
      words.push_back(filler_word(filler(rng)));
    }
    words[rng() % words.size()] = keyword(k);
    return join(words);
  };
  return std::to_string(label) + "\t" + sentence(k1) + "\t" + sentence(k2);
}

inline std::string long_noise_line(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> filler(0, 199);
  const int label = coin(rng);
  std::vector<std::string> words;
  for (int i = 0; i < 60; ++i) words.push_back(filler_word(filler(rng)));
  words[rng() % words.size()] = label ? "signalone" : "signalzero";
  return std::to_string(label) + "\t" + join(words);
}

}  // namespace detail

/// Deterministically writes <out_dir>/{train,dev,test}.tsv for the given
/// kind; identical seeds produce byte-identical files.
inline void synthetic_task_generator(const std::string& kind,
                                     std::size_t train_size,
                                     std::size_t dev_size,
                                     std::size_t test_size,
                                     std::uint64_t seed,
                                     const std::string& out_dir) {
  std::string (*line_fn)(std::mt19937_64&) = nullptr;
  if (kind == "marker_majority") {
    line_fn = detail::marker_majority_line;
  } else if (kind == "keyword_pair") {
    line_fn = detail::keyword_pair_line;
  } else if (kind == "long_noise") {
    line_fn = detail::long_noise_line;
  } else {
    throw UsageError("unknown synthetic kind '" + kind + "'");
  }
  std::mt19937_64 rng(seed);
  const std::array<std::pair<const char*, std::size_t>, 3> splits = {
      {{"train.tsv", train_size}, {"dev.tsv", dev_size},
       {"test.tsv", test_size}}};
  for (const auto& [name, size] : splits) {
    const std::string path = out_dir + "/" + name;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (std::size_t i = 0; i < size; ++i) out << line_fn(rng) << "\n";
  }
}

/// TaskSpec matching the generator output.
inline TaskSpec synthetic_task_spec(const std::string& kind,
                                    const std::string& dir) {
  TaskSpec spec;
  spec.name = kind;
  spec.train_path = dir + "/train.tsv";
  spec.dev_path = dir + "/dev.tsv";
  spec.test_path = dir + "/test.tsv";
  spec.format = kind == "keyword_pair" ? InputFormat::kSentencePair
                                       : InputFormat::kSingleSentence;
  spec.max_len = 64;
  spec.metric = Metric::kAccuracy;
  spec.num_classes = 2;
  return spec;
}

}  // namespace fca
