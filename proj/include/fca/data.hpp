#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fca/encoder.hpp"
#include "fca/errors.hpp"

namespace fca {

enum class InputFormat { kSingleSentence, kSentencePair, kPassageQuestionAnswer };
enum class Metric { kAccuracy, kF1, kMatthews };

inline std::string input_format_name(InputFormat f) {
  switch (f) {
    case InputFormat::kSingleSentence: return "single_sentence";
    case InputFormat::kSentencePair: return "sentence_pair";
    default: return "passage_question_answer";
  }
}

inline InputFormat input_format_from_name(const std::string& s) {
  if (s == "single_sentence") return InputFormat::kSingleSentence;
  if (s == "sentence_pair") return InputFormat::kSentencePair;
  if (s == "passage_question_answer") {
    return InputFormat::kPassageQuestionAnswer;
  }
  throw DataError("unknown input format '" + s + "'");
}

inline std::string metric_name(Metric m) {
  switch (m) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kF1: return "f1";
    default: return "matthews";
  }
}

inline Metric metric_from_name(const std::string& s) {
  if (s == "accuracy") return Metric::kAccuracy;
  if (s == "f1") return Metric::kF1;
  if (s == "matthews") return Metric::kMatthews;
  throw DataError("unknown metric '" + s + "'");
}

struct TaskSpec {
  std::string name = "task";
  std::string train_path, dev_path, test_path;
  InputFormat format = InputFormat::kSingleSentence;
  std::size_t max_len = 64;
  Metric metric = Metric::kAccuracy;
  std::size_t num_classes = 2;  // per-choice logits for multiple choice
};

/// Lowercased alphanumeric word split; punctuation and whitespace both
/// delimit and are dropped.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Corpus-built vocabulary with the four reserved ids up front and an UNK
/// fallback for everything below the frequency cutoff.
struct Vocab {
  std::vector<std::string> words;  // id -> word
  std::unordered_map<std::string, int> index;

  Vocab() {
    words = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
    for (std::size_t i = 0; i < words.size(); ++i) {
      index[words[i]] = static_cast<int>(i);
    }
  }

  static Vocab build(const std::vector<std::string>& texts,
                     std::size_t min_frequency = 2) {
    std::map<std::string, std::size_t> freq;  // ordered: deterministic ids
    for (const std::string& t : texts) {
      for (const std::string& w : split_words(t)) freq[w]++;
    }
    Vocab v;
    for (const auto& [word, count] : freq) {
      if (count >= min_frequency) {
        v.index[word] = static_cast<int>(v.words.size());
        v.words.push_back(word);
      }
    }
    return v;
  }

  static Vocab from_words(std::vector<std::string> stored) {
    Vocab v;
    v.words = std::move(stored);
    v.index.clear();
    for (std::size_t i = 0; i < v.words.size(); ++i) {
      v.index[v.words[i]] = static_cast<int>(i);
    }
    if (v.words.size() < kNumReservedIds || v.words[0] != "[CLS]") {
      throw DataError("vocab: reserved ids corrupted");
    }
    return v;
  }

  std::size_t size() const { return words.size(); }

  int id(const std::string& word) const {
    auto it = index.find(word);
    return it == index.end() ? kUnkId : it->second;
  }
};

/// One labeled instance. Classification tasks hold a single id sequence;
/// multiple choice holds one sequence per candidate answer sharing a softmax.
struct Example {
  std::vector<std::vector<int>> choices;
  int label = 0;

  void check() const {
    for (const std::vector<int>& ids : choices) {
      if (ids.empty() || ids[0] != kClsId) {
        throw DataError("example: sequence must start with CLS");
      }
      bool pad = false;
      for (int id : ids) {
        if (id == kPadId) {
          pad = true;
        } else if (pad) {
          throw DataError("example: pad before a real token");
        }
      }
    }
  }
};

namespace detail {

// [CLS] seg1 [SEP] seg2 [SEP] ...; empty segments are skipped entirely.
// Over-length sequences are cut to max_len with the final slot forced to SEP.
inline std::vector<int> compose_sequence(
    const std::vector<std::vector<std::string>>& segments, const Vocab& vocab,
    std::size_t max_len) {
  std::vector<int> ids = {kClsId};
  for (const std::vector<std::string>& seg : segments) {
    if (seg.empty()) continue;
    for (const std::string& w : seg) ids.push_back(vocab.id(w));
    ids.push_back(kSepId);
  }
  if (ids.size() > max_len) {
    ids.resize(max_len);
    ids.back() = kSepId;
  }
  return ids;
}

}  // namespace detail

/// Maps raw text columns to an Example under the task's input format.
inline Example tokenize(const std::vector<std::string>& texts,
                        const TaskSpec& spec, const Vocab& vocab) {
  if (texts.empty() || texts[0].empty()) {
    throw DataError("tokenize: empty input text");
  }
  Example ex;
  switch (spec.format) {
    case InputFormat::kSingleSentence:
      ex.choices.push_back(detail::compose_sequence(
          {split_words(texts[0])}, vocab, spec.max_len));
      break;
    case InputFormat::kSentencePair: {
      std::vector<std::string> second =
          texts.size() > 1 ? split_words(texts[1]) : std::vector<std::string>{};
      ex.choices.push_back(detail::compose_sequence(
          {split_words(texts[0]), second}, vocab, spec.max_len));
      break;
    }
    case InputFormat::kPassageQuestionAnswer: {
      if (texts.size() != 6) {
        throw DataError("tokenize: passage_question_answer needs passage, "
                        "question and four answers");
      }
      for (std::size_t a = 2; a < 6; ++a) {
        ex.choices.push_back(detail::compose_sequence(
            {split_words(texts[0]), split_words(texts[1]),
             split_words(texts[a])},
            vocab, spec.max_len));
      }
      break;
    }
  }
  ex.check();
  return ex;
}

struct IngestSummary {
  std::size_t total_lines = 0;
  std::size_t skipped = 0;
  std::vector<std::size_t> bad_lines;  // first few, 1-based
};

/// Reads a TSV (label TAB text [TAB text...]), validates and tokenizes each
/// line, reports malformed lines by number and skips them, then shuffles
/// with the run seed. More than 10% malformed lines or an empty result
/// aborts.
inline std::vector<Example> ingest_dataset(const std::string& path,
                                           const TaskSpec& spec,
                                           const Vocab& vocab,
                                           std::uint64_t seed,
                                           IngestSummary* summary = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<Example> examples;
  IngestSummary local;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t label_range =
      spec.format == InputFormat::kPassageQuestionAnswer ? 4
                                                         : spec.num_classes;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++local.total_lines;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    bool ok = cols.size() >= 2;
    int label = 0;
    if (ok) {
      try {
        label = std::stoi(cols[0]);
      } catch (...) {
        ok = false;
      }
    }
    ok = ok && label >= 0 && static_cast<std::size_t>(label) < label_range;
    if (ok) {
      try {
        Example ex = tokenize({cols.begin() + 1, cols.end()}, spec, vocab);
        ex.label = label;
        examples.push_back(std::move(ex));
      } catch (const DataError&) {
        ok = false;
      }
    }
    if (!ok) {
      ++local.skipped;
      if (local.bad_lines.size() < 16) local.bad_lines.push_back(line_no);
    }
  }
  if (examples.empty()) {
    throw DataError("dataset " + path + " contains no valid examples");
  }
  if (local.skipped * 10 > local.total_lines) {
    throw DataError("dataset " + path + ": " +
                    std::to_string(local.skipped) + " of " +
                    std::to_string(local.total_lines) +
                    " lines malformed (over 10%)");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(examples.begin(), examples.end(), rng);
  if (summary) *summary = local;
  return examples;
}

/// All text columns of a TSV, for vocabulary building from the train split.
inline std::vector<std::string> read_text_columns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string col;
    bool first = true;
    while (std::getline(ss, col, '\t')) {
      if (!first) texts.push_back(col);
      first = false;
    }
  }
  return texts;
}

}  // namespace fca
