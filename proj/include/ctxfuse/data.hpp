#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxfuse/tokens.hpp"

namespace ctxfuse {

// Whole-word translation vocabulary (the provider side segments the same
// text into characters instead). Reserved ids come from tok_id.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> words);
  static Vocab from_corpus(const std::vector<std::string>& lines);  // distinct words, sorted

  std::size_t size() const { return words_.size(); }
  int id(const std::string& word) const;  // UNK for unknown words
  const std::string& word(int id) const;
  std::vector<int> encode(const std::string& line) const;  // whitespace split
  std::string decode(const std::vector<int>& ids) const;   // content words joined by spaces
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

enum class Task { copy, reverse, substitute, context_disambiguation };

Task task_from_string(const std::string& s);
std::string to_string(Task t);

struct TaskSpec {
  Task task = Task::copy;
  std::size_t vocab_words = 64;  // content lexicon size (role words come on top)
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t train_n = 10000;
  std::size_t valid_n = 1000;
  std::size_t test_n = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

struct ParallelCorpus {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  std::vector<std::string> prev;  // preceding sentences; empty unless the task provides context

  bool has_context() const { return !prev.empty(); }
  std::size_t size() const { return src.size(); }
};

struct GeneratedData {
  TaskSpec spec;
  std::vector<std::string> pool;  // content lexicon
  // role words of the disambiguation task (empty strings otherwise): the
  // ambiguous source word, the two context markers, the two renderings
  std::string amb, m1, m2, y1, y2;
  ParallelCorpus train, valid, test;
};

// Pure function of the spec: equal specs generate identical corpora. Words
// are fixed-length with pairwise Hamming distance >= 2, so a single masked
// character is always uniquely recoverable from the rest of the word.
GeneratedData generate(const TaskSpec& spec);

// context_disambiguation scoring: for each sentence the ambiguous position
// is where source and reference differ; counts hypotheses that render it as
// the reference does. Sentences without such a position are skipped.
double ambiguous_position_accuracy(const std::vector<std::string>& src,
                                   const std::vector<std::string>& ref,
                                   const std::vector<std::string>& hyp);

void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::string& path);

std::vector<std::string> split_words(const std::string& line);
std::string join_words(const std::vector<std::string>& words);

}  // namespace ctxfuse
