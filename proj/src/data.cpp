#include "ctxfuse/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctxfuse/rng.hpp"

namespace ctxfuse {

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

namespace {

int hamming(const std::string& a, const std::string& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

// Fixed-length words with pairwise Hamming distance >= 2: every word stays
// uniquely identifiable when any single character is hidden.
std::vector<std::string> make_lexicon(std::size_t count, std::uint64_t seed) {
  constexpr std::size_t kWordLen = 3;
  Rng rng(derive_seed(seed, "lexicon"));
  std::vector<std::string> words;
  words.reserve(count);
  std::size_t attempts = 0;
  const std::size_t max_attempts = count * 10000;
  while (words.size() < count) {
    if (++attempts > max_attempts)
      throw std::runtime_error("lexicon generation did not converge");
    std::string cand(kWordLen, 'a');
    for (auto& c : cand) c = static_cast<char>('a' + rng.uniform_int(26));
    bool ok = true;
    for (const auto& w : words) {
      if (hamming(w, cand) < 2) {
        ok = false;
        break;
      }
    }
    if (ok) words.push_back(std::move(cand));
  }
  return words;
}

std::vector<std::string> sample_sentence(Rng& rng, const std::vector<std::string>& pool,
                                         std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.uniform_int(max_len - min_len + 1);
  std::vector<std::string> words(len);
  for (auto& w : words) w = pool[rng.uniform_int(pool.size())];
  return words;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> words) {
  words_.assign({"<pad>", "<unk>", "<bos>", "<eos>"});
  for (auto& w : words) {
    if (w.empty()) throw std::invalid_argument("empty vocabulary word");
    if (index_.count(w) || std::find(words_.begin(), words_.begin() + tok_id::first_content,
                                     w) != words_.begin() + tok_id::first_content)
      throw std::invalid_argument("duplicate vocabulary word: " + w);
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(std::move(w));
  }
}

Vocab Vocab::from_corpus(const std::vector<std::string>& lines) {
  std::vector<std::string> distinct;
  for (const auto& line : lines)
    for (auto& w : split_words(line)) distinct.push_back(std::move(w));
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  return Vocab(std::move(distinct));
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? tok_id::unk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw std::out_of_range("vocabulary id out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& line) const {
  std::vector<int> ids;
  for (const auto& w : split_words(line)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids)
    if (i >= tok_id::first_content) out.push_back(word(i));
  return join_words(out);
}

Task task_from_string(const std::string& s) {
  if (s == "copy") return Task::copy;
  if (s == "reverse") return Task::reverse;
  if (s == "substitute") return Task::substitute;
  if (s == "context_disambiguation") return Task::context_disambiguation;
  throw std::invalid_argument("unknown task: " + s);
}

std::string to_string(Task t) {
  switch (t) {
    case Task::copy: return "copy";
    case Task::reverse: return "reverse";
    case Task::substitute: return "substitute";
    case Task::context_disambiguation: return "context_disambiguation";
  }
  throw std::logic_error("unreachable");
}

void TaskSpec::validate() const {
  if (vocab_words < 8) throw std::invalid_argument("vocab_words must be at least 8");
  if (min_len < 1 || min_len > max_len) throw std::invalid_argument("bad sentence length range");
  if (train_n == 0 || valid_n == 0 || test_n == 0)
    throw std::invalid_argument("all splits must be non-empty");
}

GeneratedData generate(const TaskSpec& spec) {
  spec.validate();
  GeneratedData out;
  out.spec = spec;

  // Role words are generated from the same stream even for tasks that do not
  // use them, so pools are identical across tasks at equal seeds.
  auto lexicon = make_lexicon(spec.vocab_words + 5, spec.seed);
  out.pool.assign(lexicon.begin(), lexicon.begin() + static_cast<long>(spec.vocab_words));
  const bool ctx = spec.task == Task::context_disambiguation;
  if (ctx) {
    out.amb = lexicon[spec.vocab_words + 0];
    out.m1 = lexicon[spec.vocab_words + 1];
    out.m2 = lexicon[spec.vocab_words + 2];
    out.y1 = lexicon[spec.vocab_words + 3];
    out.y2 = lexicon[spec.vocab_words + 4];
  }

  // Fixed word-to-word bijection of the substitute task.
  std::vector<std::string> mapped = out.pool;
  if (spec.task == Task::substitute) {
    Rng rng(derive_seed(spec.seed, "bijection"));
    rng.shuffle(mapped);
  }
  std::unordered_map<std::string, std::string> bijection;
  for (std::size_t i = 0; i < out.pool.size(); ++i) bijection[out.pool[i]] = mapped[i];

  ParallelCorpus* splits[3] = {&out.train, &out.valid, &out.test};
  const std::size_t sizes[3] = {spec.train_n, spec.valid_n, spec.test_n};
  for (int si = 0; si < 3; ++si) {
    Rng rng(derive_seed(spec.seed, "corpus", static_cast<std::uint64_t>(si)));
    ParallelCorpus& cp = *splits[si];
    for (std::size_t i = 0; i < sizes[si]; ++i) {
      auto src = sample_sentence(rng, out.pool, spec.min_len, spec.max_len);
      std::vector<std::string> tgt;
      switch (spec.task) {
        case Task::copy:
          tgt = src;
          break;
        case Task::reverse:
          tgt.assign(src.rbegin(), src.rend());
          break;
        case Task::substitute:
          for (const auto& w : src) tgt.push_back(bijection.at(w));
          break;
        case Task::context_disambiguation: {
          // One ambiguous word per source; the disambiguating marker lives
          // only in the preceding sentence, never in the source itself.
          const std::size_t amb_pos = rng.uniform_int(src.size());
          src[amb_pos] = out.amb;
          const bool first_sense = rng.uniform() < 0.5;
          auto prev = sample_sentence(rng, out.pool, spec.min_len, spec.max_len);
          prev[rng.uniform_int(prev.size())] = first_sense ? out.m1 : out.m2;
          tgt = src;
          tgt[amb_pos] = first_sense ? out.y1 : out.y2;
          cp.prev.push_back(join_words(prev));
          break;
        }
      }
      cp.src.push_back(join_words(src));
      cp.tgt.push_back(join_words(tgt));
    }
  }
  return out;
}

double ambiguous_position_accuracy(const std::vector<std::string>& src,
                                   const std::vector<std::string>& ref,
                                   const std::vector<std::string>& hyp) {
  if (src.size() != ref.size() || src.size() != hyp.size())
    throw std::invalid_argument("ambiguous_position_accuracy: size mismatch");
  std::size_t scored = 0, correct = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto s = split_words(src[i]);
    const auto r = split_words(ref[i]);
    const auto h = split_words(hyp[i]);
    if (s.size() != r.size()) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] == r[j]) continue;
      ++scored;
      if (j < h.size() && h[j] == r[j]) ++correct;
    }
  }
  if (scored == 0) throw std::invalid_argument("no ambiguous positions found");
  return static_cast<double>(correct) / static_cast<double>(scored);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace ctxfuse
