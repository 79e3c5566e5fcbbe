#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "velvet/prep/vocab.hpp"

namespace velvet::prep {

struct RawReport {
  std::string id;
  std::string text;
};

/// Half-open index range.
struct Span {
  std::int64_t begin = 0;
  std::int64_t end = 0;

  std::int64_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

using SentenceList = std::vector<std::string>;

struct TextCaps {
  int max_sentences = 50;
  int max_words_per_sentence = 200;
  int max_words_per_report = 512;
};

/// Body tokens of one report (no specials) with word and sentence bookkeeping.
struct TokenizedReport {
  std::vector<std::int64_t> token_ids;
  std::vector<Span> word_spans;      // over token positions, one per word
  std::vector<Span> sentence_spans;  // over word indices

  std::int64_t num_sentences() const { return static_cast<std::int64_t>(sentence_spans.size()); }
  std::int64_t num_words() const { return static_cast<std::int64_t>(word_spans.size()); }
};

/// Splits on . ! ? ; and newline runs, trims, and drops pieces with fewer
/// than two whitespace-delimited words. Throws EmptyReport when nothing is
/// left.
SentenceList segment_report(std::string_view text);

/// Lower-cases and splits a sentence into words; punctuation characters
/// become words of their own.
std::vector<std::string> basic_words(std::string_view sentence);

/// Greedy longest-match-first pieces for one word; a word that cannot be
/// covered maps to a single [UNK].
std::vector<std::int64_t> wordpiece(std::string_view word, const Vocabulary& vocab);

/// Tokenizes and truncates to `caps`: trailing sentences are dropped first,
/// then trailing words; a word's pieces are never split.
TokenizedReport tokenize(const SentenceList& sentences, const Vocabulary& vocab, const TextCaps& caps = {});

/// Words per sentence, pieces joined with their `##` markers removed.
std::vector<std::vector<std::string>> detokenize(const TokenizedReport& report, const Vocabulary& vocab);

/// Summary statistics in the layout of a report-statistics table: one row per
/// measure, columns max, min, mean, 25% quartile, median, 75% quartile.
struct StatsTable {
  static constexpr std::array<const char*, 6> kRows = {
      "# of words",          "# of sentences",          "max length of sentence",
      "min length of sentence", "mean length of sentence", "median length of sentence"};
  static constexpr std::array<const char*, 6> kColumns = {"max",    "min",           "mean",
                                                          "25% quartiles", "median", "75% quartiles"};
  std::array<std::array<double, 6>, 6> values{};

  std::string to_csv() const;
};

/// Linear-interpolation quantile (q in [0, 1]) of unsorted samples.
double quantile(std::vector<double> samples, double q);

StatsTable corpus_stats(const std::vector<TokenizedReport>& reports);

std::vector<RawReport> read_reports_jsonl(const std::filesystem::path& path);
void write_reports_jsonl(const std::filesystem::path& path, const std::vector<RawReport>& reports);

}  // namespace velvet::prep
