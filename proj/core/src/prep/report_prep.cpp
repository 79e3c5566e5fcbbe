#include "velvet/prep/report_prep.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "velvet/error.hpp"

namespace velvet::prep {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

int count_whitespace_words(std::string_view s) {
  int n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

SentenceList segment_report(std::string_view text) {
  SentenceList out;
  std::string cur;
  auto flush = [&] {
    std::string t = trim(cur);
    if (count_whitespace_words(t) >= 2) out.push_back(std::move(t));
    cur.clear();
  };
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?' || c == ';' || c == '\n' || c == '\r') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  if (out.empty()) fail(Errc::EmptyReport, "report has no sentence with at least two words");
  return out;
}

std::vector<std::string> basic_words(std::string_view sentence) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : sentence) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return words;
}

std::vector<std::int64_t> wordpiece(std::string_view word, const Vocabulary& vocab) {
  std::vector<std::int64_t> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::int64_t found = -1;
    std::size_t end = word.size();
    for (; end > start; --end) {
      std::string piece(word.substr(start, end - start));
      if (start > 0) piece = "##" + piece;
      found = vocab.id(piece);
      if (found >= 0 && !vocab.is_special(found)) break;
      found = -1;
    }
    if (found < 0) return {Vocabulary::kUnk};
    pieces.push_back(found);
    start = end;
  }
  return pieces;
}

TokenizedReport tokenize(const SentenceList& sentences, const Vocabulary& vocab, const TextCaps& caps) {
  TokenizedReport out;
  const int max_sent = std::min(caps.max_sentences, vocab.max_num_sent());
  std::int64_t words_total = 0;
  for (const auto& sentence : sentences) {
    if (out.num_sentences() >= max_sent || words_total >= caps.max_words_per_report) break;
    const auto words = basic_words(sentence);
    if (words.empty()) continue;
    const std::int64_t first_word = out.num_words();
    int kept = 0;
    for (const auto& w : words) {
      if (kept >= caps.max_words_per_sentence || words_total >= caps.max_words_per_report) break;
      const auto ids = wordpiece(w, vocab);
      const auto b = static_cast<std::int64_t>(out.token_ids.size());
      out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
      out.word_spans.push_back({b, static_cast<std::int64_t>(out.token_ids.size())});
      ++kept;
      ++words_total;
    }
    out.sentence_spans.push_back({first_word, out.num_words()});
  }
  return out;
}

std::vector<std::vector<std::string>> detokenize(const TokenizedReport& report, const Vocabulary& vocab) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : report.sentence_spans) {
    std::vector<std::string> words;
    for (std::int64_t w = s.begin; w < s.end; ++w) {
      std::string word;
      const Span& ws = report.word_spans[static_cast<std::size_t>(w)];
      for (std::int64_t t = ws.begin; t < ws.end; ++t) {
        const std::string& piece = vocab.token(report.token_ids[static_cast<std::size_t>(t)]);
        word += piece.rfind("##", 0) == 0 ? piece.substr(2) : piece;
      }
      words.push_back(std::move(word));
    }
    out.push_back(std::move(words));
  }
  return out;
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) fail(Errc::EmptyCorpus, "quantile of no samples");
  std::sort(samples.begin(), samples.end());
  const double h = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

StatsTable corpus_stats(const std::vector<TokenizedReport>& reports) {
  if (reports.empty()) fail(Errc::EmptyCorpus, "no reports");
  std::array<std::vector<double>, 6> rows;
  for (const auto& r : reports) {
    if (r.num_sentences() == 0) fail(Errc::EmptyReport, "report without sentences in corpus");
    std::vector<double> lens;
    for (const auto& s : r.sentence_spans) lens.push_back(static_cast<double>(s.size()));
    double sum = 0;
    for (double l : lens) sum += l;
    rows[0].push_back(static_cast<double>(r.num_words()));
    rows[1].push_back(static_cast<double>(r.num_sentences()));
    rows[2].push_back(*std::max_element(lens.begin(), lens.end()));
    rows[3].push_back(*std::min_element(lens.begin(), lens.end()));
    rows[4].push_back(sum / static_cast<double>(lens.size()));
    rows[5].push_back(quantile(lens, 0.5));
  }
  StatsTable t;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = rows[i];
    double sum = 0;
    for (double x : v) sum += x;
    t.values[i] = {*std::max_element(v.begin(), v.end()), *std::min_element(v.begin(), v.end()),
                   sum / static_cast<double>(v.size()),  quantile(v, 0.25),
                   quantile(v, 0.5),                     quantile(v, 0.75)};
  }
  return t;
}

std::string StatsTable::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "measure";
  for (const char* c : kColumns) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < kRows.size(); ++i) {
    os << kRows[i];
    for (double v : values[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::vector<RawReport> read_reports_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::vector<RawReport> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::IoError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_reports_jsonl(const std::filesystem::path& path, const std::vector<RawReport>& reports) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : reports) out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

}  // namespace velvet::prep
