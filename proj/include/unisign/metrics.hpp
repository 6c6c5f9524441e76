// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisign/core/error.hpp"
#include "unisign/core/task.hpp"
#include "unisign/core/text.hpp"
#include "unisign/tensor/tensor.hpp"

namespace unisign::metrics {

using Tokens = std::vector<std::string>;

/// Minimum number of substitutions, deletions and insertions turning `a` into `b`.
template <class Seq>
Index edit_distance(const Seq& a, const Seq& b) {
  std::vector<Index> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<Index>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<Index>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Word error rate; can exceed 1 when the hypothesis has many insertions.
inline double wer(const Tokens& ref, const Tokens& hyp) {
  if (ref.empty()) throw EmptyReference("word error rate needs a non-empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

/// Corpus WER: total edits over total reference words.
inline double corpus_wer(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) {
  if (refs.size() != hyps.size()) throw LengthMismatch("reference and hypothesis counts differ");
  Index edits = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) throw EmptyReference("reference " + std::to_string(i) + " is empty");
    edits += edit_distance(refs[i], hyps[i]);
    words += static_cast<Index>(refs[i].size());
  }
  if (words == 0) throw EmptyReference("no references");
  return static_cast<double>(edits) / static_cast<double>(words);
}

// ---------------------------------------------------------------------------------------------
// Tokenization for text metrics

/// Characters for CJK text, lowercased punctuation-free words otherwise.
enum class MetricTokenization { automatic, character, word };

inline std::string to_string(MetricTokenization t) {
  switch (t) {
    case MetricTokenization::automatic: return "auto";
    case MetricTokenization::character: return "char";
    default: return "word";
  }
}

inline MetricTokenization parse_metric_tokenization(const std::string& s) {
  if (s == "auto") return MetricTokenization::automatic;
  if (s == "char") return MetricTokenization::character;
  if (s == "word") return MetricTokenization::word;
  throw ConfigError("unknown metric tokenization '" + s + "' (expected auto, char or word)");
}

inline Tokens tokenize_for_metrics(const std::string& s, MetricTokenization mode = MetricTokenization::automatic) {
  if (mode == MetricTokenization::automatic)
    mode = text::contains_cjk(s) ? MetricTokenization::character : MetricTokenization::word;
  Tokens out;
  if (mode == MetricTokenization::character) {
    for (auto& ch : text::utf8_chars(s))
      if (!text::is_space(ch) && !text::is_punctuation(ch)) out.push_back(text::ascii_lower(ch));
    return out;
  }
  std::string cleaned;
  for (auto& ch : text::utf8_chars(text::ascii_lower(s))) cleaned += text::is_punctuation(ch) ? std::string(" ") : ch;
  return text::split_words(cleaned);
}

// ---------------------------------------------------------------------------------------------
// BLEU

enum class BleuSmoothing { none, exp };

/// Sufficient statistics; corpus BLEU sums these before combining.
struct BleuStats {
  std::vector<Index> matches, totals;
  Index hyp_len = 0, ref_len = 0;

  explicit BleuStats(int max_n = 4) : matches(static_cast<std::size_t>(max_n), 0), totals(static_cast<std::size_t>(max_n), 0) {}
  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < matches.size(); ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

struct BleuResult {
  double score = 0;
  std::vector<double> precisions;
  double brevity_penalty = 0;
  Index hyp_len = 0, ref_len = 0;
};

namespace detail {
inline std::map<Tokens, Index> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, Index> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}
}  // namespace detail

/// Clipped n-gram matches against several references; reference length is the closest one (shorter on ties).
inline BleuStats bleu_stats(const std::vector<Tokens>& refs, const Tokens& hyp, int max_n = 4) {
  if (max_n < 1) throw ConfigError("BLEU order must be at least 1");
  BleuStats s(max_n);
  s.hyp_len = static_cast<Index>(hyp.size());
  if (!refs.empty()) {
    auto best = static_cast<Index>(refs.front().size());
    for (const auto& r : refs) {
      const auto len = static_cast<Index>(r.size());
      const auto d = std::abs(len - s.hyp_len), bd = std::abs(best - s.hyp_len);
      if (d < bd || (d == bd && len < best)) best = len;
    }
    s.ref_len = best;
  }
  for (int n = 1; n <= max_n; ++n) {
    const auto hc = detail::ngram_counts(hyp, static_cast<std::size_t>(n));
    std::map<Tokens, Index> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : detail::ngram_counts(r, static_cast<std::size_t>(n))) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : hc) {
      const auto it = max_ref.find(g);
      s.matches[static_cast<std::size_t>(n - 1)] += std::min(c, it == max_ref.end() ? Index{0} : it->second);
    }
    s.totals[static_cast<std::size_t>(n - 1)] = std::max<Index>(0, s.hyp_len - n + 1);
  }
  return s;
}

inline BleuResult bleu_from_stats(const BleuStats& s, BleuSmoothing smoothing = BleuSmoothing::none) {
  BleuResult r;
  r.hyp_len = s.hyp_len;
  r.ref_len = s.ref_len;
  double log_sum = 0, exp_factor = 1;
  bool zero = false;
  for (std::size_t n = 0; n < s.matches.size(); ++n) {
    double p = 0;
    if (s.totals[n] > 0) {
      if (s.matches[n] > 0) {
        p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
      } else if (smoothing == BleuSmoothing::exp) {
        exp_factor *= 2;
        p = 1.0 / (exp_factor * static_cast<double>(s.totals[n]));
      }
    }
    r.precisions.push_back(p);
    if (p == 0) zero = true;
    else log_sum += std::log(p);
  }
  if (s.hyp_len == 0) return r;
  r.brevity_penalty = s.hyp_len >= s.ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  if (!zero) r.score = r.brevity_penalty * std::exp(log_sum / static_cast<double>(s.matches.size()));
  return r;
}

/// Sentence-level BLEU in [0, 1].
inline double bleu(const std::vector<Tokens>& refs, const Tokens& hyp, int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::none) {
  return bleu_from_stats(bleu_stats(refs, hyp, max_n), smoothing).score;
}

inline BleuResult corpus_bleu(const std::vector<std::vector<Tokens>>& refs, const std::vector<Tokens>& hyps, int max_n = 4,
                              BleuSmoothing smoothing = BleuSmoothing::none) {
  if (refs.size() != hyps.size()) throw LengthMismatch("reference and hypothesis counts differ");
  BleuStats total(max_n);
  for (std::size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(refs[i], hyps[i], max_n);
  return bleu_from_stats(total, smoothing);
}

// ---------------------------------------------------------------------------------------------
// ROUGE-L

/// Recall weight of the F-measure, as in the common captioning evaluation toolkits.
inline constexpr double kRougeBeta = 1.2;

inline Index lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<Index> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(const Tokens& ref, const Tokens& hyp, double beta = kRougeBeta) {
  const Index lcs = lcs_length(ref, hyp);
  if (lcs == 0) return 0.0;
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  const double p = static_cast<double>(lcs) / static_cast<double>(hyp.size());
  return (1 + beta * beta) * r * p / (r + beta * beta * p);
}

/// Mean sentence ROUGE-L over a corpus.
inline double corpus_rouge_l(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps, double beta = kRougeBeta) {
  if (refs.size() != hyps.size()) throw LengthMismatch("reference and hypothesis counts differ");
  if (refs.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) sum += rouge_l(refs[i], hyps[i], beta);
  return sum / static_cast<double>(refs.size());
}

// ---------------------------------------------------------------------------------------------
// Classification accuracy

struct Top1Record {
  std::string true_label;
  std::string predicted_label;
  Index class_id = 0;
};

struct Top1 {
  double per_instance = 0;
  double per_class = 0;
};

inline Top1 top1(const std::vector<Top1Record>& records) {
  if (records.empty()) throw EmptyInput("top-1 accuracy needs at least one record");
  std::map<Index, std::pair<Index, Index>> per_class;  // correct, total
  Index correct = 0;
  for (const auto& r : records) {
    const bool ok = r.true_label == r.predicted_label;
    correct += ok;
    auto& c = per_class[r.class_id];
    c.first += ok;
    ++c.second;
  }
  double mean = 0;
  for (const auto& [id, c] : per_class) mean += static_cast<double>(c.first) / static_cast<double>(c.second);
  return {static_cast<double>(correct) / static_cast<double>(records.size()), mean / static_cast<double>(per_class.size())};
}

inline std::string normalize_label(const std::string& s) { return text::ascii_lower(text::normalize(s)); }

/// Maps generated text onto a label: exact match after normalization, else nearest by character
/// edit distance with ties going to the lexicographically smaller label.
inline Index islr_match(const std::string& generated, const std::vector<std::string>& vocabulary) {
  if (vocabulary.empty()) throw EmptyInput("label vocabulary is empty");
  const auto g = normalize_label(generated);
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (normalize_label(vocabulary[i]) == g) return static_cast<Index>(i);
  const auto gc = text::utf8_chars(g);
  std::size_t best = 0;
  Index best_d = -1;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    const Index d = edit_distance(text::utf8_chars(normalize_label(vocabulary[i])), gc);
    if (best_d < 0 || d < best_d || (d == best_d && vocabulary[i] < vocabulary[best])) {
      best = i;
      best_d = d;
    }
  }
  return static_cast<Index>(best);
}

// ---------------------------------------------------------------------------------------------
// Reports

/// Scores are stored as fractions; tables scale them to percent.
struct EvalReport {
  Task task = Task::slt;
  std::string split = "test";
  std::optional<double> wer;
  std::map<int, double> bleu;
  std::optional<double> rouge_l;
  std::optional<double> p_i_top1;
  std::optional<double> p_c_top1;
  Index n_samples = 0;
  std::string config_hash;  // of the run that produced the predictions
};

struct Prediction {
  std::string clip_id;
  std::string reference;
  std::string hypothesis;
};

inline EvalReport evaluate_texts(Task task, const std::vector<Prediction>& preds,
                                 MetricTokenization tok = MetricTokenization::automatic, const std::vector<std::string>& labels = {},
                                 BleuSmoothing smoothing = BleuSmoothing::none) {
  if (preds.empty()) throw EmptyInput("no predictions to evaluate");
  EvalReport rep;
  rep.task = task;
  rep.n_samples = static_cast<Index>(preds.size());
  if (task == Task::islr) {
    std::vector<std::string> vocab = labels;
    if (vocab.empty())
      for (const auto& p : preds) vocab.push_back(p.reference);
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    std::vector<Top1Record> recs;
    for (const auto& p : preds) {
      const auto truth = islr_match(p.reference, vocab);
      recs.push_back({vocab[static_cast<std::size_t>(truth)], vocab[static_cast<std::size_t>(islr_match(p.hypothesis, vocab))], truth});
    }
    const auto t = top1(recs);
    rep.p_i_top1 = t.per_instance;
    rep.p_c_top1 = t.per_class;
    return rep;
  }
  std::vector<Tokens> refs, hyps;
  for (const auto& p : preds) {
    // Gloss sequences are space separated even when the glosses are CJK.
    refs.push_back(task == Task::cslr ? text::split_words(text::ascii_lower(p.reference)) : tokenize_for_metrics(p.reference, tok));
    hyps.push_back(task == Task::cslr ? text::split_words(text::ascii_lower(p.hypothesis)) : tokenize_for_metrics(p.hypothesis, tok));
  }
  if (task == Task::cslr) {
    rep.wer = corpus_wer(refs, hyps);
    return rep;
  }
  std::vector<std::vector<Tokens>> multi;
  for (auto& r : refs) multi.push_back({r});
  for (int n = 1; n <= 4; ++n) rep.bleu[n] = corpus_bleu(multi, hyps, n, smoothing).score;
  rep.rouge_l = corpus_rouge_l(refs, hyps);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"task", to_string(r.task)}, {"split", r.split}, {"n_samples", r.n_samples}, {"scale", "fraction"}};
  if (r.wer) j["wer"] = *r.wer;
  if (!r.bleu.empty()) {
    nlohmann::json b;
    for (const auto& [n, v] : r.bleu) b[std::to_string(n)] = v;
    j["bleu"] = b;
  }
  if (r.rouge_l) j["rouge_l"] = *r.rouge_l;
  if (r.p_i_top1) j["p_i_top1"] = *r.p_i_top1;
  if (r.p_c_top1) j["p_c_top1"] = *r.p_c_top1;
  if (r.task == Task::slt) j["bleurt"] = "unavailable";
  if (!r.config_hash.empty()) j["config_hash"] = r.config_hash;
  return j;
}

/// Human-readable table with scores in percent.
inline std::string format_table(const EvalReport& r) {
  std::vector<std::pair<std::string, double>> rows;
  if (r.p_i_top1) rows.emplace_back("P-I top-1", *r.p_i_top1);
  if (r.p_c_top1) rows.emplace_back("P-C top-1", *r.p_c_top1);
  if (r.wer) rows.emplace_back("WER", *r.wer);
  for (const auto& [n, v] : r.bleu) rows.emplace_back("BLEU-" + std::to_string(n), v);
  if (r.rouge_l) rows.emplace_back("ROUGE-L", *r.rouge_l);
  std::ostringstream os;
  os << "task " << to_string(r.task) << ", split " << r.split << ", " << r.n_samples << " samples\n";
  os << "+------------+----------+\n| metric     |    value |\n+------------+----------+\n";
  for (const auto& [name, v] : rows) {
    char line[64];
    std::snprintf(line, sizeof line, "| %-10s | %8.2f |\n", name.c_str(), 100.0 * v);
    os << line;
  }
  os << "+------------+----------+\n";
  if (r.task == Task::slt) os << "BLEURT: unavailable\n";
  if (!r.config_hash.empty()) os << "config " << r.config_hash << "\n";
  return os.str();
}

/// Writes the summary line followed by one line per prediction, plus the table.
inline void write_report(const EvalReport& r, const std::vector<Prediction>& preds, const std::string& jsonl_path,
                         const std::string& table_path) {
  std::ofstream js(jsonl_path);
  if (!js) throw ConfigError("cannot write " + jsonl_path);
  js << nlohmann::json{{"report", to_json(r)}}.dump() << '\n';
  for (const auto& p : preds)
    js << nlohmann::json{{"clip_id", p.clip_id}, {"reference", p.reference}, {"hypothesis", p.hypothesis}}.dump() << '\n';
  std::ofstream tb(table_path);
  if (!tb) throw ConfigError("cannot write " + table_path);
  tb << format_table(r);
}

}  // namespace unisign::metrics
