// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unisign/core/rng.hpp"
#include "unisign/core/text.hpp"
#include "unisign/encoders.hpp"
#include "unisign/nn/layers.hpp"

namespace unisign {

// ---------------------------------------------------------------------------
// Tokenizer: whole words when known, otherwise a first character followed by
// "##"-prefixed continuation characters.

class Tokenizer {
 public:
  static constexpr Index pad = 0, eos = 1, unk = 2, bos = 3;
  static constexpr const char* kContinuation = "##";

  Tokenizer() {
    for (const char* s : {"<pad>", "<eos>", "<unk>", "<bos>"}) add(s);
  }

  /// Vocabulary from training texts: words seen at least `min_count` times
  /// plus every character in both initial and continuation form.
  static Tokenizer build(const std::vector<std::string>& texts, Index min_count = 1) {
    std::map<std::string, Index> words;
    std::map<std::string, Index> chars;
    for (const auto& t : texts)
      for (const auto& w : text::split_words(t)) {
        ++words[w];
        for (const auto& c : text::utf8_chars(w)) ++chars[c];
      }
    std::vector<std::pair<std::string, Index>> ranked(words.begin(), words.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Tokenizer tok;
    for (const auto& [w, n] : ranked)
      if (n >= min_count) tok.add(w);
    for (const auto& [c, n] : chars) tok.add(c);
    for (const auto& [c, n] : chars) tok.add(kContinuation + c);
    return tok;
  }

  /// One token per line; the first four lines are the special tokens.
  static Tokenizer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open vocabulary " + path);
    Tokenizer tok;
    std::string line;
    Index n = 0;
    while (std::getline(in, line)) {
      if (n < 4) {
        if (line != tok.tokens_[static_cast<std::size_t>(n)]) throw MalformedFile(path + ": line " + std::to_string(n + 1) + " must be " + tok.tokens_[static_cast<std::size_t>(n)]);
      } else {
        tok.add(line);
      }
      ++n;
    }
    if (n < 4) throw MalformedFile(path + ": missing special tokens");
    return tok;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Tokenizer from_tokens(const std::vector<std::string>& tokens) {
    Tokenizer tok;
    for (std::size_t i = 4; i < tokens.size(); ++i) tok.add(tokens[i]);
    return tok;
  }

  std::vector<Index> encode(std::string_view s) const {
    std::vector<Index> ids;
    for (const auto& w : text::split_words(s)) {
      if (auto id = find(w)) {
        ids.push_back(*id);
        continue;
      }
      const auto chars = text::utf8_chars(w);
      for (std::size_t i = 0; i < chars.size(); ++i) ids.push_back(find(i == 0 ? chars[i] : kContinuation + chars[i]).value_or(unk));
    }
    return ids;
  }

  /// Text of `ids` up to the first end-of-sequence; padding and begin markers are skipped.
  std::string decode(const std::vector<Index>& ids) const {
    std::vector<std::string> words;
    for (Index id : ids) {
      if (id == eos) break;
      if (id == pad || id == bos) continue;
      const std::string& t = token(id);
      if (t.rfind(kContinuation, 0) == 0 && t.size() > 2 && !words.empty()) words.back() += t.substr(2);
      else words.push_back(t);
    }
    return text::join_words(words);
  }

  std::optional<Index> find(const std::string& t) const {
    auto it = index_.find(t);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(Index id) const {
    if (id < 0 || id >= size()) throw IndexOutOfRange("token id " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Stable identifier of the vocabulary contents.
  std::string id() const {
    std::uint64_t h = fnv1a("");
    for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  void add(const std::string& t) {
    if (t.empty() || index_.count(t)) return;
    index_.emplace(t, size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

struct TokenSequence {
  std::vector<Index> ids;
  std::string text;
  std::string tokenizer_id;
};

inline TokenSequence tokenize(const Tokenizer& tok, std::string_view s) {
  auto ids = tok.encode(s);
  return {ids, tok.decode(ids), tok.id()};
}

enum class TargetKind { word, gloss, sentence };

inline std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::word: return "word";
    case TargetKind::gloss: return "gloss";
    case TargetKind::sentence: return "sentence";
  }
  return "?";
}

struct SupervisionTarget {
  TargetKind kind = TargetKind::sentence;
  std::string text;
};

/// Glosses joined by single spaces.
inline SupervisionTarget gloss_target(const std::vector<std::string>& glosses) {
  std::string s;
  for (const auto& g : glosses) s += (s.empty() ? "" : " ") + g;
  return {TargetKind::gloss, s};
}

// ---------------------------------------------------------------------------
// Language model contract

/// Any encoder-decoder that maps input embeddings and a target prefix to
/// next-token log-probabilities.
template <class S>
class LMInterface {
 public:
  using scalar_type = S;
  virtual ~LMInterface() = default;
  virtual Index hidden_dim() const = 0;
  virtual Index vocab_size() const = 0;
  /// [T, D] embeddings -> [T, D] encoder states.
  virtual Tensor<S> encode(const Tensor<S>& embeddings) const = 0;
  /// Log-probabilities [U, V] of the token following each prefix of `inputs`.
  virtual Tensor<S> decode_logprobs(const Tensor<S>& memory, const std::vector<Index>& inputs) const = 0;
  virtual void collect_params(nn::ParamList<S>& out) = 0;
};

/// Linear map from sign features [T, 4C] to the language model width.
template <class S>
class SignProjection {
 public:
  using scalar_type = S;
  SignProjection() = default;
  SignProjection(Index in, Index out, Rng& rng) : linear_(in, out, rng) {}
  Tensor<S> operator()(const SignFeatures<S>& sign) const { return linear_(sign.features); }
  Tensor<S> operator()(const Tensor<S>& features) const { return linear_(features); }
  nn::Linear<S>& linear() { return linear_; }
  void collect_params(nn::ParamList<S>& out) { out.child("linear", linear_); }

 private:
  nn::Linear<S> linear_;
};

template <class S>
struct LossTerms {
  Tensor<S> sum;   // negative log-likelihood summed over target positions
  Tensor<S> mean;  // per token
  Index tokens = 0;
};

/// -sum_u logp[u, target_u].
template <class S>
LossTerms<S> nll_from_logprobs(const Tensor<S>& logprobs, const std::vector<Index>& targets) {
  if (targets.empty()) throw EmptyTarget("empty target sequence");
  auto total = scale(sum_all(pick(logprobs, targets)), S(-1));
  const auto n = static_cast<Index>(targets.size());
  return {total, scale(total, S(1) / static_cast<S>(n)), n};
}

/// Softmax cross-entropy of raw logits [U, V] summed over positions.
template <class S>
LossTerms<S> sequence_cross_entropy(const Tensor<S>& logits, const std::vector<Index>& targets) {
  return nll_from_logprobs(log_softmax(logits), targets);
}

/// Teacher-forced language-modeling loss: the decoder reads <bos> + target and
/// predicts target + <eos>. Every task uses this one function.
template <class S>
LossTerms<S> lm_loss(const LMInterface<S>& lm, const Tensor<S>& memory, const std::vector<Index>& target) {
  if (target.empty()) throw EmptyTarget("lm_loss needs a non-empty target");
  std::vector<Index> inputs{Tokenizer::bos};
  inputs.insert(inputs.end(), target.begin(), target.end());
  std::vector<Index> outputs(target);
  outputs.push_back(Tokenizer::eos);
  return nll_from_logprobs(lm.decode_logprobs(memory, inputs), outputs);
}

// ---------------------------------------------------------------------------
// Decoding

enum class DecodeStrategy { greedy, beam };

inline DecodeStrategy parse_decode_strategy(const std::string& s) {
  if (s == "greedy") return DecodeStrategy::greedy;
  if (s == "beam") return DecodeStrategy::beam;
  throw ConfigError("unknown decode strategy '" + s + "' (expected greedy or beam)");
}

inline std::string to_string(DecodeStrategy s) { return s == DecodeStrategy::greedy ? "greedy" : "beam"; }

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  Index beam_width = 4;
  Index max_len = 64;

  void validate() const {
    if (max_len < 1) throw ConfigError("decode.max_len must be >= 1");
    if (beam_width < 1) throw ConfigError("decode.beam_width must be >= 1");
  }
};

namespace detail {

/// Indices of the k largest entries of row `r`, ties resolved toward the smaller id.
template <class S>
std::vector<Index> top_k(const Tensor<S>& logprobs, Index r, Index k) {
  const Index V = logprobs.dim(1);
  const S* row = logprobs.data().data() + r * V;
  std::vector<Index> ids(static_cast<std::size_t>(V));
  for (Index i = 0; i < V; ++i) ids[i] = i;
  k = std::min(k, V);
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [row](Index a, Index b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

}  // namespace detail

/// Generated token ids without <bos>/<eos>; at most cfg.max_len tokens.
template <class S>
std::vector<Index> generate(const LMInterface<S>& lm, const Tensor<S>& memory, const DecodeConfig& cfg = {}) {
  cfg.validate();
  NoGradGuard no_grad;
  if (cfg.strategy == DecodeStrategy::greedy) {
    std::vector<Index> prefix{Tokenizer::bos};
    while (static_cast<Index>(prefix.size()) - 1 < cfg.max_len) {
      const auto lp = lm.decode_logprobs(memory, prefix);
      const Index next = detail::top_k(lp, lp.dim(0) - 1, 1).front();
      if (next == Tokenizer::eos) break;
      prefix.push_back(next);
    }
    return {prefix.begin() + 1, prefix.end()};
  }

  struct Beam {
    std::vector<Index> ids;
    double score = 0;
    bool done = false;
  };
  std::vector<Beam> beams{{{Tokenizer::bos}, 0.0, false}};
  for (Index step = 0; step < cfg.max_len; ++step) {
    std::vector<Beam> candidates;
    for (const auto& b : beams) {
      if (b.done) {
        candidates.push_back(b);
        continue;
      }
      const auto lp = lm.decode_logprobs(memory, b.ids);
      const Index last = lp.dim(0) - 1;
      for (Index tok : detail::top_k(lp, last, cfg.beam_width)) {
        Beam c = b;
        c.score += static_cast<double>(lp.data()[last * lp.dim(1) + tok]);
        if (tok == Tokenizer::eos) c.done = true;
        else c.ids.push_back(tok);
        candidates.push_back(std::move(c));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Beam& a, const Beam& b) { return a.score > b.score; });
    candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(cfg.beam_width)));
    beams = std::move(candidates);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; })) break;
  }
  return {beams.front().ids.begin() + 1, beams.front().ids.end()};
}

// ---------------------------------------------------------------------------
// Default language model: a small pre-norm transformer encoder-decoder.

struct LMConfig {
  Index d_model = 256;
  Index encoder_layers = 2;
  Index decoder_layers = 2;
  Index heads = 4;
  Index ffn_dim = 512;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) throw ConfigError("lm.heads must divide lm.d_model");
    if (encoder_layers < 0 || decoder_layers < 1) throw ConfigError("lm needs at least one decoder layer");
  }
};

template <class S>
class Seq2SeqLM final : public LMInterface<S> {
 public:
  Seq2SeqLM(const LMConfig& cfg, Index vocab, Rng& rng) : cfg_(cfg), vocab_(vocab) {
    cfg.validate();
    for (Index i = 0; i < cfg.encoder_layers; ++i) encoder_.emplace_back(cfg, rng, false);
    for (Index i = 0; i < cfg.decoder_layers; ++i) decoder_.emplace_back(cfg, rng, true);
    encoder_norm_ = nn::LayerNorm<S>(cfg.d_model);
    decoder_norm_ = nn::LayerNorm<S>(cfg.d_model);
    embedding_ = nn::Embedding<S>(vocab, cfg.d_model, rng);
    output_ = nn::Linear<S>(cfg.d_model, vocab, rng);
  }

  Index hidden_dim() const override { return cfg_.d_model; }
  Index vocab_size() const override { return vocab_; }

  Tensor<S> encode(const Tensor<S>& embeddings) const override {
    if (embeddings.rank() != 2 || embeddings.dim(1) != cfg_.d_model) throw ShapeError("lm encode expects [T, d_model], got " + to_string(embeddings.shape()));
    auto h = add(embeddings, nn::sinusoidal_positions<S>(embeddings.dim(0), cfg_.d_model));
    for (const auto& layer : encoder_) {
      auto n = layer.norm1(h);
      h = add(h, layer.self_attention(n, n));
      h = add(h, layer.ffn(layer.norm3(h)));
    }
    return encoder_norm_(h);
  }

  Tensor<S> decode_logprobs(const Tensor<S>& memory, const std::vector<Index>& inputs) const override {
    for (Index id : inputs)
      if (id < 0 || id >= vocab_) throw IndexOutOfRange("token id " + std::to_string(id) + " outside vocabulary");
    const auto U = static_cast<Index>(inputs.size());
    auto y = add(embedding_(inputs), nn::sinusoidal_positions<S>(U, cfg_.d_model));
    const auto mask = causal_mask(U);
    for (const auto& layer : decoder_) {
      auto n = layer.norm1(y);
      y = add(y, layer.self_attention(n, n, mask));
      y = add(y, layer.cross_attention(layer.norm2(y), memory));
      y = add(y, layer.ffn(layer.norm3(y)));
    }
    return log_softmax(output_(decoder_norm_(y)));
  }

  void collect_params(nn::ParamList<S>& out) override {
    for (std::size_t i = 0; i < encoder_.size(); ++i) out.child("encoder" + std::to_string(i), encoder_[i]);
    for (std::size_t i = 0; i < decoder_.size(); ++i) out.child("decoder" + std::to_string(i), decoder_[i]);
    out.child("encoder_norm", encoder_norm_);
    out.child("decoder_norm", decoder_norm_);
    out.child("embedding", embedding_);
    out.child("output", output_);
  }

  const LMConfig& config() const { return cfg_; }

 private:
  struct Layer {
    using scalar_type = S;
    Layer(const LMConfig& cfg, Rng& rng, bool cross)
        : has_cross(cross), norm1(cfg.d_model), norm2(cfg.d_model), norm3(cfg.d_model),
          self_attention(cfg.d_model, cfg.heads, rng), ffn(cfg.d_model, cfg.ffn_dim, rng) {
      if (cross) cross_attention = nn::MultiHeadAttention<S>(cfg.d_model, cfg.heads, rng);
    }
    bool has_cross;
    nn::LayerNorm<S> norm1, norm2, norm3;
    nn::MultiHeadAttention<S> self_attention, cross_attention;
    nn::FeedForward<S> ffn;

    void collect_params(nn::ParamList<S>& out) {
      out.child("norm1", norm1);
      out.child("self_attention", self_attention);
      if (has_cross) {
        out.child("norm2", norm2);
        out.child("cross_attention", cross_attention);
      }
      out.child("norm3", norm3);
      out.child("ffn", ffn);
    }
  };

  static Tensor<S> causal_mask(Index U) {
    std::vector<S> m(static_cast<std::size_t>(U * U), S(0));
    for (Index i = 0; i < U; ++i)
      for (Index j = i + 1; j < U; ++j) m[i * U + j] = -std::numeric_limits<S>::infinity();
    return Tensor<S>::from(std::move(m), {U, U});
  }

  LMConfig cfg_;
  Index vocab_;
  std::vector<Layer> encoder_, decoder_;
  nn::LayerNorm<S> encoder_norm_, decoder_norm_;
  nn::Embedding<S> embedding_;
  nn::Linear<S> output_;
};

}  // namespace unisign
