// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisign/core/error.hpp"
#include "unisign/core/text.hpp"
#include "unisign/tensor/tensor.hpp"

namespace unisign {

// ---------------------------------------------------------------------------
// Records

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

/// Station crop as fractions of the frame, 0 <= x0 < x1 <= 1.
struct CropGeometry {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;

  void validate() const {
    if (!(0 <= x0 && x0 < x1 && x1 <= 1 && 0 <= y0 && y0 < y1 && y1 <= 1))
      throw ConfigError("crop geometry must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
  }
  bool operator==(const CropGeometry&) const = default;
};

struct ClipRecord {
  std::string clip_id;
  std::string program_id;
  std::string media_path;
  Index frame_start = 0;
  std::string keypoint_path;
  std::string text;
  std::vector<std::string> glosses;
  std::optional<std::string> label;
  double duration_s = 0;
  double frame_rate = 25.0;
  Index frame_count = 0;
  Index frame_width = 0;
  Index frame_height = 0;
  Split split = Split::train;
  std::optional<CropGeometry> crop;

  bool operator==(const ClipRecord&) const = default;
};

/// Frame count implied by a duration: round(duration_s * frame_rate).
inline Index frames_for(double duration_s, double frame_rate) { return static_cast<Index>(std::llround(duration_s * frame_rate)); }

inline nlohmann::ordered_json to_json(const ClipRecord& r) {
  nlohmann::ordered_json j;
  j["clip_id"] = r.clip_id;
  j["program_id"] = r.program_id;
  j["media_path"] = r.media_path;
  j["frame_start"] = r.frame_start;
  j["keypoint_path"] = r.keypoint_path;
  j["text"] = r.text;
  j["glosses"] = r.glosses;
  j["label"] = r.label ? nlohmann::ordered_json(*r.label) : nlohmann::ordered_json(nullptr);
  j["duration_s"] = r.duration_s;
  j["frame_rate"] = r.frame_rate;
  j["frame_count"] = r.frame_count;
  j["frame_width"] = r.frame_width;
  j["frame_height"] = r.frame_height;
  j["split"] = to_string(r.split);
  if (r.crop) j["crop"] = {r.crop->x0, r.crop->y0, r.crop->x1, r.crop->y1};
  else j["crop"] = nullptr;
  return j;
}

inline ClipRecord record_from_json(const nlohmann::ordered_json& j) {
  static const std::set<std::string> known{"clip_id", "program_id", "media_path", "frame_start", "keypoint_path", "text",
                                           "glosses", "label", "duration_s", "frame_rate", "frame_count",
                                           "frame_width", "frame_height", "split", "crop"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw MalformedFile("manifest record has unknown field '" + k + "'");
  ClipRecord r;
  try {
    r.clip_id = j.at("clip_id").get<std::string>();
    r.program_id = j.value("program_id", "");
    r.media_path = j.value("media_path", "");
    r.frame_start = j.value("frame_start", Index{0});
    r.keypoint_path = j.value("keypoint_path", "");
    r.text = j.value("text", "");
    r.glosses = j.value("glosses", std::vector<std::string>{});
    if (j.contains("label") && !j["label"].is_null()) r.label = j["label"].get<std::string>();
    r.duration_s = j.value("duration_s", 0.0);
    r.frame_rate = j.value("frame_rate", 25.0);
    r.frame_count = j.value("frame_count", Index{0});
    r.frame_width = j.value("frame_width", Index{0});
    r.frame_height = j.value("frame_height", Index{0});
    r.split = parse_split(j.value("split", "train"));
    if (j.contains("crop") && !j["crop"].is_null()) {
      const auto c = j["crop"].get<std::vector<double>>();
      if (c.size() != 4) throw MalformedFile("crop must have four numbers");
      r.crop = CropGeometry{c[0], c[1], c[2], c[3]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(std::string("bad manifest record: ") + e.what());
  } catch (const ConfigError& e) {
    throw MalformedFile(e.what());
  }
  return r;
}

struct Manifest {
  std::string config_hash;
  std::vector<ClipRecord> records;
};

/// JSON lines: a metadata line, then one record per line sorted by clip_id.
inline void write_manifest(const std::string& path, const Manifest& m) {
  auto sorted = m.records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path);
  nlohmann::ordered_json meta;
  meta["_meta"] = {{"format", "unisign-manifest/1"}, {"config_hash", m.config_hash}};
  out << meta.dump() << '\n';
  for (const auto& r : sorted) out << to_json(r).dump() << '\n';
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedFile("cannot open manifest " + path);
  Manifest m;
  std::string line;
  Index n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(n) + ": " + e.what());
    }
    if (j.contains("_meta")) {
      m.config_hash = j["_meta"].value("config_hash", "");
      continue;
    }
    m.records.push_back(record_from_json(j));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Segmentation of timestamped transcripts at sentence-final punctuation

struct Utterance {
  std::string text;
  double start_s = 0;
  double end_s = 0;
};

struct TranscriptInput {
  std::string program_id;
  std::vector<Utterance> utterances;
  std::vector<std::string> marks{"。", "？", "！"};
};

struct Segment {
  std::string text;
  double start_s = 0;
  double end_s = 0;
  bool operator==(const Segment&) const = default;
};

struct SegmentResult {
  std::vector<Segment> segments;
  Index dropped_trailing_chars = 0;  // text after the last mark
  std::vector<std::string> warnings;
};

namespace detail {
inline void append_text(std::string& acc, const std::string& piece) {
  if (!acc.empty() && !piece.empty()) {
    const auto a = text::utf8_chars(acc).back(), b = text::utf8_chars(piece).front();
    if (!text::is_cjk(a) && !text::is_cjk(b) && !text::is_space(a) && !text::is_space(b)) acc += ' ';
  }
  acc += piece;
}
}  // namespace detail

/// Cuts the utterance stream after every sentence-final mark. A mark is
/// timestamped by its utterance's end, or by linear interpolation over the
/// utterance's characters when it sits mid-utterance. Each clip runs from the
/// previous mark (the first utterance's start for the first clip) to its own.
inline SegmentResult segment(const TranscriptInput& in) {
  SegmentResult res;
  if (in.utterances.empty()) return res;
  double last = -1e300;
  for (const auto& u : in.utterances) {
    if (text::normalize(u.text).empty()) throw Error(in.program_id + ": empty utterance text");
    if (u.end_s < u.start_s || u.start_s < last) throw Error(in.program_id + ": timestamps must be non-decreasing");
    last = u.end_s;
  }
  const std::set<std::string> marks(in.marks.begin(), in.marks.end());
  double boundary = in.utterances.front().start_s;
  std::string current;
  for (const auto& u : in.utterances) {
    const auto chars = text::utf8_chars(u.text);
    std::string piece;
    for (std::size_t i = 0; i < chars.size(); ++i) {
      piece += chars[i];
      if (!marks.count(chars[i])) continue;
      const double t = i + 1 == chars.size() ? u.end_s
                                             : u.start_s + (u.end_s - u.start_s) * static_cast<double>(i + 1) / static_cast<double>(chars.size());
      detail::append_text(current, piece);
      res.segments.push_back({text::normalize(current), boundary, t});
      boundary = t;
      current.clear();
      piece.clear();
    }
    detail::append_text(current, piece);
  }
  const auto rest = text::normalize(current);
  if (res.segments.empty()) {
    res.segments.push_back({rest, in.utterances.front().start_s, in.utterances.back().end_s});
    res.warnings.push_back(in.program_id + ": no sentence-final marks; the whole program is one clip");
  } else if (!rest.empty()) {
    res.dropped_trailing_chars = static_cast<Index>(text::utf8_chars(rest).size());
    res.warnings.push_back(in.program_id + ": dropped " + std::to_string(res.dropped_trailing_chars) +
                           " characters after the last sentence-final mark");
  }
  return res;
}

/// Transcript file: JSON lines {"text", "start_s", "end_s"}; the program id is the file stem.
inline TranscriptInput read_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedFile("cannot open transcript " + path);
  TranscriptInput t;
  t.program_id = std::filesystem::path(path).stem().string();
  std::string line;
  Index n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      t.utterances.push_back({j.at("text").get<std::string>(), j.at("start_s").get<double>(), j.at("end_s").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return t;
}

struct ProgramMedia {
  std::string media_path;
  std::string keypoint_path;
  double frame_rate = 25.0;
  Index frame_width = 0;
  Index frame_height = 0;
  std::optional<CropGeometry> crop;
};

/// Clip records for one program's segments.
inline std::vector<ClipRecord> records_from_segments(const std::string& program_id, const std::vector<Segment>& segments,
                                                     const ProgramMedia& media, Split split = Split::train) {
  std::vector<ClipRecord> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    ClipRecord r;
    char idx[16];
    std::snprintf(idx, sizeof idx, "%05zu", i);
    r.clip_id = program_id + "_" + idx;
    r.program_id = program_id;
    r.media_path = media.media_path;
    r.keypoint_path = media.keypoint_path;
    r.frame_start = frames_for(s.start_s, media.frame_rate);
    r.text = s.text;
    r.duration_s = s.end_s - s.start_s;
    r.frame_rate = media.frame_rate;
    r.frame_count = frames_for(r.duration_s, media.frame_rate);
    r.frame_width = media.frame_width;
    r.frame_height = media.frame_height;
    r.split = split;
    r.crop = media.crop;
    out.push_back(std::move(r));
  }
  return out;
}

/// Per-program crop geometry: {"program_id": [x0, y0, x1, y1], ...}.
inline std::map<std::string, CropGeometry> read_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open geometry file " + path);
  std::map<std::string, CropGeometry> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [k, v] : j.items()) {
      const auto c = v.get<std::vector<double>>();
      if (c.size() != 4) throw ConfigError("geometry for '" + k + "' needs four numbers");
      CropGeometry g{c[0], c[1], c[2], c[3]};
      g.validate();
      out[k] = g;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering and statistics

inline constexpr Index kMaxTrainFrames = 512;

struct FilterResult {
  std::vector<ClipRecord> records;
  Index dropped = 0;
  std::vector<std::string> truncation_flagged;  // dev/test clips that will be center-truncated
};

/// Drops training clips of kMaxTrainFrames frames or more; long dev/test clips
/// are kept and listed for truncation. Record contents are never modified.
inline FilterResult apply_filters(const std::vector<ClipRecord>& records) {
  FilterResult res;
  for (const auto& r : records) {
    if (r.frame_count >= kMaxTrainFrames) {
      if (r.split == Split::train) {
        ++res.dropped;
        continue;
      }
      res.truncation_flagged.push_back(r.clip_id);
    }
    res.records.push_back(r);
  }
  return res;
}

enum class TextUnit { automatic, character, word };

inline TextUnit parse_text_unit(const std::string& s) {
  if (s == "auto") return TextUnit::automatic;
  if (s == "char") return TextUnit::character;
  if (s == "word") return TextUnit::word;
  throw ConfigError("unknown text unit '" + s + "' (expected auto, char or word)");
}

/// Text length units: non-space characters, or whitespace words. `automatic`
/// picks characters for CJK text and words otherwise.
inline std::vector<std::string> text_units(const std::string& s, TextUnit unit) {
  if (unit == TextUnit::automatic) unit = text::contains_cjk(s) ? TextUnit::character : TextUnit::word;
  if (unit == TextUnit::word) return text::split_words(s);
  std::vector<std::string> out;
  for (auto& c : text::utf8_chars(s))
    if (!text::is_space(c)) out.push_back(std::move(c));
  return out;
}

struct Histogram {
  double bin_width = 1.0;
  std::vector<Index> counts;  // bin i covers [i * bin_width, (i + 1) * bin_width)
};

inline Histogram histogram(const std::vector<double>& values, double bin_width) {
  Histogram h{bin_width, {}};
  for (double v : values) {
    const auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(v / bin_width)));
    if (h.counts.size() <= bin) h.counts.resize(bin + 1, 0);
    ++h.counts[bin];
  }
  return h;
}

struct CorpusStats {
  Index clips = 0;
  double mean_duration_s = 0;
  double mean_text_length = 0;
  Index vocabulary_size = 0;
  Histogram duration_histogram;
  Histogram text_length_histogram;
};

inline CorpusStats corpus_stats(const std::vector<ClipRecord>& records, TextUnit unit = TextUnit::automatic,
                                double duration_bin_s = 1.0, double length_bin = 5.0) {
  if (records.empty()) throw EmptyCorpus("corpus_stats needs at least one record");
  CorpusStats s;
  s.clips = static_cast<Index>(records.size());
  std::vector<double> durations, lengths;
  std::set<std::string> vocab;
  for (const auto& r : records) {
    durations.push_back(r.duration_s);
    const auto units = text_units(r.text, unit);
    lengths.push_back(static_cast<double>(units.size()));
    vocab.insert(units.begin(), units.end());
  }
  double dsum = 0, lsum = 0;
  for (double d : durations) dsum += d;
  for (double l : lengths) lsum += l;
  s.mean_duration_s = dsum / static_cast<double>(s.clips);
  s.mean_text_length = lsum / static_cast<double>(s.clips);
  s.vocabulary_size = static_cast<Index>(vocab.size());
  s.duration_histogram = histogram(durations, duration_bin_s);
  s.text_length_histogram = histogram(lengths, length_bin);
  return s;
}

inline nlohmann::ordered_json to_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["clips"] = s.clips;
  j["mean_duration_s"] = s.mean_duration_s;
  j["mean_text_length"] = s.mean_text_length;
  j["vocabulary_size"] = s.vocabulary_size;
  j["duration_histogram"] = {{"bin_width", s.duration_histogram.bin_width}, {"counts", s.duration_histogram.counts}};
  j["text_length_histogram"] = {{"bin_width", s.text_length_histogram.bin_width}, {"counts", s.text_length_histogram.counts}};
  return j;
}

}  // namespace unisign
