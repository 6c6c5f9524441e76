// SPDX-License-Identifier: Apache-2.0
// Writes a synthetic corpus (keypoints, optional video, manifest) for smoke runs.
#include <iostream>

#include "CLI11.hpp"
#include "unisign/config.hpp"
#include "unisign/toy.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic sign corpus", "unisign_synth"};
  std::string out, kind = "sentence", manifest = "train.jsonl", split = "train", prefix = "toy";
  unisign::toy::CorpusOptions o;
  unisign::Index classes = 8, per_class = 4;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--kind", kind, "sentence or class")->check(CLI::IsMember({"sentence", "class"}));
  app.add_option("--clips", o.clips, "Clips (sentence corpora)");
  app.add_option("--classes", classes, "Classes (class corpora)");
  app.add_option("--per-class", per_class, "Clips per class");
  app.add_option("--min-frames", o.min_frames, "Shortest clip");
  app.add_option("--max-frames", o.max_frames, "Longest clip");
  app.add_option("--seed", o.seed, "Generator seed");
  app.add_option("--split", split, "train, dev or test");
  app.add_option("--prefix", prefix, "Clip id prefix");
  app.add_option("--manifest", manifest, "Manifest file name inside --out");
  app.add_flag("--video", o.render_video, "Also render frames");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  try {
    if (o.min_frames < 1 || o.max_frames < o.min_frames) throw unisign::ConfigError("need 1 <= --min-frames <= --max-frames");
    o.split = unisign::parse_split(split);
    o.prefix = prefix;
    const auto clips = kind == "class" ? unisign::toy::class_corpus(classes, per_class, o) : unisign::toy::sentence_corpus(o);
    const nlohmann::json settings{{"kind", kind}, {"clips", o.clips}, {"classes", classes}, {"per_class", per_class},
                                  {"min_frames", o.min_frames}, {"max_frames", o.max_frames}, {"seed", o.seed},
                                  {"split", split}, {"prefix", prefix}, {"video", o.render_video}};
    unisign::toy::write_corpus(out, clips, manifest, unisign::config_hash(settings));
    std::cout << nlohmann::json{{"event", "synthesized"}, {"dir", out}, {"manifest", manifest}, {"clips", clips.size()}}.dump() << '\n';
  } catch (const unisign::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
