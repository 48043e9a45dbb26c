#include "promptforge/synthetic.hpp"

#include <cstdio>

namespace promptforge {

namespace {

const char* const kPositive[] = {
    "great",     "wonderful", "excellent",  "delightful", "brilliant", "charming",  "superb",
    "beautiful", "moving",    "hilarious",  "gripping",   "masterful", "inspired",  "touching",
    "stunning",  "engaging",  "remarkable", "fresh",      "thrilling", "magnetic",  "elegant",
    "joyful",    "vibrant",   "clever",     "memorable",  "polished",  "promising", "sincere",
    "powerful",  "warm",      "rich",       "satisfying", "smart",     "sweet",     "lively",
    "graceful",  "stellar",   "winning",    "radiant",    "crisp",
};

const char* const kNegative[] = {
    "terrible", "awful",      "boring",     "dreadful",   "clumsy",    "tedious",    "bland",
    "messy",    "painful",    "shallow",    "lifeless",   "stale",     "dismal",     "annoying",
    "hollow",   "pointless",  "sloppy",     "choppy",     "dull",      "grating",    "weak",
    "generic",  "forgettable", "tiresome",  "incoherent", "flat",      "contrived",  "lazy",
    "muddled",  "miserable",  "cheap",      "ugly",       "clunky",    "disjointed", "crude",
    "lame",     "tacky",      "wooden",     "plodding",   "vapid",
};

const char* const kNeutral[] = {
    "the",      "a",        "this",    "that",     "movie",   "film",    "story",    "plot",
    "acting",   "script",   "scene",   "ending",   "dialogue", "cast",   "director", "pacing",
    "sequel",   "camera",   "music",   "was",      "is",      "felt",    "seemed",   "looked",
    "remains",  "becomes",  "and",     "but",      "with",    "about",   "overall",  "truly",
    "rather",   "quite",    "very",    "somewhat", "mostly",  "fairly",  "entire",   "whole",
    "first",    "second",   "final",   "new",      "old",     "long",    "short",    "early",
    "late",     "viewer",   "audience", "critics", "people",  "night",   "week",     "work",
    "style",    "tone",     "mood",    "theme",
};

template <size_t N>
const char* pick(const char* const (&pool)[N], Rng& rng) {
  return pool[rng.below(N)];
}

}  // namespace

std::vector<LabeledExample> make_synthetic_sentiment(const SynthConfig& config) {
  if (config.per_class < 0) throw Error("per_class must be non-negative");
  if (config.min_words < 2 || config.max_words < config.min_words)
    throw Error("bad sentence length bounds");

  std::vector<LabeledExample> out;
  out.reserve(static_cast<size_t>(config.per_class) * 2);
  Rng rng(Rng::mix(config.seed, 0x73796e7468ULL));

  for (int i = 0; i < config.per_class * 2; ++i) {
    int label = i % 2;
    int n_words = config.min_words +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_words - config.min_words + 1)));
    int n_sentiment = 1 + static_cast<int>(rng.below(3));
    n_sentiment = std::min(n_sentiment, n_words - 1);

    std::vector<std::string> words;
    for (int w = 0; w < n_words - n_sentiment; ++w) words.push_back(pick(kNeutral, rng));
    for (int w = 0; w < n_sentiment; ++w) {
      bool flip = rng.uniform() < config.noise;
      bool positive = (label == 1) != flip;
      words.push_back(positive ? pick(kPositive, rng) : pick(kNegative, rng));
    }
    rng.shuffle(words);

    LabeledExample ex;
    for (const std::string& w : words) {
      if (!ex.text.empty()) ex.text.push_back(' ');
      ex.text += w;
    }
    ex.label = label;
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%06d", i + 1);
    ex.id = buf;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace promptforge
