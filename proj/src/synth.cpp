/*
 * Copyright 2026 The knowsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "knowsel/synth.hpp"

#include <random>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

const std::vector<std::string>& pair_cues() {
  static const std::vector<std::string> cues = {
      "shaken", "stirred", "restless", "moved",  "rattled", "tense",  "overwhelmed", "torn",
      "wired",  "flushed", "drained",  "buzzing", "numb",   "jittery", "heavy",      "wistful"};
  return cues;
}

const std::vector<std::string>& topics() {
  static const std::vector<std::string> t = {
      "exam", "dog",   "job",    "trip",  "party", "garden", "car",    "wedding",
      "game", "house", "sister", "movie", "loan",  "concert", "friend", "interview"};
  return t;
}

const std::vector<std::string>& events() {
  static const std::vector<std::string> e = {"thought about", "talked about", "heard about",
                                             "worried about", "dreamed about", "read about"};
  return e;
}

template <class Rng>
std::size_t pick(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace

const std::vector<std::string>& dialogue_emotions() {
  static const std::vector<std::string> labels = {
      "afraid",    "angry",     "annoyed",     "anticipating", "anxious",   "apprehensive",
      "ashamed",   "caring",    "confident",   "content",      "devastated", "disappointed",
      "disgusted", "embarrassed", "excited",   "faithful",     "furious",   "grateful",
      "guilty",    "hopeful",   "impressed",   "jealous",      "joyful",    "lonely",
      "nostalgic", "prepared",  "proud",       "sad",          "sentimental", "surprised",
      "terrified", "trusting"};
  return labels;
}

SynthData synth_corpus(const SynthOptions& o) {
  const auto& all = dialogue_emotions();
  if (o.num_emotions == 0 || o.num_emotions > all.size()) {
    throw ConfigError("synth: num_emotions must be in 1..32");
  }
  if (o.size == 0) throw ConfigError("synth: size must be positive");
  SynthData out;
  out.emotions.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(o.num_emotions));

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t q = o.num_emotions;
  auto partner = [q](std::size_t e) { return (e ^ 1u) < q ? (e ^ 1u) : e; };

  for (std::size_t i = 0; i < o.size; ++i) {
    const std::size_t e = i % q;
    const std::string& label = out.emotions[e];
    const std::string& topic = topics()[pick(rng, topics().size())];
    const std::size_t shown = o.context_noise > 0.0 && unit(rng) < o.context_noise ? partner(e) : e;
    const std::string cue =
        o.exact_context ? out.emotions[shown] : pair_cues()[(shown / 2) % pair_cues().size()];

    DialogueExample ex;
    ex.id = "synth-" + std::to_string(i);
    ex.emotion = label;
    ex.context = {"i " + events()[pick(rng, events().size())] + " the " + topic + " today .",
                  "what happened ?", "i feel so " + cue + " ."};
    ex.response = "oh , you must be " + label + " about the " + topic + " .";

    Relation informative = o.designated;
    if (o.swap_rate > 0.0 && unit(rng) < o.swap_rate) {
      do informative = kRelations[pick(rng, kNumRelations)];
      while (informative == o.designated);
    }
    auto cue_of = [&](std::size_t k) {
      return o.cue_in_knowledge ? pair_cues()[(k / 2) % pair_cues().size()] + " " : std::string();
    };

    KnowledgeBundle bundle;
    for (auto r : kRelations) {
      auto& inf = bundle[r];
      if (r == informative) {
        inf = {cue_of(e) + label, "feels " + label};
        continue;
      }
      std::size_t d = e;
      if (q > 2) {
        while (d == e || d == partner(e)) d = pick(rng, q);
      } else if (q == 2) {
        d = partner(e);
      }
      const std::string distractor = cue_of(d) + out.emotions[d];
      switch (r) {
        case Relation::kXIntent: inf = {"to be " + distractor, "to discuss the " + topic}; break;
        case Relation::kXNeed: inf = {"to get " + distractor, "to see the " + topic}; break;
        case Relation::kXWant: inf = {"to feel " + distractor, "to forget the " + topic}; break;
        case Relation::kXEffect: inf = {"gets " + distractor, "cries"}; break;
        case Relation::kXReact: inf = {distractor, "feels " + distractor}; break;
      }
    }
    out.store.insert(ex.id, std::move(bundle));
    out.corpus.push_back(std::move(ex));
  }
  return out;
}

}  // namespace knowsel
