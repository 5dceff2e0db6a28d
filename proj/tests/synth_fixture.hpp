#pragma once

#include <map>
#include <memory>
#include <string>

#include "sdkprint/corpus.hpp"
#include "sdkprint/synth.hpp"
#include "support.hpp"

namespace testing_support {

// Default synthetic corpus on disk plus its extracted WL features.
struct SynthFixture {
  TempDir dir{"synth"};
  sdkprint::SynthCorpus sc;
  sdkprint::Corpus corpus;
  std::map<std::string, sdkprint::FeatureVector> wl;
};

inline std::unique_ptr<SynthFixture> make_synth_fixture(const sdkprint::SynthConfig& cfg) {
  auto f = std::make_unique<SynthFixture>();
  f->sc = sdkprint::generate(cfg);
  sdkprint::write_synth(f->sc, f->dir.path());
  f->corpus = sdkprint::corpus_at(f->sc, f->dir.path());
  const auto ex = sdkprint::extract_corpus(f->corpus, {}, {}, 4);
  for (std::size_t i = 0; i < ex.ids.size(); ++i) f->wl.emplace(ex.ids[i], ex.vectors[i]);
  return f;
}

inline const SynthFixture& default_synth() {
  static const auto f = make_synth_fixture({});
  return *f;
}

}  // namespace testing_support
