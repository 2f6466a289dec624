#pragma once

// A small synthetic world: corpus, held-out rare words and a briefly
// pretrained tiny model. Built once per test binary.

#include "wordlearn/pretrain.hpp"
#include "wordlearn/synth.hpp"

namespace wordlearn::testing {

struct TinyWorld {
  SynthCorpus corpus;
  RosterHoldout holdout;
  Checkpoint ck;
  std::vector<Sentence> irrelevant;
};

inline const TinyWorld& tiny_world() {
  static const TinyWorld w = [] {
    TinyWorld t;
    SynthConfig sc;
    sc.topics = 4;
    sc.nouns = 8;
    sc.verbs = 4;
    sc.adjectives = 3;
    sc.train_articles = 60;
    sc.test_articles = 6;
    sc.rare_words = 3;
    sc.seed = 5;
    t.corpus = generate_synth(sc);
    t.holdout = hold_out_roster(t.corpus.train, t.corpus.roster, 10, 0);
    VocabOptions vo;
    vo.keep = t.corpus.roster;
    const Vocabulary vocab = Vocabulary::build(t.corpus.train, vo);
    PretrainConfig pc;
    pc.model.hidden_size = 8;
    pc.model.unroll_steps = 10;
    pc.model.p_keep = 0.9;
    pc.model.init_range = 0.1;
    pc.epochs = 2;
    pc.batch = 4;
    t.ck = pretrain_run(*t.holdout.without_words, vocab, pc, 3, t.corpus.roster).checkpoint;
    t.irrelevant = std::vector<Sentence>(t.corpus.test.begin(), t.corpus.test.begin() + 10);
    return t;
  }();
  return w;
}

}  // namespace wordlearn::testing
