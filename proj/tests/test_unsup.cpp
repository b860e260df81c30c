#include <algorithm>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "pcmgen/unsup.hpp"
#include "support/noise_check.hpp"

using namespace pcmgen;
using oracle::check_noise;

namespace {

Sentence sentence_of(std::vector<int> ids, Lang lang = Lang::English) {
  Sentence s;
  s.ids = std::move(ids);
  s.lang = lang;
  return s;
}

std::shared_ptr<const Vocab> word_vocab(int n) {
  Tokens t;
  for (int i = 0; i < n; ++i) t.push_back("w" + std::to_string(i));
  return std::make_shared<const Vocab>(build_vocab({t}));
}

std::vector<Sentence> random_corpus(Rng& rng, int n, int vocab_size, Lang lang, int min_len = 3, int max_len = 7) {
  std::vector<Sentence> out;
  for (int i = 0; i < n; ++i) {
    Sentence s;
    s.lang = lang;
    const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
    for (int j = 0; j < len; ++j) {
      s.ids.push_back(special::kCount +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab_size - special::kCount))));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string bytes_of(const Model& m) { return serialize_checkpoint(m.to_checkpoint(0)); }

double loss_of(const Model& m, const std::vector<Sentence>& src, const std::vector<Sentence>& tgt) {
  Tape<float> tape(m.params());
  return tape.value(m.forward_loss(tape, src, tgt))(0, 0);
}

}  // namespace

TEST(Noise, IdentityWithoutDropOrWindow) {
  Rng rng(1);
  const auto s = sentence_of({5, 9, 7, 11, 6}, Lang::Pidgin);
  const auto out = add_noise(s, {0.0, 1}, rng);
  EXPECT_EQ(out.ids, s.ids);
  EXPECT_EQ(out.lang, Lang::Pidgin);
}

TEST(Noise, PropertiesOverTenThousandTrials) {
  Rng rng(7);
  for (int k : {1, 2, 3, 5}) {
    const NoiseConfig cfg{0.1, k};
    int worst = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      const int len = 1 + static_cast<int>(rng.below(15));
      std::vector<int> ids(static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) ids[static_cast<std::size_t>(i)] = 100 + i;
      rng.shuffle(ids);
      const auto in = sentence_of(ids);
      const auto out = add_noise(in, cfg, rng);
      const auto c = check_noise(in, out);
      ASSERT_TRUE(c.subset) << "k=" << k << " trial " << trial;
      ASSERT_TRUE(c.survived);
      ASSERT_LE(c.max_displacement, k - 1) << "k=" << k;
      ASSERT_EQ(out.lang, in.lang);
      worst = std::max(worst, c.max_displacement);
    }
    // The bound is tight: the window actually gets used.
    EXPECT_EQ(worst, k - 1) << "k=" << k;
  }
}

TEST(Noise, MultisetPreservedWithRepeatedTokens) {
  Rng rng(8);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<int> ids;
    const int len = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < len; ++i) ids.push_back(4 + static_cast<int>(rng.below(3)));
    const auto out = add_noise(sentence_of(ids), {0.3, 3}, rng);
    std::map<int, int> have, got;
    for (int id : ids) ++have[id];
    for (int id : out.ids) ++got[id];
    ASSERT_FALSE(out.ids.empty());
    for (const auto& [id, n] : got) ASSERT_LE(n, have[id]);
  }
}

TEST(Noise, EmpiricalDropRateMatchesBernoulli) {
  Rng rng(9);
  // Long sentences so the survival guarantee essentially never fires.
  std::vector<int> ids(50);
  for (int i = 0; i < 50; ++i) ids[static_cast<std::size_t>(i)] = 10 + i;
  std::size_t total = 0, dropped = 0;
  while (total < 100000) {
    const auto out = add_noise(sentence_of(ids), {0.1, 3}, rng);
    total += ids.size();
    dropped += ids.size() - out.ids.size();
  }
  const double rate = static_cast<double>(dropped) / static_cast<double>(total);
  EXPECT_GE(rate, 0.09);
  EXPECT_LE(rate, 0.11);
}

TEST(Noise, HighDropStillKeepsOneToken) {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    const auto out = add_noise(sentence_of({4, 5}), {0.99, 2}, rng);
    ASSERT_EQ(out.ids.size() >= 1, true);
  }
}

TEST(Noise, ConfigValidation) {
  EXPECT_THROW((NoiseConfig{1.0, 3}.validate()), UsageError);
  EXPECT_THROW((NoiseConfig{-0.1, 3}.validate()), UsageError);
  EXPECT_THROW((NoiseConfig{0.1, 0}.validate()), UsageError);
  EXPECT_NO_THROW((NoiseConfig{0.0, 1}.validate()));
}

TEST(Unsup, DenoisingWithIdentityNoiseIsCopyLoss) {
  auto vocab = word_vocab(20);
  const auto m = Model::create(vocab, {8, 12}, 2);
  Rng data(3);
  const auto batch = random_corpus(data, 6, vocab->size(), Lang::Pidgin);
  Rng noise_rng(4);
  Tape<float> tape(m.params());
  const double ae = tape.value(denoising_loss(tape, m, batch, Lang::Pidgin, {0.0, 1}, noise_rng))(0, 0);
  EXPECT_DOUBLE_EQ(ae, loss_of(m, batch, batch));
  EXPECT_GT(ae, 0.0);
}

TEST(Unsup, DenoisingRejectsWrongLanguage) {
  auto vocab = word_vocab(10);
  const auto m = Model::create(vocab, {4, 6}, 2);
  Rng rng(1);
  Tape<float> tape(m.params());
  EXPECT_THROW(denoising_loss(tape, m, {sentence_of({5, 6}, Lang::English)}, Lang::Pidgin, {}, rng), ShapeError);
}

TEST(Unsup, BackTranslationCarriesOppositeTagAndCap) {
  auto vocab = word_vocab(20);
  const auto m = Model::create(vocab, {8, 12}, 2);
  Rng data(3);
  const auto batch = random_corpus(data, 5, vocab->size(), Lang::English);
  const auto synth = back_translate(m, batch, Lang::English);
  ASSERT_EQ(synth.size(), batch.size());
  const int cap = backtranslation_max_len(batch);
  for (const auto& s : synth) {
    EXPECT_EQ(s.lang, Lang::Pidgin);
    EXPECT_LE(static_cast<int>(s.size()), cap);
  }
  EXPECT_EQ(backtranslation_max_len({sentence_of(std::vector<int>(10, 5))}), 20);
  EXPECT_EQ(backtranslation_max_len({sentence_of(std::vector<int>(50, 5))}), 60);
}

TEST(Unsup, BackTranslationGradientIgnoresGenerationPass) {
  // The BT loss must equal a plain forward_loss on the frozen translations,
  // value and gradient alike.
  auto vocab = word_vocab(20);
  const auto m = Model::create(vocab, {8, 12}, 5);
  Rng data(6);
  const auto batch = random_corpus(data, 4, vocab->size(), Lang::Pidgin);
  std::vector<Sentence> synth;
  Tape<float> bt_tape(m.params());
  const Var bt = backtranslation_loss(bt_tape, m, batch, Lang::Pidgin, &synth);
  const auto g_bt = bt_tape.backward(bt);

  Tape<float> ref_tape(m.params());
  const Var ref = m.forward_loss(ref_tape, synth, batch);
  const auto g_ref = ref_tape.backward(ref);

  EXPECT_EQ(bt_tape.value(bt)(0, 0), ref_tape.value(ref)(0, 0));
  ASSERT_EQ(g_bt.size(), g_ref.size());
  for (std::size_t i = 0; i < g_bt.size(); ++i) {
    EXPECT_EQ(g_bt[i], g_ref[i]) << "param " << i;
  }
}

TEST(Unsup, ConfigValidation) {
  UnsupTrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda_ae = 0;
  c.lambda_bt = 0;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_NO_THROW(c.validate(true));
  c = {};
  c.lambda_bt = -1;
  EXPECT_THROW(c.validate(), UsageError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Unsup, ConfigJsonRoundTrip) {
  UnsupTrainConfig c;
  c.lambda_bt = 0.5;
  c.steps = 77;
  c.noise.k = 4;
  c.seed = 99;
  const nlohmann::json j = c;
  const auto back = j.get<UnsupTrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  // Every field is optional.
  const auto defaults = nlohmann::json::object().get<UnsupTrainConfig>();
  EXPECT_EQ(nlohmann::json(defaults), nlohmann::json(UnsupTrainConfig{}));
}

TEST(Unsup, BatchStreamCoversEpochBeforeRepeating) {
  std::vector<Sentence> data;
  for (int i = 0; i < 10; ++i) data.push_back(sentence_of({4 + i}));
  BatchStream stream(data, Rng(3));
  std::vector<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    for (auto idx : stream.next_indices(2)) seen.push_back(idx);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen[i], i);
}

namespace {

struct TinyCipher {
  std::shared_ptr<const Vocab> vocab = word_vocab(16);
  std::vector<Sentence> en, pcm;
  TinyCipher() {
    Rng rng(21);
    en = random_corpus(rng, 40, vocab->size(), Lang::English);
    pcm = random_corpus(rng, 40, vocab->size(), Lang::Pidgin);
  }
  UnsupTrainConfig config(int steps) const {
    UnsupTrainConfig c;
    c.steps = steps;
    c.batch_size = 4;
    c.eval_every = 5;
    c.seed = 11;
    return c;
  }
};

}  // namespace

TEST(Unsup, FixedSeedGivesByteIdenticalCheckpoints) {
  TinyCipher t;
  const auto init = Model::create(t.vocab, {8, 12}, 1);
  const auto a = unsup_train(init, t.en, t.pcm, t.config(6));
  const auto b = unsup_train(init, t.en, t.pcm, t.config(6));
  EXPECT_EQ(bytes_of(a), bytes_of(b));
  auto other = t.config(6);
  other.seed = 12;
  const auto c = unsup_train(init, t.en, t.pcm, other);
  EXPECT_NE(bytes_of(a), bytes_of(c));
}

TEST(Unsup, ZeroBacktranslationWeightIsPureDenoising) {
  TinyCipher t;
  const auto init = Model::create(t.vocab, {8, 12}, 1);
  auto cfg = t.config(4);
  cfg.lambda_bt = 0;
  TrainLog log;
  const auto trained = unsup_train(init, t.en, t.pcm, cfg, {}, &log);
  ASSERT_EQ(log.steps.size(), 4u);
  for (const auto& s : log.steps) {
    EXPECT_GT(s.ae_en, 0);
    EXPECT_GT(s.ae_pcm, 0);
    EXPECT_EQ(s.bt_en, 0);
    EXPECT_EQ(s.bt_pcm, 0);
  }

  // Replay the same schedule by hand: AE(en) then AE(pcm), summed, clipped,
  // one Adam step.
  Model manual = init;
  Rng master(cfg.seed);
  BatchStream en_s(t.en, master.fork(1));
  BatchStream pcm_s(t.pcm, master.fork(2));
  Rng noise = master.fork(3);
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState<float> adam(manual.params(), ac);
  for (int step = 0; step < cfg.steps; ++step) {
    auto total = zero_gradients(manual.params());
    const auto be = en_s.next(4);
    {
      Tape<float> tape(manual.params());
      accumulate(total, tape.backward(denoising_loss(tape, manual, be, Lang::English, cfg.noise, noise)), 1.0f);
    }
    const auto bp = pcm_s.next(4);
    {
      Tape<float> tape(manual.params());
      accumulate(total, tape.backward(denoising_loss(tape, manual, bp, Lang::Pidgin, cfg.noise, noise)), 1.0f);
    }
    clip_global_norm(total, cfg.clip_norm);
    adam_step(manual.params(), total, adam);
  }
  EXPECT_EQ(bytes_of(manual), bytes_of(trained));
}

TEST(Unsup, DenoisingLossHalvesOnFiftyWordCorpus) {
  auto vocab = word_vocab(50);
  Rng rng(31);
  const auto en = random_corpus(rng, 200, vocab->size(), Lang::English);
  const auto pcm = random_corpus(rng, 200, vocab->size(), Lang::Pidgin);
  UnsupTrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch_size = 8;
  cfg.lambda_bt = 0;
  cfg.eval_every = 2000;
  cfg.lr = 3e-3;
  TrainLog log;
  unsup_train(Model::create(vocab, {32, 64}, 1), en, pcm, cfg, {}, &log);
  auto mean = [&](std::size_t b, std::size_t e) {
    double s = 0;
    for (std::size_t i = b; i < e; ++i) s += log.steps[i].ae_en + log.steps[i].ae_pcm;
    return s / static_cast<double>(e - b);
  };
  EXPECT_LT(mean(1950, 2000), 0.5 * mean(0, 50));
}

TEST(Unsup, DevScoreHookKeepsBestCheckpoint) {
  TinyCipher t;
  const auto init = Model::create(t.vocab, {8, 12}, 1);
  auto cfg = t.config(10);
  cfg.eval_every = 5;
  std::vector<std::string> snapshots;
  TrainHooks hooks;
  int calls = 0;
  // Scores 0.1 at step 0, 0.9 at step 5, 0.2 at step 10: step 5 must win.
  hooks.dev_score = [&](const Model& m) {
    snapshots.push_back(bytes_of(m));
    const double scores[] = {0.1, 0.9, 0.2};
    return scores[calls++];
  };
  TrainLog log;
  const auto out = unsup_train(init, t.en, t.pcm, cfg, hooks, &log);
  ASSERT_EQ(calls, 3);
  EXPECT_EQ(log.best_step, 5);
  EXPECT_EQ(bytes_of(out), snapshots[1]);
}

TEST(Unsup, DivergenceRestoresLastGoodParameters) {
  TinyCipher t;
  const auto init = Model::create(t.vocab, {8, 12}, 1);
  // An absurd learning rate blows the parameters up after the first update,
  // so a later step yields a non-finite loss.
  auto cfg = t.config(20);
  cfg.eval_every = 1;
  cfg.lr = 1e30;
  int seen_step = -1;
  std::string restored;
  TrainHooks hooks;
  hooks.on_divergence = [&](const Model& m, int step) {
    seen_step = step;
    restored = bytes_of(m);
  };
  EXPECT_THROW(unsup_train(init, t.en, t.pcm, cfg, hooks), DivergenceError);
  ASSERT_GE(seen_step, 1);
  auto replay = cfg;
  replay.steps = seen_step;
  EXPECT_EQ(restored, bytes_of(unsup_train(init, t.en, t.pcm, replay)));
}

TEST(Unsup, RejectsEmptyCorpora) {
  TinyCipher t;
  const auto init = Model::create(t.vocab, {8, 12}, 1);
  EXPECT_THROW(unsup_train(init, {}, t.pcm, t.config(1)), DataError);
  EXPECT_THROW(unsup_train(init, t.en, {}, t.config(1)), DataError);
  // Wrong language tag on the Pidgin side.
  EXPECT_THROW(unsup_train(init, t.en, t.en, t.config(1)), DataError);
}
