#include <gtest/gtest.h>

#include "pcmgen/d2t.hpp"
#include "pcmgen/synthlang.hpp"

using namespace pcmgen;

namespace {

const char* kBlueSpiceMr = "name[Blue Spice], eatType[pub], food[Chinese], area[city centre]";
const char* kTable1En = "there is a pub blue spice located in the centre of the city that provides chinese food .";
const char* kTable1Pcm = "wan pub blue spice dey for centre of city wey dey give chinese food .";

std::string bytes_of(const Model& m) { return serialize_checkpoint(m.to_checkpoint(0)); }

void overfit(Model& m, const std::vector<Sentence>& src, const std::vector<Sentence>& tgt, int steps, double lr) {
  AdamConfig cfg;
  cfg.lr = lr;
  AdamState<float> state(m.params(), cfg);
  for (int i = 0; i < steps; ++i) {
    Tape<float> tape(m.params());
    adam_step(m.params(), tape.backward(m.forward_loss(tape, src, tgt)), state);
  }
}

}  // namespace

TEST(Linearize, CanonicalOrderAndMarkers) {
  const auto mr = parse_mr("food[Chinese], name[Blue Spice]");
  EXPECT_EQ(join(linearize_mr(mr)), "<name> blue spice </name> <food> chinese </food>");
  EXPECT_EQ(linearize_mr(parse_mr("area[riverside]")), (Tokens{"<area>", "riverside", "</area>"}));
  EXPECT_EQ(join(linearize_mr(parse_mr("customer rating[5 out of 5], name[X]"))),
            "<name> x </name> <customerRating> 5 out of 5 </customerRating>");
}

TEST(Linearize, SixteenDistinctMarkers) {
  const auto m = marker_tokens();
  EXPECT_EQ(m.size(), 16u);
  EXPECT_EQ(std::set<std::string>(m.begin(), m.end()).size(), 16u);
  for (const auto& t : m) EXPECT_TRUE(is_marker(t));
  EXPECT_FALSE(is_marker("name"));
  EXPECT_FALSE(is_marker("<unk>"));
}

TEST(Linearize, RoundTripOverRandomMrs) {
  const MrGrammar g;
  Rng rng(17);
  for (const auto& ex : g.sample_many(1000, rng)) {
    const Tokens lin = linearize_mr(ex.mr);
    const auto back = delinearize_mr(lin);
    EXPECT_EQ(linearize_mr(back), lin);
    // Same slot set, values normalized, canonical order.
    ASSERT_EQ(back.slots.size(), ex.mr.slots.size());
    for (const auto& s : ex.mr.slots) {
      ASSERT_NE(back.find(s.attribute), nullptr);
      EXPECT_EQ(*back.find(s.attribute), join(normalize_tokens(s.value)));
    }
    for (std::size_t i = 1; i < back.slots.size(); ++i) {
      EXPECT_LT(attribute_index(back.slots[i - 1].attribute), attribute_index(back.slots[i].attribute));
    }
  }
}

TEST(Linearize, DelinearizeRejectsMalformedInput) {
  EXPECT_THROW(delinearize_mr({"blue", "<name>"}), ParseError);
  EXPECT_THROW(delinearize_mr({"<name>", "blue"}), ParseError);
  EXPECT_THROW(delinearize_mr({"<name>", "</name>"}), ParseError);
  EXPECT_THROW(delinearize_mr({"<name>", "a", "<food>", "b", "</food>", "</name>"}), ParseError);
  EXPECT_THROW(delinearize_mr({"<colour>", "red", "</colour>"}), ValidationError);
  EXPECT_THROW(delinearize_mr({}), ValidationError);
  try {
    delinearize_mr({"<name>", "a", "</name>", "stray"});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 3u);
  }
}

TEST(D2T, VocabSentencesCoverMarkers) {
  const MrGrammar g;
  Rng rng(1);
  const auto ex = g.sample_many(20, rng);
  const auto vocab = build_vocab(d2t_vocab_sentences(ex));
  for (const auto& m : marker_tokens()) EXPECT_TRUE(vocab.contains(m));
  // Training refuses a vocabulary without markers.
  auto bare = std::make_shared<const Vocab>(build_vocab({ex[0].reference}));
  EXPECT_THROW(train_d2t(Model::create(bare, {8, 8}, 1), ex, {}), DataError);
  EXPECT_THROW(train_d2t(Model::create(std::make_shared<const Vocab>(vocab), {8, 8}, 1), {}, {}), DataError);
}

TEST(D2T, TrainingPairsUseFirstReferencePerMr) {
  const auto mr = parse_mr("name[A], food[Thai]");
  const std::vector<D2TExample> ex = {{mr, normalize_tokens("a serves thai .")},
                                      {mr, normalize_tokens("thai food at a .")},
                                      {parse_mr("name[B]"), normalize_tokens("b .")}};
  const auto vocab = build_vocab(d2t_vocab_sentences(ex));
  const auto [src, tgt] = d2t_training_pairs(ex, vocab);
  ASSERT_EQ(src.size(), 2u);
  EXPECT_EQ(join(decode(tgt[0], vocab)), "a serves thai .");
  EXPECT_EQ(join(decode(src[1], vocab)), "<name> b </name>");
}

TEST(D2T, OverfitTenExamples) {
  const MrGrammar g;
  Rng rng(5);
  const auto ex = g.sample_many(10, rng);
  auto vocab = std::make_shared<const Vocab>(build_vocab(d2t_vocab_sentences(ex)));
  D2TTrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 10;
  cfg.lr = 5e-3;
  cfg.seed = 2;
  const auto m = train_d2t(Model::create(vocab, {32, 64}, 3), ex, cfg);
  int exact = 0;
  for (const auto& e : ex) exact += generate_english(m, e.mr) == e.reference;
  EXPECT_GE(exact, 9);
}

TEST(D2T, TrainingIsDeterministic) {
  const MrGrammar g;
  Rng rng(6);
  const auto ex = g.sample_many(30, rng);
  auto vocab = std::make_shared<const Vocab>(build_vocab(d2t_vocab_sentences(ex)));
  D2TTrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 4;
  const auto init = Model::create(vocab, {8, 8}, 3);
  EXPECT_EQ(bytes_of(train_d2t(init, ex, cfg)), bytes_of(train_d2t(init, ex, cfg)));
}

TEST(Pipeline, BlueSpiceThroughOverfitModels) {
  // d2t memorizes MR -> Table 1 English; mt memorizes English -> Pidgin.
  const auto mr = parse_mr(kBlueSpiceMr);
  const Tokens en = tokenize(kTable1En);
  const Tokens pcm = tokenize(kTable1Pcm);
  std::vector<Tokens> sents = d2t_vocab_sentences({{mr, en}});
  sents.push_back(pcm);
  auto vocab = std::make_shared<const Vocab>(build_vocab(sents));

  auto d2t = Model::create(vocab, {}, 4);
  overfit(d2t, {encode(linearize_mr(mr), *vocab, Lang::English)}, {encode(en, *vocab, Lang::English)}, 500, 1e-3);
  auto mt = Model::create(vocab, {}, 21);
  overfit(mt, {encode(en, *vocab, Lang::English)}, {encode(pcm, *vocab, Lang::Pidgin)}, 500, 1e-3);

  const auto out = pipeline_generate(mr, d2t, mt);
  EXPECT_EQ(join(out.english), kTable1En);
  EXPECT_EQ(join(out.pidgin), kTable1Pcm);
  EXPECT_EQ(out.marker_violations, 0u);

  // Exact composition with manually chained calls.
  const Tokens manual_en = decode(d2t.translate(encode(linearize_mr(mr), *vocab, Lang::English), Lang::English), *vocab);
  const Tokens manual_pcm = decode(mt.translate(encode(manual_en, *vocab, Lang::English), Lang::Pidgin), *vocab);
  EXPECT_EQ(out.english, manual_en);
  EXPECT_EQ(out.pidgin, manual_pcm);
  EXPECT_EQ(out.pidgin, translate_tokens(mt, out.english, Lang::English, Lang::Pidgin));

  // Deterministic end to end.
  const auto again = pipeline_generate(mr, d2t, mt);
  EXPECT_EQ(again.english, out.english);
  EXPECT_EQ(again.pidgin, out.pidgin);
}

TEST(Pipeline, VocabMismatchIsRejected) {
  const auto mr = parse_mr("name[A]");
  auto v1 = std::make_shared<const Vocab>(build_vocab(d2t_vocab_sentences({{mr, {"a"}}})));
  auto v2 = std::make_shared<const Vocab>(build_vocab(d2t_vocab_sentences({{mr, {"b"}}})));
  EXPECT_THROW(pipeline_generate(mr, Model::create(v1, {4, 4}, 1), Model::create(v2, {4, 4}, 1)), DataError);
}

TEST(Pipeline, NameRealization) {
  const std::vector<MeaningRepresentation> mrs = {parse_mr("name[Blue Spice]"), parse_mr("name[The Mill]")};
  EXPECT_EQ(name_realization(mrs, {tokenize("blue spice is a pub ."), tokenize("the mill .")}), 1.0);
  EXPECT_EQ(name_realization(mrs, {tokenize("blue is spice ."), tokenize("the mill .")}), 0.5);
  EXPECT_THROW(name_realization(mrs, {}), ShapeError);
}
