#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "pcmgen/config.hpp"
#include "pcmgen/d2t.hpp"
#include "pcmgen/selftrain.hpp"
#include "pcmgen/synthlang.hpp"

using namespace pcmgen;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(Config, DefaultsPassThrough) {
  const auto j = resolve_config(nlohmann::json(UnsupTrainConfig{}), "", {});
  const auto c = config_from<UnsupTrainConfig>(j);
  EXPECT_EQ(c.steps, 10000);
  EXPECT_EQ(c.noise.k, UnsupTrainConfig{}.noise.k);
}

TEST(Config, FileThenOverrides) {
  const auto path = write_temp("pcmgen_cfg_a.json", R"({"steps": 50, "noise": {"p_drop": 0.2}})");
  const auto j = resolve_config(nlohmann::json(UnsupTrainConfig{}), path, {"steps=70", "noise.k=4", "lr=1e-4"});
  const auto c = config_from<UnsupTrainConfig>(j);
  EXPECT_EQ(c.steps, 70);
  EXPECT_EQ(c.noise.p_drop, 0.2);
  EXPECT_EQ(c.noise.k, 4);
  EXPECT_EQ(c.lr, 1e-4);
  std::remove(path.c_str());
}

TEST(Config, StringValuesNeedNoQuotes) {
  const auto j = resolve_config(nlohmann::json(SelfTrainConfig{}), "", {"pseudo_path=out/pseudo.tsv"});
  EXPECT_EQ(config_from<SelfTrainConfig>(j).pseudo_path, "out/pseudo.tsv");
}

TEST(Config, UnknownKeysAreRejected) {
  const nlohmann::json d = UnsupTrainConfig{};
  EXPECT_THROW(resolve_config(d, "", {"stpes=5"}), UsageError);
  EXPECT_THROW(resolve_config(d, "", {"noise.q=5"}), UsageError);
  EXPECT_THROW(resolve_config(d, "", {"noise=5"}), UsageError);
  EXPECT_THROW(resolve_config(d, "", {"steps"}), UsageError);
  EXPECT_THROW(resolve_config(d, "", {"a..b=1"}), UsageError);
  const auto path = write_temp("pcmgen_cfg_b.json", R"({"noise": {"pdrop": 0.2}})");
  EXPECT_THROW(resolve_config(d, path, {}), UsageError);
  const auto bad = write_temp("pcmgen_cfg_c.json", "{not json");
  EXPECT_THROW(resolve_config(d, bad, {}), UsageError);
  std::remove(path.c_str());
  std::remove(bad.c_str());
}

TEST(Config, TypeMismatchIsUsageError) {
  const auto j = resolve_config(nlohmann::json(UnsupTrainConfig{}), "", {"steps=many"});
  EXPECT_THROW(config_from<UnsupTrainConfig>(j), UsageError);
}

TEST(Config, RoundTrips) {
  SkipgramConfig s;
  s.window = 3;
  s.seed = 9;
  const auto s2 = nlohmann::json(s).get<SkipgramConfig>();
  EXPECT_EQ(s2.window, 3);
  EXPECT_EQ(s2.seed, 9u);
  EXPECT_EQ(s2.buckets, kNgramBuckets);

  const auto d = nlohmann::json(ModelDims{16, 24}).get<ModelDims>();
  EXPECT_EQ(d.emb, 16);
  EXPECT_EQ(d.hidden, 24);
  EXPECT_THROW(nlohmann::json({{"emb", 0}}).get<ModelDims>(), UsageError);

  SynthConfig sc;
  sc.overlap = 0.5;
  sc.seed = 4;
  const auto sc2 = nlohmann::json(sc).get<SynthConfig>();
  EXPECT_EQ(sc2.overlap, 0.5);
  EXPECT_EQ(sc2.seed, 4u);
  EXPECT_EQ(sc2.sentences, 5000u);
}

TEST(Config, MakeSynthUsesDerivedSeeds) {
  SynthConfig sc;
  sc.sentences = 300;
  sc.dev = 20;
  sc.test = 20;
  sc.seed = 7;
  const auto d = make_synth(sc);
  const auto spec = make_cipher_spec(200, 0.3, 0.0, 7);
  const auto corpus = make_corpus(spec, BigramGrammar(spec, 8), 300, 20, 20, 9);
  EXPECT_EQ(lexicon_tsv(d.spec), lexicon_tsv(spec));
  EXPECT_EQ(d.corpus.plain.sentences, corpus.plain.sentences);
  EXPECT_EQ(parallel_tsv(d.corpus.test), parallel_tsv(corpus.test));
}
