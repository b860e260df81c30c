#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pcmgen/eval_service.hpp"

using namespace pcmgen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("pcmgen_eval_service_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<EvalTask> tasks(int n_per_system) {
  std::vector<EvalTask> out;
  for (const char* sys : {"model_unsup", "model_self"}) {
    for (int i = 0; i < n_per_system; ++i) {
      out.push_back({std::string(sys) + "-" + std::to_string(i), sys, "name[blue spice]",
                     "blue spice is a pub .", "blue spice na pub ."});
    }
  }
  return out;
}

json judgment(const std::string& item, const std::string& ann, int rel, int flu) {
  return {{"item_id", item}, {"annotator_id", ann}, {"relevance", rel}, {"fluency", flu}};
}

struct Running {
  EvalServer server;
  httplib::Client client;
  Running(std::vector<EvalTask> t, const fs::path& store)
      : server(TaskPool(std::move(t)), store.string()), client("127.0.0.1", server.bind("127.0.0.1", 0)) {
    server.start();
  }
  httplib::Result post(const json& body) { return client.Post("/api/judgments", body.dump(), "application/json"); }
};

}  // namespace

TEST(Tasks, ParseDefaultsAndDuplicates) {
  const auto t = parse_tasks(
      "{\"mr\":\"name[x]\",\"english\":\"x .\",\"pidgin\":\"x .\"}\n\n"
      "{\"mr\":\"name[y]\",\"english\":\"y .\",\"pidgin\":\"y .\",\"system\":\"b\",\"item_id\":\"q\"}\n",
      "a");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].item_id, "a-1");
  EXPECT_EQ(t[0].system, "a");
  EXPECT_EQ(t[1].item_id, "q");
  EXPECT_EQ(t[1].system, "b");
  EXPECT_THROW(parse_tasks("{\"english\":\"x\",\"pidgin\":\"y\",\"item_id\":\"k\"}\n"
                           "{\"english\":\"x\",\"pidgin\":\"y\",\"item_id\":\"k\"}\n",
                           "a"),
               DataError);
  EXPECT_THROW(parse_tasks("{\"english\":\"x\"}\n", "a"), DataError);
  EXPECT_THROW(parse_tasks("not json\n", "a"), DataError);
}

TEST(Tasks, PerAnnotatorOrderIsSeededShuffle) {
  const TaskPool pool(tasks(20));
  EXPECT_EQ(pool.order_for("ann1"), pool.order_for("ann1"));
  EXPECT_NE(pool.order_for("ann1"), pool.order_for("ann2"));
  auto o = pool.order_for("ann1");
  std::sort(o.begin(), o.end());
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_EQ(o[i], i);
}

TEST(Store, RejectsDuplicateAndPersists) {
  const auto dir = fresh_dir("store");
  const auto path = (dir / "j.jsonl").string();
  {
    JudgmentStore s(path);
    EXPECT_EQ(s.insert({"i1", "a", 1, 2, 10}), JudgmentStore::Insert::Stored);
    EXPECT_EQ(s.insert({"i1", "a", 0, 0, 11}), JudgmentStore::Insert::Duplicate);
    EXPECT_EQ(s.insert({"i1", "b", 0, 1, 12}), JudgmentStore::Insert::Stored);
    EXPECT_THROW(s.insert({"i2", "a", 3, 0, 1}), ValidationError);
  }
  JudgmentStore again(path);
  const auto all = again.snapshot();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0], (HumanJudgment{"i1", "a", 1, 2, 10}));
  EXPECT_TRUE(again.contains("i1", "b"));
  EXPECT_EQ(again.insert({"i1", "b", 1, 1, 1}), JudgmentStore::Insert::Duplicate);
  EXPECT_EQ(read_judgments(path), all);
}

TEST(Store, TornTailIsTruncatedOnOpen) {
  const auto dir = fresh_dir("torn");
  const auto path = (dir / "j.jsonl").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << judgment_json({"i1", "a", 1, 2, 1}).dump() << "\n" << "{\"item_id\":\"i2\",\"annot";
  }
  EXPECT_EQ(read_judgments(path).size(), 1u);
  {
    JudgmentStore s(path);
    EXPECT_EQ(s.snapshot().size(), 1u);
    EXPECT_EQ(s.insert({"i2", "a", 0, 1, 2}), JudgmentStore::Insert::Stored);
  }
  const auto text = read_file(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(read_judgments(path).size(), 2u);
}

TEST(Store, UnterminatedButCompleteLineIsKept) {
  const auto dir = fresh_dir("unterminated");
  const auto path = (dir / "j.jsonl").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << judgment_json({"i1", "a", 1, 2, 1}).dump();
  }
  {
    JudgmentStore s(path);
    EXPECT_EQ(s.insert({"i2", "a", 0, 1, 2}), JudgmentStore::Insert::Stored);
  }
  EXPECT_EQ(read_judgments(path).size(), 2u);
}

TEST(Store, CorruptMiddleLineIsAnError) {
  const auto dir = fresh_dir("corrupt");
  const auto path = (dir / "j.jsonl").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "garbage\n" << judgment_json({"i1", "a", 1, 2, 1}).dump() << "\n";
  }
  EXPECT_THROW(JudgmentStore{path}, DataError);
  EXPECT_THROW(read_judgments(path), DataError);
}

TEST(Endpoints, ValidationStatusCodes) {
  const auto dir = fresh_dir("codes");
  Running r(tasks(3), dir / "j.jsonl");

  auto res = r.post(judgment("model_self-0", "ann1", 2, 1));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["field"], "relevance");

  res = r.post(judgment("model_self-0", "ann1", 1, 5));
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["field"], "fluency");

  res = r.post(judgment("nope", "ann1", 1, 1));
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["field"], "item_id");

  res = r.client.Post("/api/judgments", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);

  res = r.post(judgment("model_self-0", "ann1", 1, 1));
  EXPECT_EQ(res->status, 201);
  EXPECT_GT(json::parse(res->body)["ts"].get<std::int64_t>(), 0);
  res = r.post(judgment("model_self-0", "ann1", 0, 0));
  EXPECT_EQ(res->status, 409);
  // The rejected requests left nothing behind.
  EXPECT_EQ(r.server.store().snapshot().size(), 1u);

  res = r.client.Get("/api/tasks");
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["field"], "annotator");
  res = r.client.Get("/api/tasks?annotator=a&limit=0");
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["field"], "limit");
}

TEST(Endpoints, TasksHideSystemAndSkipJudgedItems) {
  const auto dir = fresh_dir("tasks");
  Running r(tasks(5), dir / "j.jsonl");
  auto res = r.client.Get("/api/tasks?annotator=ann1&limit=3");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  ASSERT_EQ(body["tasks"].size(), 3u);
  EXPECT_EQ(body["remaining"], 10);
  EXPECT_FALSE(body["tasks"][0].contains("system"));
  EXPECT_EQ(body["tasks"][0]["english"], "blue spice is a pub .");
  const std::string first = body["tasks"][0]["item_id"];
  EXPECT_EQ(r.post(judgment(first, "ann1", 1, 2))->status, 201);
  body = json::parse(r.client.Get("/api/tasks?annotator=ann1&limit=100")->body);
  EXPECT_EQ(body["remaining"], 9);
  for (const auto& t : body["tasks"]) EXPECT_NE(t["item_id"], first);
  // Another annotator still sees everything.
  EXPECT_EQ(json::parse(r.client.Get("/api/tasks?annotator=ann2&limit=100")->body)["remaining"], 10);
}

TEST(Endpoints, RestartLosesNothingAndOnlineMatchesOffline) {
  const auto dir = fresh_dir("replay");
  const auto store = dir / "j.jsonl";
  const auto pool = tasks(10);
  Rng rng(4);
  std::vector<json> sent;
  {
    Running r(pool, store);
    for (const auto& t : pool) {
      for (const char* ann : {"ann1", "ann2"}) {
        if (std::string(ann) == "ann2" && t.item_id.back() == '3') continue;  // leave a gap
        const auto j = judgment(t.item_id, ann, static_cast<int>(rng.below(2)), static_cast<int>(rng.below(3)));
        ASSERT_EQ(r.post(j)->status, 201);
        sent.push_back(j);
      }
    }
    EXPECT_EQ(r.server.store().snapshot().size(), sent.size());
  }
  // Simulated restart: a new server on the same store file.
  Running r(pool, store);
  const auto online = json::parse(r.client.Get("/api/report")->body);
  EXPECT_EQ(r.server.store().snapshot().size(), sent.size());
  EXPECT_EQ(online["judgments"], sent.size());
  // Offline aggregation from the file.
  const auto offline = report_json(aggregate_judgments(read_judgments(store.string()), TaskPool(pool).system_of_item()));
  EXPECT_EQ(online, offline);
  // Independent means from what the client sent.
  std::map<std::string, std::pair<double, double>> sums;
  std::map<std::string, int> counts;
  for (const auto& j : sent) {
    const std::string item = j["item_id"];
    const std::string sys = item.substr(0, item.rfind('-'));
    sums[sys].first += j["relevance"].get<int>();
    sums[sys].second += j["fluency"].get<int>();
    ++counts[sys];
  }
  for (const auto& s : online["systems"]) {
    const std::string sys = s["system"];
    EXPECT_DOUBLE_EQ(s["relevance"].get<double>(), sums[sys].first / counts[sys]);
    EXPECT_DOUBLE_EQ(s["fluency"].get<double>(), sums[sys].second / counts[sys]);
  }
  // Duplicates from before the restart are still rejected.
  EXPECT_EQ(r.post(sent.front())->status, 409);
}

TEST(Endpoints, EmptyReportSaysNoData) {
  const auto dir = fresh_dir("empty");
  Running r(tasks(2), dir / "j.jsonl");
  const auto body = json::parse(r.client.Get("/api/report")->body);
  EXPECT_EQ(body["status"], "no data");
  EXPECT_EQ(body["table"], "no data\n");
}

TEST(Endpoints, ConcurrentPostsAllPersist) {
  const auto dir = fresh_dir("concurrent");
  const auto store = dir / "j.jsonl";
  const auto pool = tasks(25);
  {
    Running r(pool, store);
    const int port = r.server.port();
    std::vector<std::thread> threads;
    for (int a = 0; a < 4; ++a) {
      threads.emplace_back([&, a] {
        httplib::Client c("127.0.0.1", port);
        for (const auto& t : pool) {
          auto res = c.Post("/api/judgments", judgment(t.item_id, "ann" + std::to_string(a), 1, 1).dump(),
                            "application/json");
          ASSERT_TRUE(res);
          ASSERT_EQ(res->status, 201);
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  EXPECT_EQ(read_judgments(store.string()).size(), 4 * pool.size());
}
