#include <gtest/gtest.h>

#include <fstream>

#include "compass/error.hpp"
#include "compass/run.hpp"
#include "compass/util.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace compass;
using namespace compass::testing;

namespace {

const char* kToy =
    R"({"id":"banana","task":"attribute","context":{"object":"banana","property":"color"},"candidates":["yellow","green","blue"],"ground_truth":[0.8,0.15,0.05]})"
    "\n"
    R"({"id":"ball","task":"attribute","context":{"object":"ball","property":"shape"},"candidates":["round","square"],"ground_truth":[0.9,0.1]})"
    "\n"
    R"({"id":"table","task":"attribute","context":{"object":"table","property":"material"},"candidates":["wood","metal","paper"],"ground_truth":[0.6,0.3,0.1]})"
    "\n";

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

RunConfig toy_config(const TempDir& dir) {
  write(dir / "toy.jsonl", kToy);
  RunConfig c;
  c.dataset_path = dir / "toy.jsonl";
  c.output_dir = dir / "out";
  c.cache_dir = dir / "cache";
  c.seed = 17;
  return c;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::size_t count_files(const std::filesystem::path& root) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) n += e.is_regular_file();
  return n;
}

void write_planted(const TempDir& dir, const PlantedSuite& suite) {
  write_canonical(dir / "planted.jsonl", suite.instances);
}

}  // namespace

TEST(Run, ToyEvaluateIsDeterministic) {
  TempDir dir;
  auto c = toy_config(dir);
  c.cache_dir.clear();
  const auto first = run_evaluate(c);
  EXPECT_EQ(first.report.instance_count, 3u);
  const auto report = read_file(c.output_dir / kReportJson);
  EXPECT_EQ(lines_of(read_file(c.output_dir / kInstancesFile)).size(), 3u);

  c.output_dir = dir / "out2";
  run_evaluate(c);
  EXPECT_EQ(read_file(c.output_dir / kReportJson), report);
  EXPECT_EQ(read_file(dir / "out" / kReportCsv), read_file(dir / "out2" / kReportCsv));
  EXPECT_EQ(read_file(dir / "out" / kInstancesFile), read_file(dir / "out2" / kInstancesFile));
}

TEST(Run, WarmCacheRerunMakesNoRequests) {
  TempDir dir;
  auto c = toy_config(dir);
  const auto first = run_evaluate(c);
  EXPECT_GT(first.stats.backend_requests, 0u);
  const auto bytes = read_file(c.output_dir / kReportJson);
  const auto second = run_evaluate(c);
  EXPECT_EQ(second.stats.backend_requests, 0u);
  EXPECT_EQ(second.stats.cache_misses, 0u);
  EXPECT_EQ(read_file(c.output_dir / kReportJson), bytes);
}

TEST(Run, EmptyEnsembleListFailsBeforeAnyRequest) {
  TempDir dir;
  auto c = toy_config(dir);
  c.ensemble = EnsembleStrategy::Kind::score_level;
  auto backend = std::make_shared<MockBackend>();
  try {
    run_evaluate(c, Services{backend, nullptr, nullptr});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  EXPECT_EQ(backend->request_count(), 0u);
  EXPECT_FALSE(std::filesystem::exists(c.output_dir));
}

TEST(Run, ConfigValidation) {
  TempDir dir;
  auto c = toy_config(dir);
  EXPECT_NO_THROW(validate_config(c));
  auto missing = c;
  missing.dataset_path = dir / "nope.jsonl";
  EXPECT_THROW(validate_config(missing), ConfigError);
  auto lik = c;
  lik.scorer = ScorerKind::likelihood;
  EXPECT_THROW(validate_config(lik), ConfigError);
  lik.logprob_endpoint = "http://127.0.0.1:9";
  EXPECT_NO_THROW(validate_config(lik));
  auto emit = c;
  emit.emit = {"xml"};
  EXPECT_THROW(validate_config(emit), ConfigError);
  auto templates = c;
  templates.templates = (dir / "missing.jsonl").string();
  EXPECT_THROW(validate_config(templates), ConfigError);
}

TEST(Run, ConfigJsonRoundTrip) {
  RunConfig c;
  c.dataset_path = "/data/x.jsonl";
  c.dataset_format = DatasetFormat::vicomte;
  c.dataset_name = "x";
  c.backend.backend_id = "svc";
  c.backend.kind = BackendKind::hidden_state_api;
  c.backend.endpoint = "http://h:1";
  c.backend.pooling = PoolingStrategy::prompt_reps("\nIn one word: \"");
  c.backend.dims = 768;
  c.measure = SimilarityMeasure::dot;
  c.ensemble = EnsembleStrategy::Kind::representation_level;
  c.template_ids = {"color-01", "color-02"};
  c.emit = {"csv"};
  c.seed = 99;
  c.thresholds.single_min_top1 = 0.7;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);

  auto keyed = c;
  keyed.api_key = "hunter2";
  EXPECT_EQ(config_to_json(keyed).find("hunter2"), std::string::npos);
  EXPECT_EQ(config_hash(keyed), config_hash(c));
  EXPECT_THROW(config_from_json("[1]"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"measure":"euclid"})"), ConfigError);
}

TEST(Run, ManifestReproducesConfig) {
  TempDir dir;
  auto c = toy_config(dir);
  run_evaluate(c);
  const auto manifest = read_file(c.output_dir / kManifestFile);
  EXPECT_EQ(config_from_json(manifest), c);
  const auto doc = nlohmann::json::parse(manifest);
  EXPECT_EQ(doc.at("config_hash"), config_hash(c));
  EXPECT_EQ(doc.at("backend").at("backend_id"), "mock");
  EXPECT_TRUE(doc.at("stats").contains("cache_hits"));
  EXPECT_TRUE(doc.at("stats").contains("cache_misses"));
}

TEST(Run, ErrorsCarryStageAndInstance) {
  TempDir dir;
  auto suite = make_planted_suite(5, 3, builtin_bank());
  suite.instances[3].candidates[0] = "unplanted";
  write_planted(dir, suite);
  RunConfig c;
  c.dataset_path = dir / "planted.jsonl";
  c.output_dir = dir / "out";
  c.backend = planted_descriptor();
  try {
    run_evaluate(c, Services{suite.backend, nullptr, nullptr});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "score");
    EXPECT_EQ(e.instance_id(), "planted-3");
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Run, LoadErrorIsDataStage) {
  TempDir dir;
  write(dir / "bad.jsonl", "{oops\n");
  RunConfig c;
  c.dataset_path = dir / "bad.jsonl";
  c.output_dir = dir / "out";
  try {
    run_evaluate(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "load");
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Run, ConvertCoda) {
  TempDir dir;
  write(dir / "coda.jsonl", R"({"ngram":"banana","label":[0,0,0.05,0,0.1,0,0,0,0,0,0.85]})" "\n");
  EXPECT_EQ(run_convert(dir / "coda.jsonl", DatasetFormat::coda, dir / "sub" / "out.jsonl"), 1u);
  const auto inst = load_dataset(dir / "sub" / "out.jsonl", DatasetFormat::canonical).at(0);
  EXPECT_EQ(inst.task, TaskKind::attribute);
  EXPECT_EQ(inst.context.property.name, "color");
}

TEST(Run, ConvertEmptySource) {
  TempDir dir;
  write(dir / "empty.jsonl", "");
  EXPECT_EQ(run_convert(dir / "empty.jsonl", DatasetFormat::cfc, dir / "out.jsonl"), 0u);
  ASSERT_TRUE(std::filesystem::exists(dir / "out.jsonl"));
  EXPECT_EQ(std::filesystem::file_size(dir / "out.jsonl"), 0u);
}

TEST(Run, ConvertReportsRecordLocus) {
  TempDir dir;
  write(dir / "v.jsonl", R"({"object":"cup","property":"color","distribution":{"red":1,"blue":0}})" "\n{\"object\":1}\n");
  try {
    run_convert(dir / "v.jsonl", DatasetFormat::vicomte, dir / "out.jsonl");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(Run, CacheWarmThenEvaluateMissesNothing) {
  TempDir dir;
  auto c = toy_config(dir);
  const auto warm = run_cache_warm(c);
  EXPECT_EQ(warm.hits, 0u);
  EXPECT_EQ(warm.misses, 11u);
  const auto again = run_cache_warm(c);
  EXPECT_EQ(again.hits, 11u);
  EXPECT_EQ(again.misses, 0u);
  const auto result = run_evaluate(c);
  EXPECT_EQ(result.stats.cache_misses, 0u);
  EXPECT_EQ(result.stats.backend_requests, 0u);
}

TEST(Run, CacheWarmFromTextsFile) {
  TempDir dir;
  auto c = toy_config(dir);
  write(dir / "texts.txt", "one\ntwo\n\none\n");
  const auto r = run_cache_warm(c, {}, dir / "texts.txt");
  EXPECT_EQ(r.misses, 2u);
}

TEST(Run, CacheWarmUnreachableBackendLeavesNoPartialFiles) {
  TempDir dir;
  auto c = toy_config(dir);
  c.backend.kind = BackendKind::vector_api;
  c.backend.backend_id = "remote";
  c.backend.endpoint = "http://127.0.0.1:9";
  c.retry_backoff_ms = 1;
  try {
    run_cache_warm(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
  }
  EXPECT_TRUE(!std::filesystem::exists(c.cache_dir / "embeddings") || count_files(c.cache_dir / "embeddings") == 0);
}

TEST(Run, ReportRerendersIdentically) {
  TempDir dir;
  auto c = toy_config(dir);
  run_evaluate(c);
  const auto r = run_report(c.output_dir / kInstancesFile, "toy", dir / "rerender", c.emit);
  EXPECT_EQ(r.instance_count, 3u);
  for (const auto* f : {kReportJson, kReportCsv, kReportMarkdown}) {
    EXPECT_EQ(read_file(dir / "rerender" / f), read_file(c.output_dir / f)) << f;
  }
}

TEST(Run, BestOnDevSelectsPerProperty) {
  TempDir dir;
  auto suite = make_planted_suite(60, 4, builtin_bank());
  write_planted(dir, suite);
  RunConfig c;
  c.dataset_path = dir / "planted.jsonl";
  c.output_dir = dir / "out";
  c.backend = planted_descriptor();
  c.ensemble = EnsembleStrategy::Kind::best_on_dev;
  c.dev_fraction = 0.3;
  const auto r = run_evaluate(c, Services{suite.backend, nullptr, nullptr});
  EXPECT_EQ(r.selected_templates.size(), 3u);
  EXPECT_LT(r.report.instance_count, 60u);
  EXPECT_EQ(r.report.mean_rho, 1.0);
  for (const auto& s : r.scored) EXPECT_EQ(s.method.ensemble, "best_on_dev");
}

TEST(Run, LikelihoodScorer) {
  class WordLength : public LogprobClient {
   public:
    std::optional<std::vector<double>> token_logprobs(const std::string& text) override {
      std::istringstream in(text);
      std::vector<double> out;
      for (std::string tok; in >> tok;) out.push_back(-static_cast<double>(tok.size()) / 10.0);
      return out;
    }
  };
  TempDir dir;
  auto c = toy_config(dir);
  c.scorer = ScorerKind::likelihood;
  c.logprob_model = "lm";
  const auto r = run_evaluate(c, Services{nullptr, nullptr, std::make_shared<WordLength>()});
  EXPECT_EQ(r.report.method.scorer, "likelihood");
  EXPECT_EQ(r.report.method.model_name, "lm");
  EXPECT_EQ(r.stats.backend_requests, 0u);

  c.ensemble = EnsembleStrategy::Kind::score_level;
  c.template_ids = {"color-01"};
  EXPECT_THROW(run_evaluate(c, Services{nullptr, nullptr, std::make_shared<WordLength>()}), StageError);
}

TEST(Run, FrameDatasetUsesTransformCache) {
  TempDir dir;
  write(dir / "cfc.jsonl",
        R"({"id":"q1","task":"frame","context":{"question":"Where are farmers with newly harvested crops?"},"candidates":["farm","truck","ocean"],"ground_truth":[0.7,0.2,0.1]})"
        "\n");
  RunConfig c;
  c.dataset_path = dir / "cfc.jsonl";
  c.output_dir = dir / "out";
  c.cache_dir = dir / "cache";
  auto chat = std::make_shared<ScriptedChat>(std::map<std::string, std::string>{
      {"farm", "Farmers with newly harvested crops are at the farm."},
      {"truck", "Farmers with newly harvested crops are in the truck."},
      {"ocean", "Farmers with newly harvested crops are in the ocean."}});
  run_evaluate(c, Services{nullptr, chat, nullptr});
  EXPECT_EQ(chat->calls.load(), 3);
  EXPECT_TRUE(std::filesystem::exists(c.cache_dir / "transforms.jsonl"));
  run_evaluate(c, Services{nullptr, chat, nullptr});
  EXPECT_EQ(chat->calls.load(), 3);
}

TEST(Run, WritesStayInsideOutputAndCache) {
  TempDir dir;
  auto c = toy_config(dir);
  run_evaluate(c);
  run_cache_warm(c);
  run_report(c.output_dir / kInstancesFile, "toy", c.output_dir, c.emit);
  std::set<std::string> top;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) top.insert(e.path().filename().string());
  EXPECT_EQ(top, (std::set<std::string>{"toy.jsonl", "out", "cache"}));
}
