#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "distortbench/split_io.hpp"

using namespace distortbench;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "distortbench_cli_test";

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path log = kWork / "last_output.txt";
  const std::string cmd = std::string(DISTORTBENCH_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string w(const std::string& name) { return (kWork / name).string(); }

// Small fixture shared by every test: a 4-class toy victim on 1x8x8 images and
// a 12-sample dataset labelled by it.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    ASSERT_EQ(run("make-toy --classes 4 --shape 1x8x8 --seed 3 --scale 8 --out " + w("toy.dbtoy")).code, 0);
    ASSERT_EQ(run("make-toy --classes 4 --shape 1x8x8 --seed 4 --scale 8 --out " + w("toy2.dbtoy")).code, 0);
    std::ofstream(w("run.cfg")) << "image_shape = 1x8x8\npatch_size = 4\nmax_iter = 60\nstate_top_k = 4\n"
                                   "filters = gaussian_noise,brightness\nnoise_sigma = 0.1\nhidden = 16\n"
                                   "batch_size = 8\nseverities = 1,2,3\n";
    ASSERT_EQ(run("make-dataset --config " + w("run.cfg") + " --victim toy:" + w("toy.dbtoy") +
                  " --count 12 --seed 5 --out " + w("data"))
                  .code,
              0);
  }

  static std::string base() { return "--config " + w("run.cfg") + " --victim toy:" + w("toy.dbtoy") + " --dataset " + w("data"); }
};

}  // namespace

TEST_F(Cli, DatasetHasLabelsAndImages) {
  const Dataset ds = load_dataset_dir(w("data"));
  EXPECT_EQ(ds.size(), 12u);
  EXPECT_EQ(slurp(w("data/labels.csv")).rfind("index,label,file\n", 0), 0u);
}

TEST_F(Cli, GenerateWritesSplitAndRunRecords) {
  const auto r = run("generate " + base() + " --workers 1 --out " + w("gen1"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = read_manifest(w("gen1"));
  EXPECT_EQ(m.records.size(), 12u);
  EXPECT_EQ(m.filter, "gaussian_noise+brightness");
  EXPECT_TRUE(fs::exists(w("gen1/resolved_config.txt")));
  EXPECT_EQ(slurp(w("gen1/config_hash.txt")), m.config_hash + "\n");
  const auto summary = nlohmann::json::parse(slurp(w("gen1/summary.json")));
  EXPECT_EQ(summary.at("stats").at("attempted").get<std::size_t>() + summary.at("stats").at("skipped").get<std::size_t>(), 12u);
  EXPECT_EQ(resolve_config_text(slurp(w("gen1/resolved_config.txt"))).max_iter, 60u);
}

TEST_F(Cli, GenerateIsByteIdenticalAcrossWorkerCounts) {
  ASSERT_EQ(run("generate " + base() + " --workers 1 --out " + w("det1")).code, 0);
  ASSERT_EQ(run("generate " + base() + " --workers 3 --out " + w("det3")).code, 0);
  EXPECT_EQ(slurp(w("det1/manifest.jsonl")), slurp(w("det3/manifest.jsonl")));
  const auto m = read_manifest(w("det1"));
  for (const auto& rec : m.records)
    for (const auto& lv : rec.levels) EXPECT_EQ(slurp(w("det1") + "/" + lv.path), slurp(w("det3") + "/" + lv.path));
}

TEST_F(Cli, TrainThenGenerateWithCheckpoint) {
  const auto t = run("train-agent " + base() + " --set train_epochs=1 --out " + w("train"));
  ASSERT_EQ(t.code, 0) << t.output;
  ASSERT_TRUE(fs::exists(w("train/agent.dbagt")));
  const auto g = run("generate " + base() + " --agent " + w("train/agent.dbagt") + " --out " + w("gen_trained"));
  EXPECT_EQ(g.code, 0) << g.output;
  const auto bad = run("generate " + base() + " --set state_top_k=5 --agent " + w("train/agent.dbagt") + " --out " + w("gen_bad"));
  EXPECT_EQ(bad.code, 2) << bad.output;
}

TEST_F(Cli, EvaluateWritesCsvAndPlot) {
  ASSERT_EQ(run("generate " + base() + " --out " + w("eval_split")).code, 0);
  const auto r = run("evaluate " + base() + " --split " + w("eval_split") + " --reference-l2 1,2,3 --out " + w("eval"));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(w("eval/errors.csv"));
  EXPECT_EQ(csv.rfind("corruption,severity,clean_error,corrupt_error\n", 0), 0u);
  EXPECT_NE(slurp(w("eval/errors.svg")).find("<svg"), std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(w("eval/summary.json")));
  EXPECT_EQ(summary.at("corruptions")[0].at("l2_match").size(), 3u);
  // Every generated level fools the victim, so the corrupt error is 1 on
  // every severity the victim itself produced.
  EXPECT_NE(csv.find(",1,0,1\n"), std::string::npos) << csv;
}

TEST_F(Cli, TransferMatrixHasVictimRowsAndModelColumns) {
  ASSERT_EQ(run("generate " + base() + " --out " + w("tr_a")).code, 0);
  ASSERT_EQ(run("generate --config " + w("run.cfg") + " --victim toy:" + w("toy2.dbtoy") + " --dataset " + w("data") +
                " --set skip_misclassified=false --out " + w("tr_b"))
                .code,
            0);
  const auto r = run("transfer --config " + w("run.cfg") + " --split a=" + w("tr_a") + " --split b=" + w("tr_b") +
                     " --model a=toy:" + w("toy.dbtoy") + " --model b=toy:" + w("toy2.dbtoy") + " --out " + w("tr"));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(w("tr/transfer.csv"));
  EXPECT_EQ(csv.rfind("victim,a,b\n", 0), 0u) << csv;
  EXPECT_NE(csv.find("\na,0,"), std::string::npos) << csv;
  EXPECT_TRUE(fs::exists(w("tr/transfer.svg")));
}

TEST_F(Cli, SensitivityMapListsEveryPatchAndFilter) {
  const auto r = run("sensitivity-map " + base() + " --index 2 --out " + w("smap"));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(w("smap/sensitivity.csv"));
  EXPECT_EQ(csv.rfind("row,col,filter,direction,delta_p\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 2);
  EXPECT_NE(csv.find("1,1,brightness,add,"), std::string::npos);
}

TEST_F(Cli, CalibrateReportsParameterWithinTolerance) {
  const auto r = run("calibrate --config " + w("run.cfg") + " --dataset " + w("data") +
                     " --filter brightness --target 0.3 --out " + w("calib"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("brightness_delta = "), std::string::npos);
  const auto s = nlohmann::json::parse(slurp(w("calib/summary.json")));
  EXPECT_LE(s.at("relative_error").get<double>(), 0.10);
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("generate " + base() + " --set nonsense=1 --out " + w("bad")).code, 2);
  EXPECT_EQ(run("generate --config " + w("run.cfg") + " --dataset " + w("data") + " --out " + w("bad")).code, 2);
  EXPECT_EQ(run("generate " + base()).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("generate --config " + w("run.cfg") + " --victim remote --dataset " + w("data") + " --out " + w("bad")).code,
            2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RemoteVictimMatchesLocalVictim) {
  // Start the server in the background and read its pid and endpoint.
  const std::string cmd = "sh -c '" + std::string(DISTORTBENCH_CLI) + " serve-toy --weights " + w("toy.dbtoy") +
                          " --port 0 & echo $!; wait' 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  char line[256];
  ASSERT_NE(std::fgets(line, sizeof line, pipe), nullptr);
  const pid_t pid = static_cast<pid_t>(std::stol(line));
  ASSERT_NE(std::fgets(line, sizeof line, pipe), nullptr);
  std::string listening(line);
  ASSERT_EQ(listening.rfind("listening on ", 0), 0u) << listening;
  const std::string endpoint = listening.substr(13, listening.find_last_not_of("\r\n") - 12);

  const auto remote = run("generate --config " + w("run.cfg") + " --dataset " + w("data") +
                          " --victim remote --set victim_id=toy --endpoint " + endpoint + " --out " + w("rem"));
  const auto local = run("generate " + base() + " --set victim_id=toy --out " + w("loc"));
  ::kill(pid, SIGTERM);
  while (std::fgets(line, sizeof line, pipe) != nullptr) {
  }
  ::pclose(pipe);
  ASSERT_EQ(remote.code, 0) << remote.output;
  ASSERT_EQ(local.code, 0) << local.output;
  const auto a = read_manifest(w("rem")), b = read_manifest(w("loc"));
  EXPECT_EQ(a.records, b.records);
  for (const auto& rec : a.records)
    for (const auto& lv : rec.levels) EXPECT_EQ(slurp(w("rem") + "/" + lv.path), slurp(w("loc") + "/" + lv.path));
}

TEST_F(Cli, UnreachableRemoteFailsNamingTheEndpoint) {
  const auto r = run("generate --config " + w("run.cfg") + " --dataset " + w("data") +
                     " --victim remote --endpoint 127.0.0.1:1 --out " + w("unreach"));
  // The class-count probe runs before any episode, so the whole run fails.
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("127.0.0.1:1"), std::string::npos) << r.output;
}
