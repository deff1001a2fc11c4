#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "boxrl/io.hpp"

namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code;
  std::string stdout_text;
};

// Runs the CLI binary, capturing stdout; stderr passes through.
CommandResult run_cli(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "boxrl_cli_stdout.txt";
  const std::string cmd = std::string(BOXRL_CLI_PATH) + " " + args + " > " + out.string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  fs::remove(out);
  return {WEXITSTATUS(status), ss.str()};
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("boxrl_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli end to end: gen-synthetic, train, eval, reward") {
  const auto dir = temp_dir("e2e");
  const auto data = dir / "data.jsonl";

  SECTION("gen-synthetic is byte-stable and re-readable") {
    const auto r1 =
        run_cli("gen-synthetic --out " + data.string() + " --num-samples 8 --seed 7");
    REQUIRE(r1.exit_code == 0);
    const std::string bytes = slurp(data);
    const auto dataset = boxrl::load_dataset(data);
    CHECK(dataset.size() == 8);

    const auto data2 = dir / "data2.jsonl";
    run_cli("gen-synthetic --out " + data2.string() + " --num-samples 8 --seed 7");
    CHECK(slurp(data2) == bytes);
  }

  SECTION("train then eval then reward") {
    run_cli("gen-synthetic --out " + data.string() + " --num-samples 4 --seed 7");
    const auto run_dir = dir / "run";
    const auto train = run_cli("train " + data.string() + " " + run_dir.string() +
                               " --steps 30 --seed 3");
    REQUIRE(train.exit_code == 0);
    REQUIRE(fs::exists(run_dir / "checkpoint.json"));
    REQUIRE(fs::exists(run_dir / "log.jsonl"));

    const auto eval =
        run_cli("eval " + data.string() + " " + (run_dir / "checkpoint.json").string());
    REQUIRE(eval.exit_code == 0);
    const auto report = boxrl::ojson::parse(eval.stdout_text);
    CHECK(report.at("n") == 4);
    CHECK(report.at("per_sample").size() == 4);

    // reward: grade one canned completion per sample
    const auto dataset = boxrl::load_dataset(data);
    const auto comps = dir / "completions.jsonl";
    {
      std::ofstream out(comps);
      for (const auto& s : dataset) {
        boxrl::ojson j;
        j["id"] = s.id;
        j["text"] = "<think>at [" + std::to_string(s.gt_box.x1) + ", " +
                    std::to_string(s.gt_box.y1) + ", " + std::to_string(s.gt_box.x2) + ", " +
                    std::to_string(s.gt_box.y2) + "]</think><answer>{\"box\": [" +
                    std::to_string(s.gt_box.x1) + ", " + std::to_string(s.gt_box.y1) + ", " +
                    std::to_string(s.gt_box.x2) + ", " + std::to_string(s.gt_box.y2) +
                    "]}</answer>";
        out << j.dump() << "\n";
      }
    }
    const auto reward = run_cli("reward " + comps.string() + " " + data.string());
    REQUIRE(reward.exit_code == 0);
    std::istringstream lines(reward.stdout_text);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
      const auto j = boxrl::ojson::parse(line);
      CHECK(j.at("format") == 1.0);
      CHECK(j.at("spatial") == 1.0);
      CHECK(j.at("total") == j.at("format").get<double>() + j.at("spatial").get<double>() +
                                 j.at("semantic").get<double>());
      ++n;
    }
    CHECK(n == 4);
  }

  fs::remove_all(dir);
}

TEST_CASE("cli exit codes") {
  const auto dir = temp_dir("exit");
  const auto data = dir / "data.jsonl";
  run_cli("gen-synthetic --out " + data.string() + " --num-samples 2 --seed 1");

  SECTION("unknown flag is a config error") {
    CHECK(run_cli("train " + data.string() + " " + (dir / "r").string() + " --bogus 1")
              .exit_code == 2);
  }

  SECTION("invalid config value is a config error") {
    CHECK(run_cli("train " + data.string() + " " + (dir / "r").string() +
                  " --steps 10 --group-size 1")
              .exit_code == 2);
  }

  SECTION("missing dataset is a data error") {
    CHECK(run_cli("train " + (dir / "nope.jsonl").string() + " " + (dir / "r").string() +
                  " --steps 1")
              .exit_code == 3);
  }

  SECTION("unknown id in completions names it and exits 3") {
    const auto comps = dir / "comps.jsonl";
    std::ofstream{comps} << R"({"id":"ghost","text":"hi"})" << "\n";
    CHECK(run_cli("reward " + comps.string() + " " + data.string()).exit_code == 3);
  }

  SECTION("empty completions file succeeds with empty output") {
    const auto comps = dir / "empty.jsonl";
    std::ofstream{comps};
    const auto r = run_cli("reward " + comps.string() + " " + data.string());
    CHECK(r.exit_code == 0);
    CHECK(r.stdout_text.empty());
  }

  SECTION("eval with mismatched ids is a data error") {
    const auto run_dir = dir / "run";
    run_cli("train " + data.string() + " " + run_dir.string() + " --steps 5 --seed 1");
    const auto other = dir / "other.jsonl";
    run_cli("gen-synthetic --out " + other.string() + " --num-samples 4 --seed 9");
    const auto r =
        run_cli("eval " + other.string() + " " + (run_dir / "checkpoint.json").string());
    CHECK(r.exit_code == 3);
  }

  SECTION("unreachable scorer endpoint is a provider error") {
    const auto cfgfile = dir / "provider.json";
    std::ofstream{cfgfile}
        << R"({"provider":{"kind":"tcp","host":"127.0.0.1","port":1,"timeout_ms":300}})";
    const auto r = run_cli("train " + data.string() + " " + (dir / "r2").string() +
                           " --steps 1 --config " + cfgfile.string());
    CHECK(r.exit_code == 4);
  }

  fs::remove_all(dir);
}
