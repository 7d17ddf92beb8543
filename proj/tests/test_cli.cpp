#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include "json.hpp"
#include <sys/wait.h>

#include "rfedit/config_io.hpp"
#include "support.hpp"

using namespace rfedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + RFEDIT_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

int report_rows(const fs::path& root) {
  return static_cast<int>(read_json_file(root / "report.json")["rows"].size());
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("edit --out /tmp/x --no-such-flag") == 2);
    CHECK(run_cli("edit --out /tmp/x --delta") == 2);
    CHECK(run_cli("--help") == 0);
  }

  TEST_CASE("checkpoint and config errors") {
    const auto dir = test::temp_dir("cli_errors");
    const auto ckpt = test::write_tiny_checkpoint(dir);
    CHECK(run_cli("edit --checkpoint " + q(dir / "missing.ckpt") + " --out " + q(dir / "r") +
                  " --target-color blue") == 3);
    std::ofstream(dir / "garbage.ckpt") << "not a checkpoint";
    CHECK(run_cli("edit --checkpoint " + q(dir / "garbage.ckpt") + " --out " + q(dir / "r") +
                  " --target-color blue") == 3);
    std::ofstream(dir / "bad.json") << "{\"schema_version\": 1, \"delta\": \"lots\"}";
    CHECK(run_cli("edit --checkpoint " + q(ckpt) + " --config " + q(dir / "bad.json") + " --out " +
                  q(dir / "r") + " --target-color blue") == 4);
    std::ofstream(dir / "unknown.json") << "{\"schema_version\": 1, \"detla\": 0.5}";
    CHECK(run_cli("edit --checkpoint " + q(ckpt) + " --config " + q(dir / "unknown.json") +
                  " --out " + q(dir / "r") + " --target-color blue") == 4);
    CHECK(run_cli("edit --checkpoint " + q(ckpt) + " --config " + q(dir / "nope.json") + " --out " +
                  q(dir / "r") + " --target-color blue") == 4);
    CHECK(run_cli("edit --checkpoint " + q(ckpt) + " --out " + q(dir / "r") +
                  " --target-color blue --color teal") == 2);
  }

  TEST_CASE("edit defaults, rerun and checkpoint mismatch") {
    const auto dir = test::temp_dir("cli_edit");
    const auto ckpt = test::write_tiny_checkpoint(dir);
    REQUIRE(run_cli("edit --checkpoint " + q(ckpt) + " --out " + q(dir / "run") +
                    " --size 2 --target-color blue --delta 0.9 --beta 0.25 --steps 15") == 0);
    const json spec = read_json_file(dir / "run" / "config.json");
    EditConfig defaults;
    defaults.model_seed = 3;  // taken from the checkpoint manifest
    CHECK(spec["edit"].get<EditConfig>() == defaults);
    REQUIRE(run_cli("rerun " + q(dir / "run") + " --out " + q(dir / "again")) == 0);
    CHECK(read_json_file(dir / "run" / "metrics.json") == read_json_file(dir / "again" / "metrics.json"));

    fs::create_directories(dir / "other");
    const auto other = test::write_tiny_checkpoint(dir / "other", 99);
    CHECK(run_cli("rerun " + q(dir / "run") + " --out " + q(dir / "third") + " --checkpoint " +
                  q(other)) == 6);
    // report refuses to mix checkpoints without the flag.
    REQUIRE(run_cli("edit --checkpoint " + q(other) + " --out " + q(dir / "foreign") +
                    " --size 2 --target-color green --steps 3") == 0);
    CHECK(run_cli("report " + q(dir / "run") + " " + q(dir / "foreign")) == 6);
    CHECK(run_cli("report " + q(dir / "run") + " " + q(dir / "foreign") +
                  " --allow-mixed-checkpoints") == 0);
    CHECK(run_cli("reconstruct --checkpoint " + q(ckpt) + " --out " + q(dir / "recon") +
                  " --size 2 --steps 4") == 0);
    CHECK(fs::exists(dir / "recon" / "reconstructed.png"));
  }

  TEST_CASE("ablate and sweep emit one row per variant") {
    const auto dir = test::temp_dir("cli_study");
    const auto ckpt = test::write_tiny_checkpoint(dir);
    REQUIRE(run_cli("ablate --checkpoint " + q(ckpt) + " --out " + q(dir / "ablate") +
                    " --cases 2 --seeds 1,2 --steps 3 --jobs 2") == 0);
    CHECK(report_rows(dir / "ablate") == 4);
    const json rep = read_json_file(dir / "ablate" / "report.json");
    std::vector<std::string> groups;
    for (const auto& r : rep["rows"]) groups.push_back(r["group"]);
    std::sort(groups.begin(), groups.end());
    CHECK(groups == std::vector<std::string>{"kvmix", "kvmix+ls", "ls", "none"});
    REQUIRE(run_cli("sweep --checkpoint " + q(ckpt) + " --out " + q(dir / "sweep") +
                    " --cases 1 --seeds 1 --steps 3 --modes V,QV,QKV,KV") == 0);
    CHECK(report_rows(dir / "sweep") == 4);
    CHECK(run_cli("sweep --checkpoint " + q(ckpt) + " --out " + q(dir / "bad") + " --modes V,K") == 2);
  }

  TEST_CASE("gen-data writes a dataset") {
    const auto dir = test::temp_dir("cli_data");
    REQUIRE(run_cli("gen-data --n 5 --seed 3 --size 16 --out " + q(dir / "data")) == 0);
    CHECK(fs::exists(dir / "data"));
    CHECK(!fs::is_empty(dir / "data"));
  }
}
