#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "polytrans/checkpoint.hpp"
#include "polytrans/config.hpp"
#include "polytrans/evaluator.hpp"
#include "polytrans/image.hpp"

using namespace polytrans;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
  std::string stdout_only;
};

std::string binary() {
  const char* env = std::getenv("POLYTRANS_BIN");
  REQUIRE_MESSAGE(env != nullptr, "POLYTRANS_BIN is not set");
  return env;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

Run run(const std::string& args) {
  static int counter = 0;
  const auto err = fs::temp_directory_path() / ("polytrans_cli_err_" + std::to_string(counter++));
  const std::string cmd = binary() + " " + args + " 2>" + err.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.stdout_only += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = r.stdout_only + slurp(err);
  fs::remove(err);
  return r;
}

int count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  int n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

struct Workspace {
  fs::path root = fs::temp_directory_path() / "polytrans_cli";
  fs::path config = root / "config.json";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig c;
    c.model = fixtures::small_config();
    c.model.double_precision = false;
    c.train.batch_size = 2;
    c.classifier.image_size = 8;
    std::ofstream(config) << c.to_json().dump(2);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string with_config(const std::string& args) const { return "--config " + config.string() + " " + args; }
};

}  // namespace

TEST_CASE("command line workflow") {
  Workspace ws;
  const auto data = ws.root / "data";

  SUBCASE("synthetic data, training regimes and warm start provenance") {
    auto r = run(ws.with_config("--seed 1 --out " + data.string() + " synth-data --count 80"));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "run_manifest.json"));

    const auto joint = ws.root / "joint";
    r = run(ws.with_config("--deterministic --out " + joint.string() + " train --regime joint --steps 10 --data " +
                           data.string()));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(count_lines_starting(r.stdout_only, "{\"losses\"") == 10);
    CHECK(load_checkpoint(joint).manifest.regime == "joint");

    const auto p1 = ws.root / "p1", p2 = ws.root / "p2", warm = ws.root / "warm";
    REQUIRE(run(ws.with_config("--out " + p1.string() + " train --pair red,blue --steps 3 --data " + data.string()))
                .code == 0);
    REQUIRE(run(ws.with_config("--out " + p2.string() + " train --pair striped,plain --steps 3 --data " +
                               data.string()))
                .code == 0);
    r = run(ws.with_config("--out " + warm.string() + " train --regime warm_start --steps 2 --from " + p1.string() +
                           " " + p2.string() + " --data " + data.string()));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto m = load_checkpoint(warm).manifest;
    CHECK(m.provenance["sources"][0]["hash"] == checkpoint_hash(load_checkpoint(p1).manifest));
    CHECK(m.provenance["sources"][1]["hash"] == checkpoint_hash(load_checkpoint(p2).manifest));

    r = run("--out " + (ws.root / "grid.png").string() + " compose --checkpoint " + warm.string() +
            " --chain 'red>blue,striped>plain' --inputs " + (data / "red").string());
    CHECK_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(ws.root / "grid.png"));

    r = run("--out " + (ws.root / "bad").string() + " compose --checkpoint " + warm.string() +
            " --chain 'red>grenn' --inputs " + (data / "red").string());
    CHECK(r.code == 2);
    CHECK(r.output.find("grenn") != std::string::npos);

    r = run("--out " + (ws.root / "cross").string() + " compose --checkpoint " + p1.string() + " --checkpoint " +
            p2.string() + " --chain 'red>plain' --inputs " + (data / "red").string());
    CHECK(r.code == 1);
  }

  SUBCASE("cycle metric of the identity model is zero") {
    ModelConfig c;
    c.architecture = "identity";
    c.image_size = 8;
    const auto ckpt = ws.root / "identity";
    save_checkpoint(ckpt, fixtures::make_net(c), {});
    fs::create_directories(ws.root / "inputs");
    for (int i = 0; i < 3; ++i) {
      write_png(ws.root / "inputs" / (std::to_string(i) + ".png"), to_u8(torch::rand({3, 8, 8}) * 2 - 1));
    }
    const auto r = run("--out " + (ws.root / "eval").string() + " evaluate --metric cycle --pair red,blue --checkpoint " +
                       ckpt.string() + " --inputs " + (ws.root / "inputs").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.stdout_only == "0\n");
    std::ifstream in(ws.root / "eval" / "report.json");
    CHECK(nlohmann::json::parse(in)["value"] == 0.0);
  }

  SUBCASE("presence metric with nothing surviving the gate") {
    ModelConfig c;
    c.architecture = "identity";
    c.image_size = 8;
    const auto ckpt = ws.root / "identity";
    save_checkpoint(ckpt, fixtures::make_net(c), {});
    ClassifierSpec spec;
    spec.image_size = 8;
    ClassifierTraining always_one{Classifier(spec), 0, 0, 0, synthetic_label_map()};
    {
      torch::NoGradGuard no_grad;
      const auto params = always_one.classifier.named_parameters();
      for (const auto& [name, t] : params) t.zero_();
      params.back().second[1] = 10.0;  // final bias
    }
    save_classifier(ws.root / "clf", always_one);
    const auto r = run("--out " + (ws.root / "presence").string() +
                       " evaluate --metric presence --synthetic 20 --chain '1>2' --expected 0,1 --checkpoint " +
                       ckpt.string() + " --classifier " + (ws.root / "clf").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    std::ifstream in(ws.root / "presence" / "report.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["n"] == 0);
    CHECK(j["empty"] == true);
    CHECK(j["gated_out"] == 20);
  }

  SUBCASE("dry run counts without writing") {
    const auto attrs = ws.root / "list_attr.txt";
    std::ofstream(attrs) << "3\nEyeglasses Smiling\n000001.jpg 1 -1\n000002.jpg -1 1\n000003.jpg -1 -1\n";
    const auto out = ws.root / "prepared";
    const auto r = run("--out " + out.string() + " prepare-data --dry-run --attributes " + attrs.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.stdout_only.find("\nglasses: 1 ") != std::string::npos);
    CHECK_FALSE(fs::exists(out));
  }

  SUBCASE("usage errors exit with code 2") {
    CHECK(run("train --no-such-flag").code == 2);
    const auto bad = ws.root / "bad.json";
    std::ofstream(bad) << R"({"model": {"width": 3}})";
    const auto r = run("--config " + bad.string() + " --out " + (ws.root / "x").string() + " synth-data --count 4");
    CHECK(r.code == 2);
    CHECK(r.output.find("width") != std::string::npos);
    CHECK(run("--out " + (ws.root / "y").string() + " train --regime sideways --data " + ws.root.string()).code == 2);
    CHECK(run("--out " + (ws.root / "z").string() + " compose --checkpoint /nonexistent --chain '1>2' --inputs " +
              ws.root.string())
              .code == 3);
  }
}
