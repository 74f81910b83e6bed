#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "foqus/dataset.hpp"
#include "foqus/selection.hpp"
#include "support.hpp"

using namespace foqus;

namespace {

struct Result {
    int code = -1;
    std::string err;
};

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli {
public:
    Cli()
    {
        std::ofstream(dir_ / "small.json") << R"({
  "dataset": {"frames_per_class_per_snr": 20, "frame_len": 64},
  "select_model": {"hidden": 24, "embedding_dim": 8},
  "eval_model": {"hidden": 24, "embedding_dim": 8},
  "record": {"epochs": 3},
  "retrain": {"epochs": 2},
  "methods": ["foqus", "uniform", "kcenter"],
  "rates": [0.25, 0.5],
  "repeats": 2,
  "ablation_rate": 0.25
})";
    }

    std::filesystem::path path(const std::string& name) const { return dir_ / name; }

    Result run(const std::string& args) const
    {
        const auto err = dir_ / "stderr.txt";
        const std::string cmd = "cd '" + dir_.path().string() + "' && '" + FOQUS_CLI_PATH + "' -q " + args +
                                " >stdout.txt 2>'" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
    }

    std::string out() const { return slurp(dir_ / "stdout.txt"); }

private:
    testing::TempDir dir_;
};

}  // namespace

TEST_CASE("the staged pipeline runs end to end")
{
    Cli cli;
    REQUIRE(cli.run("gen-data --config small.json --out data.jsonl").code == 0);
    REQUIRE(cli.run("record --data data.jsonl --config small.json --out traj.jsonl --checkpoint m.ckpt").code == 0);
    REQUIRE(cli.run("score --trajectory traj.jsonl --data data.jsonl --out scores.jsonl").code == 0);
    REQUIRE(cli.run("select --scores scores.jsonl --rate 0.1 --seed 4 --out core.txt").code == 0);
    const auto c = load_coreset(cli.path("core.txt"));
    CHECK(c.ids.size() == 10);
    CHECK(c.manifest.config.seed == 4);
    const auto e = cli.run("evaluate --data data.jsonl --coreset core.txt --config small.json");
    CHECK(e.code == 0);
    const double acc = std::stod(cli.out());
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(cli.run("select --scores scores.jsonl --trajectory traj.jsonl --method herding --rate 0.2 --out h.txt")
              .code == 0);
}

TEST_CASE("score with beta 0.1 equals the default")
{
    Cli cli;
    REQUIRE(cli.run("gen-data --config small.json --out data.jsonl").code == 0);
    REQUIRE(cli.run("record --data data.jsonl --config small.json --out traj.jsonl").code == 0);
    REQUIRE(cli.run("score --trajectory traj.jsonl --out a.jsonl").code == 0);
    REQUIRE(cli.run("score --trajectory traj.jsonl --beta 0.1 --out b.jsonl").code == 0);
    REQUIRE(cli.run("score --trajectory traj.jsonl --beta 0.2 --out c.jsonl").code == 0);
    CHECK(slurp(cli.path("a.jsonl")) == slurp(cli.path("b.jsonl")));
    CHECK(slurp(cli.path("a.jsonl")) != slurp(cli.path("c.jsonl")));
}

TEST_CASE("existing outputs are never overwritten without --force")
{
    Cli cli;
    REQUIRE(cli.run("gen-data --config small.json --out data.jsonl").code == 0);
    const auto before = slurp(cli.path("data.jsonl"));
    const auto r = cli.run("gen-data --config small.json --seed 99 --out data.jsonl");
    CHECK(r.code != 0);
    CHECK(r.err.find("foqus: error:") == 0);
    CHECK(r.err.find("--force") != std::string::npos);
    CHECK(slurp(cli.path("data.jsonl")) == before);
    CHECK(cli.run("gen-data --config small.json --seed 99 --out data.jsonl --force").code == 0);
    CHECK(slurp(cli.path("data.jsonl")) != before);
}

TEST_CASE("digest mismatches fail without leaving outputs")
{
    Cli cli;
    REQUIRE(cli.run("gen-data --config small.json --out a.jsonl").code == 0);
    REQUIRE(cli.run("gen-data --config small.json --seed 5 --out b.jsonl").code == 0);
    REQUIRE(cli.run("record --data a.jsonl --config small.json --out ta.jsonl").code == 0);
    REQUIRE(cli.run("record --data b.jsonl --config small.json --out tb.jsonl").code == 0);

    auto r = cli.run("score --trajectory ta.jsonl --data b.jsonl --out s.jsonl");
    CHECK(r.code == 1);
    CHECK(r.err.find("digest mismatch") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(cli.path("s.jsonl")));

    REQUIRE(cli.run("score --trajectory ta.jsonl --out sa.jsonl").code == 0);
    r = cli.run("select --scores sa.jsonl --trajectory tb.jsonl --method kcenter --rate 0.2 --out k.txt");
    CHECK(r.code == 1);
    CHECK(r.err.find("digest mismatch") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(cli.path("k.txt")));

    REQUIRE(cli.run("select --scores sa.jsonl --rate 0.2 --out u.txt").code == 0);
    r = cli.run("evaluate --data b.jsonl --coreset u.txt --config small.json --out acc.txt");
    CHECK(r.code == 1);
    CHECK(r.err.find("digest mismatch") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(cli.path("acc.txt")));
}

TEST_CASE("bad invocations exit nonzero")
{
    Cli cli;
    CHECK(cli.run("").code != 0);
    CHECK(cli.run("frobnicate").code != 0);
    CHECK(cli.run("gen-data --bogus --out x").code != 0);
    CHECK(cli.run("score --trajectory missing.jsonl --out s.jsonl").code != 0);
    CHECK(cli.run("select --scores missing --rate 0.1 --out c.txt").code != 0);
    std::ofstream(cli.path("zero.json")) << R"({"rates":[0]})";
    const auto r = cli.run("experiment --config zero.json --out r.csv");
    CHECK(r.code == 1);
    CHECK(r.err.find("config.rates[0]: rate must be in (0,1]") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(cli.path("r.csv")));
}

TEST_CASE("experiment, ablate and report")
{
    Cli cli;
    REQUIRE(cli.run("experiment --config small.json --out r.csv").code == 0);
    const auto csv = slurp(cli.path("r.csv"));
    CHECK(csv.rfind("method,rate,seed,accuracy\n", 0) == 0);
    CHECK(std::filesystem::exists(cli.path("r.csv.manifest.json")));
    CHECK(cli.run("experiment --config small.json --out r.csv").code != 0);
    REQUIRE(cli.run("experiment --config small.json --out r2.csv --manifest m2.json").code == 0);
    CHECK(slurp(cli.path("r2.csv")) == csv);
    CHECK(slurp(cli.path("m2.json")) == slurp(cli.path("r.csv.manifest.json")));

    REQUIRE(cli.run("ablate --config small.json --out ab.csv").code == 0);
    std::istringstream ab(slurp(cli.path("ab.csv")));
    int rows = 0;
    for (std::string line; std::getline(ab, line) && !line.empty();)
        ++rows;
    CHECK(rows == 1 + 7 * 2);

    REQUIRE(cli.run("report --results r.csv").code == 0);
    CHECK(cli.out().find("FoQuS minus uniform") != std::string::npos);
}
