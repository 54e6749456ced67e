#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "keyperm/binary_io.hpp"
#include "keyperm/eval.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using keyperm::testing::scratch_dir;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run cli(const std::string& args, const fs::path& dir) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = std::string("\"") + KEYPERM_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

// first line of `out` that starts with `prefix`, minus the prefix
std::string field(const std::string& out, const std::string& prefix) {
    std::istringstream in(out);
    for (std::string line; std::getline(in, line);)
        if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
    return {};
}

std::string synthetic(const fs::path& out, int seed = 5) {
    return " --dataset synthetic --train-size 200 --val-size 20 --test-size 20 -q --seed " + std::to_string(seed) +
           " -o \"" + out.string() + "\"";
}

}  // namespace

TEST_CASE("keygen is deterministic and refuses to overwrite") {
    const auto dir = scratch_dir("cli-keygen");
    Run a = cli("keygen --seed 42 --out \"" + (dir / "a.pkey").string() + "\"", dir);
    REQUIRE(a.code == 0);
    Run b = cli("keygen --seed 42 --out \"" + (dir / "b.pkey").string() + "\"", dir);
    REQUIRE(b.code == 0);
    CHECK(keyperm::read_file(dir / "a.pkey") == keyperm::read_file(dir / "b.pkey"));
    CHECK(field(a.output, "key ").find("sha256") != std::string::npos);

    CHECK(cli("keygen --seed 43 --out \"" + (dir / "a.pkey").string() + "\"", dir).code == 2);
    CHECK(cli("keygen --seed 43 --out \"" + (dir / "a.pkey").string() + "\" --force", dir).code == 0);
    CHECK(keyperm::read_file(dir / "a.pkey") != keyperm::read_file(dir / "b.pkey"));
    CHECK(cli("keygen --out x.pkey", dir).code == 2);
}

TEST_CASE("train, attack, evaluate and report end to end") {
    const auto dir = scratch_dir("cli-flow");
    const std::string key = (dir / "victim.pkey").string();
    REQUIRE(cli("keygen --seed 9 --out \"" + key + "\"", dir).code == 0);

    Run classical = cli("train --arch cw-arch-small --mode classical --epochs 1" + synthetic(dir), dir);
    REQUIRE(classical.code == 0);
    const std::string cmodel = field(classical.output, "model ");
    REQUIRE(fs::exists(cmodel));
    CHECK(fs::path(cmodel).filename().string().find("-classical-cw-arch-small.pclk") == 12);
    CHECK(fs::exists(fs::path(cmodel).replace_extension(".metrics.txt")));

    // same inputs, same bytes; a new seed gives a new content address
    const keyperm::Bytes first = keyperm::read_file(cmodel);
    Run again = cli("train --arch cw-arch-small --mode classical --epochs 1" + synthetic(dir), dir);
    CHECK(field(again.output, "model ") == cmodel);
    CHECK(keyperm::read_file(cmodel) == first);
    Run other = cli("train --arch cw-arch-small --mode classical --epochs 1" + synthetic(dir, 6), dir);
    CHECK(field(other.output, "model ") != cmodel);

    CHECK(cli("train --mode defended --epochs 1" + synthetic(dir), dir).code == 2);
    Run defended = cli("train --mode defended --epochs 1 --key \"" + key + "\"" + synthetic(dir), dir);
    REQUIRE(defended.code == 0);
    const std::string dmodel = field(defended.output, "model ");
    CHECK(dmodel.find("-defended-cw-arch-small.pclk") != std::string::npos);

    Run attack = cli("attack --model \"" + cmodel + "\" --family fgsm --samples 20" + synthetic(dir), dir);
    REQUIRE(attack.code == 0);
    const std::string batch = field(attack.output, "batch ");
    CHECK(fs::exists(batch));
    CHECK(!field(attack.output, "success rate ").empty());

    Run ev = cli("evaluate --classical-model \"" + cmodel + "\" --defended-model \"" + dmodel + "\" --key \"" + key +
                     "\" --batch \"" + batch + "\"" + synthetic(dir),
                 dir);
    CHECK((ev.code == 0 || ev.code == 4));
    const std::string report = field(ev.output, "report ");
    REQUIRE(fs::exists(report));
    const keyperm::Bytes rb = keyperm::read_file(report);
    const keyperm::EvalReport rep = keyperm::EvalReport::from_json(std::string(rb.begin(), rb.end()));
    CHECK(rep.cells.size() == 2);
    CHECK(rep.cells[1].key_seed == 9u);

    Run text = cli("report \"" + report + "\"", dir);
    CHECK(text.code == ev.code);
    CHECK(text.output.find("FGSM") != std::string::npos);
    CHECK(cli("report \"" + report + "\" --format yaml", dir).code == 2);
}

TEST_CASE("errors map to documented exit codes and name the fix") {
    const auto dir = scratch_dir("cli-errors");
    Run missing = cli("attack --model \"" + (dir / "nope.pclk").string() + "\"" + synthetic(dir), dir);
    CHECK(missing.code == 3);
    CHECK(missing.output.find("keyperm train") != std::string::npos);

    Run no_batch = cli("evaluate --classical-model m.pclk --batch \"" + (dir / "b.padv").string() + "\"" +
                           synthetic(dir),
                       dir);
    CHECK(no_batch.code == 3);
    CHECK(no_batch.output.find("keyperm attack") != std::string::npos);

    std::ofstream(dir / "bad.ini") << "[victim]\ncolour = blue\n";
    CHECK(cli("train -c \"" + (dir / "bad.ini").string() + "\"" + synthetic(dir), dir).code == 2);

    std::ofstream(dir / "leak.ini") << "[attacker]\nkey_seed = 4\n";
    CHECK(cli("attack -c \"" + (dir / "leak.ini").string() + "\"" + synthetic(dir), dir).code == 5);

    CHECK(cli("bogus", dir).code == 2);
    CHECK(cli("train --dataset mnist --data-dir \"" + (dir / "absent").string() + "\" -q", dir).code == 3);
}

TEST_CASE("smoke preset runs through the cli") {
    const auto dir = scratch_dir("cli-smoke");
    Run r = cli("evaluate --preset smoke -q -o \"" + dir.string() + "\"", dir);
    CHECK((r.code == 0 || r.code == 4));
    CHECK(r.output.find("CW l2") != std::string::npos);
    CHECK(fs::exists(field(r.output, "report ")));
}
