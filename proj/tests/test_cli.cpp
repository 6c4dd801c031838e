#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mslm/dictionary.hpp"
#include "mslm/trainer.hpp"

namespace {

using namespace mslm;

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Scratch directory plus a binary runner; every invocation captures both
// output streams so assertions can look at either.
struct Sandbox {
    std::string dir;
    std::string bin;

    Sandbox() {
        char tmpl[] = "/tmp/mslm_cli_XXXXXX";
        REQUIRE(mkdtemp(tmpl) != nullptr);
        dir = tmpl;
        const char* env = std::getenv("MSLM_BIN");
        bin = env == nullptr ? "" : env;
    }
    ~Sandbox() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }

    std::string path(const std::string& name) const { return dir + "/" + name; }

    void write(const std::string& name, const std::string& text) const {
        std::ofstream out(path(name), std::ios::binary);
        out << text;
        REQUIRE(out.good());
    }

    std::string read(const std::string& name) const {
        std::ifstream in(path(name), std::ios::binary);
        REQUIRE(in.good());
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    RunResult run(const std::string& args) const {
        const std::string cmd =
            bin + " " + args + " >" + path(".out") + " 2>" + path(".err");
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = read(".out");
        r.err = read(".err");
        return r;
    }
};

std::string repeat(const std::string& piece, int times) {
    std::string out;
    out.reserve(piece.size() * static_cast<std::size_t>(times));
    for (int i = 0; i < times; ++i) out += piece;
    return out;
}

#define REQUIRE_BIN(sb)                       \
    if ((sb).bin.empty()) {                   \
        SKIP("MSLM_BIN is not set");          \
    }

}  // namespace

TEST_CASE("bad invocations exit with the usage code", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    REQUIRE(sb.run("").code == 1);
    REQUIRE(sb.run("frobnicate").code == 1);
    REQUIRE(sb.run("learn-dict --input only.txt").code == 1);
    REQUIRE(sb.run("train --bogus-flag 3").code == 1);
    REQUIRE(sb.run("--help").code == 0);
}

TEST_CASE("learn-dict writes a loadable dictionary and a report", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 50));
    const RunResult r = sb.run("learn-dict --input " + sb.path("c.txt") +
                               " --policy raw --t-max 40 --output " + sb.path("d.txt"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("compression:") != std::string::npos);
    REQUIRE(r.out.find("rank") != std::string::npos);
    const Dictionary dict = load_dictionary(sb.path("d.txt"));
    REQUIRE(dict.size() <= 40);
    REQUIRE(dict.size() > dict.alphabet.size());

    const std::string first = sb.read("d.txt");
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 40 --output " + sb.path("d2.txt"))
                .code == 0);
    REQUIRE(sb.read("d2.txt") == first);

    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 2 --output " + sb.path("d3.txt"))
                .code == 2);
}

TEST_CASE("a bound equal to the alphabet size learns zero merges", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("ab", 30));
    const RunResult r = sb.run("learn-dict --input " + sb.path("c.txt") +
                               " --policy raw --t-max 2 --output " + sb.path("d.txt"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("composite tokens: 0") != std::string::npos);
    REQUIRE(load_dictionary(sb.path("d.txt")).size() == 2);
}

TEST_CASE("dict-stats describes a dictionary", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 50));
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 40 --output " + sb.path("d.txt"))
                .code == 0);
    const RunResult r = sb.run("dict-stats --dict " + sb.path("d.txt"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("tokens:") != std::string::npos);
    REQUIRE(r.out.find("longest token:") != std::string::npos);
    REQUIRE(r.out.find("token length histogram:") != std::string::npos);

    REQUIRE(sb.run("dict-stats --dict " + sb.path("missing.txt")).code == 2);
}

TEST_CASE("lattice-stats reports mean one for a base dictionary", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", "abababab");
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 2 --output " + sb.path("d.txt"))
                .code == 0);
    const RunResult r = sb.run("lattice-stats --input " + sb.path("c.txt") +
                               " --policy raw --dict " + sb.path("d.txt") + " --csv " +
                               sb.path("arcs.csv"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("mean arcs per position: 1.0000") != std::string::npos);
    REQUIRE(r.out.find("positions: 8") != std::string::npos);

    const std::string csv = sb.read("arcs.csv");
    REQUIRE(csv.substr(0, 19) == "position,arc_count\n");
    REQUIRE(csv.find("\n0,1\n") != std::string::npos);
    REQUIRE(csv.find("\n7,1\n") != std::string::npos);
}

TEST_CASE("train writes a checkpoint and curve then resumes from them", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 100));
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 40 --output " + sb.path("d.txt"))
                .code == 0);
    const std::string common = " --input " + sb.path("c.txt") + " --policy raw --dict " +
                               sb.path("d.txt") +
                               " --hidden 8 --embed 4 --window 64 --streams 2 --seed 7"
                               " --eval-every 5 --quiet";
    const RunResult r =
        sb.run("train" + common + " --updates 10 --checkpoint " + sb.path("m.ckpt") +
               " --curve " + sb.path("curve.csv"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("updates: 10") != std::string::npos);
    REQUIRE(r.out.find("final valid bpc:") != std::string::npos);

    std::ifstream ck(sb.path("m.ckpt"), std::ios::binary);
    const Checkpoint loaded = load_checkpoint(ck, "m.ckpt");
    REQUIRE(loaded.moments.step == 10);
    REQUIRE(loaded.params.sizes.hidden == 8);

    const std::string curve = sb.read("curve.csv");
    REQUIRE(curve.substr(0, 16) == "update,split,bpc");
    REQUIRE(curve.find("5,train,") != std::string::npos);
    REQUIRE(curve.find("10,valid,") != std::string::npos);

    // Identical flags must reproduce the checkpoint bit for bit.
    REQUIRE(sb.run("train" + common + " --updates 10 --checkpoint " + sb.path("m2.ckpt"))
                .code == 0);
    REQUIRE(sb.read("m2.ckpt") == sb.read("m.ckpt"));

    const RunResult more =
        sb.run("train" + common + " --updates 5 --resume " + sb.path("m.ckpt") +
               " --checkpoint " + sb.path("m3.ckpt") + " --curve " + sb.path("curve3.csv"));
    REQUIRE(more.code == 0);
    std::ifstream ck3(sb.path("m3.ckpt"), std::ios::binary);
    REQUIRE(load_checkpoint(ck3, "m3.ckpt").moments.step == 15);
    REQUIRE(sb.read("curve3.csv").find("15,train,") != std::string::npos);
}

TEST_CASE("eval prints the uniform bound for a zero checkpoint", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("abcdefghijklmnopqrstuvwxyz ", 40));
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 27 --output " + sb.path("d.txt"))
                .code == 0);

    // All-zero weights mean uniform outputs: bpc is exactly log2 of 27.
    {
        const Checkpoint zero(ModelSizes{27, 4, 2});
        std::ofstream out(sb.path("zero.ckpt"), std::ios::binary);
        save_checkpoint(out, zero);
    }
    const RunResult r = sb.run("eval --input " + sb.path("c.txt") + " --policy raw --dict " +
                               sb.path("d.txt") + " --checkpoint " + sb.path("zero.ckpt"));
    REQUIRE(r.code == 0);
    REQUIRE(r.out == "4.7549\n");

    const RunResult again = sb.run("eval --input " + sb.path("c.txt") +
                                   " --policy raw --dict " + sb.path("d.txt") +
                                   " --checkpoint " + sb.path("zero.ckpt") + " --split valid");
    REQUIRE(again.code == 0);
    REQUIRE(again.out == "4.7549\n");

    // A checkpoint sized for a different dictionary is a data error.
    {
        const Checkpoint wrong(ModelSizes{5, 4, 2});
        std::ofstream out(sb.path("wrong.ckpt"), std::ios::binary);
        save_checkpoint(out, wrong);
    }
    REQUIRE(sb.run("eval --input " + sb.path("c.txt") + " --policy raw --dict " +
                   sb.path("d.txt") + " --checkpoint " + sb.path("wrong.ckpt"))
                .code == 2);

    REQUIRE(sb.run("eval --input " + sb.path("c.txt") + " --policy raw --dict " +
                   sb.path("d.txt") + " --checkpoint " + sb.path("zero.ckpt") +
                   " --split weekend")
                .code == 1);
}

TEST_CASE("sample is seed-deterministic and marks token boundaries", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 100));
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 40 --output " + sb.path("d.txt"))
                .code == 0);
    REQUIRE(sb.run("train --input " + sb.path("c.txt") + " --policy raw --dict " +
                   sb.path("d.txt") +
                   " --hidden 8 --embed 4 --window 64 --updates 5 --seed 7 --quiet"
                   " --checkpoint " +
                   sb.path("m.ckpt"))
                .code == 0);

    const std::string base = "sample --dict " + sb.path("d.txt") + " --checkpoint " +
                             sb.path("m.ckpt") + " --length 50 --seed 3";
    const RunResult a = sb.run(base);
    const RunResult b = sb.run(base);
    REQUIRE(a.code == 0);
    REQUIRE(a.out == b.out);
    REQUIRE(a.out.size() > 1);

    const RunResult piped = sb.run(base + " --marker '|'");
    REQUIRE(piped.code == 0);
    std::string plain;
    for (char c : piped.out) {
        if (c != '|' && c != '\n') plain += c;
    }
    REQUIRE(plain.size() == 50);

    REQUIRE(sb.run(base + " --prompt 'the cat'").code == 0);
    REQUIRE(sb.run(base + " --prompt 'THE CAT'").code == 2);
    REQUIRE(sb.run(base + " --temperature 0").code == 2);
    const std::string bare =
        "sample --dict " + sb.path("d.txt") + " --checkpoint " + sb.path("m.ckpt");
    REQUIRE(sb.run(bare + " --length 0").code == 2);
}

TEST_CASE("a config file drives train and explicit flags beat it", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 100));
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy raw --t-max 40 --output " + sb.path("d.txt"))
                .code == 0);
    sb.write("train.cfg",
             "# experiment settings\n"
             "input = " + sb.path("c.txt") + "\n"
             "dict = " + sb.path("d.txt") + "\n"
             "checkpoint = " + sb.path("m.ckpt") + "\n"
             "updates = 3\n"
             "hidden = 8\n"
             "embed = 4\n"
             "window = 32\n"
             "eval_every = 1\n"
             "seed = 5\n");
    REQUIRE(sb.run("train --config " + sb.path("train.cfg") + " --quiet").code == 0);
    std::ifstream ck(sb.path("m.ckpt"), std::ios::binary);
    REQUIRE(load_checkpoint(ck, "m.ckpt").moments.step == 3);

    REQUIRE(sb.run("train --config " + sb.path("train.cfg") + " --quiet --updates 2"
                   " --checkpoint " +
                   sb.path("m2.ckpt"))
                .code == 0);
    std::ifstream ck2(sb.path("m2.ckpt"), std::ios::binary);
    REQUIRE(load_checkpoint(ck2, "m2.ckpt").moments.step == 2);

    sb.write("bad.cfg", "updates = 3\ncolour = blue\n");
    const RunResult bad = sb.run("train --config " + sb.path("bad.cfg") + " --quiet");
    REQUIRE(bad.code == 2);
    REQUIRE(bad.err.find(":2:") != std::string::npos);
    REQUIRE(bad.err.find("colour") != std::string::npos);

    sb.write("empty.cfg", "updates = 3\n");
    REQUIRE(sb.run("train --config " + sb.path("empty.cfg") + " --quiet").code == 1);
}

TEST_CASE("data problems exit with the data code", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", "the cat. ");
    REQUIRE(sb.run("learn-dict --input " + sb.path("nope.txt") +
                   " --policy raw --t-max 30 --output " + sb.path("d.txt"))
                .code == 2);
    // text8 rejects bytes outside a-z and space.
    REQUIRE(sb.run("learn-dict --input " + sb.path("c.txt") +
                   " --policy text8 --t-max 30 --output " + sb.path("d.txt"))
                .code == 2);
    REQUIRE(sb.run("train --input " + sb.path("c.txt") + " --checkpoint " +
                   sb.path("m.ckpt") + " --updates 1 --precision f32 --quiet")
                .code == 2);
}

TEST_CASE("the character model needs no dictionary file", "[cli]") {
    Sandbox sb;
    REQUIRE_BIN(sb);
    sb.write("c.txt", repeat("the cat sat on the mat. ", 100));
    const RunResult r = sb.run("train --input " + sb.path("c.txt") +
                               " --policy raw --hidden 8 --embed 4 --window 64"
                               " --updates 5 --seed 7 --quiet --checkpoint " +
                               sb.path("char.ckpt"));
    REQUIRE(r.code == 0);
    std::ifstream ck(sb.path("char.ckpt"), std::ios::binary);
    // Corpus uses exactly 11 distinct bytes, so the model has 11 tokens.
    REQUIRE(load_checkpoint(ck, "char.ckpt").params.sizes.tokens == 11);

    const RunResult ev = sb.run("eval --input " + sb.path("c.txt") +
                                " --policy raw --checkpoint " + sb.path("char.ckpt"));
    REQUIRE(ev.code == 0);
    REQUIRE(ev.out.size() >= 7);
    REQUIRE(ev.out.find('.') != std::string::npos);
}
