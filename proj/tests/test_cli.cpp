#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("GBI_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "GBI_BIN must point at the gbi binary");
    return bin;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("gbi_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args, std::string* output = nullptr) {
    const fs::path log = fs::temp_directory_path() / "gbi_cli_last.log";
    const std::string cmd = binary() + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output != nullptr) {
        std::ifstream f(log);
        std::stringstream ss;
        ss << f.rdbuf();
        *output = ss.str();
    }
    return status;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE_MESSAGE(f.good(), "missing file: " << path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    f << content;
}

}  // namespace

TEST_CASE("gen-data writes the documented CSV and is byte-deterministic") {
    auto dir = fresh_dir("gen");
    auto cfg = dir / "toy.cfg";
    write_file(cfg, "n_steps=120\nseed=3\n");

    REQUIRE(run("gen-data --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
    const std::string first = slurp(dir / "a" / "observations.csv");
    CHECK(first.substr(0, 14) == "step,x,z_true\n");

    REQUIRE(run("gen-data --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
    CHECK(slurp(dir / "b" / "observations.csv") == first);

    // resolved config is written next to the outputs
    const std::string resolved = slurp(dir / "a" / "config.resolved.cfg");
    CHECK(resolved.find("n_steps=120") != std::string::npos);
    CHECK(resolved.find("p_v=0.005") != std::string::npos);

    // seed flag overrides the config
    REQUIRE(run("gen-data --config " + cfg.string() + " --seed 4 --out " + (dir / "c").string()) == 0);
    CHECK(slurp(dir / "c" / "observations.csv") != first);
}

TEST_CASE("toy pipeline: train, eval, stream") {
    auto dir = fresh_dir("toy");
    auto cfg = dir / "toy.cfg";
    write_file(cfg, "n_steps=400\nhidden=24\nseed=5\nsteps_per_mean=30\nmodel=gbi\n");

    REQUIRE(run("train-toy --config " + cfg.string() + " --out " + (dir / "train").string()) == 0);
    CHECK(fs::exists(dir / "train" / "checkpoint.ckpt"));
    const std::string loss = slurp(dir / "train" / "loss.csv");
    CHECK(loss.substr(0, 10) == "step,loss\n");
    CHECK(slurp(dir / "train" / "blocks.csv").substr(0, 5) == "block");

    // byte-identical retrain
    REQUIRE(run("train-toy --config " + cfg.string() + " --out " + (dir / "train2").string()) == 0);
    CHECK(slurp(dir / "train2" / "loss.csv") == loss);
    CHECK(slurp(dir / "train2" / "checkpoint.ckpt") == slurp(dir / "train" / "checkpoint.ckpt"));

    const std::string ckpt = (dir / "train" / "checkpoint.ckpt").string();
    REQUIRE(run("eval-toy --config " + cfg.string() + " --ckpt " + ckpt + " --out " +
                (dir / "eval").string()) == 0);
    const std::string mse = slurp(dir / "eval" / "mse.csv");
    CHECK(mse.substr(0, 4) == "mean");
    int lines = -1;
    for (char c : mse)
        if (c == '\n') ++lines;
    CHECK(lines == 15);  // one row per default sweep mean

    for (const char* mode : {"default", "engaged"}) {
        REQUIRE(run("infer-stream --config " + cfg.string() + " --ckpt " + ckpt + " --mode " + mode +
                    " --seed 9 --out " + (dir / mode).string()) == 0);
        const std::string traj = slurp(dir / fs::path(mode) / "trajectory.csv");
        CHECK(traj.rfind("step,x,pred_mean,pred_sigma,z0,z1,grad_z0,grad_z1,evidence\n5,", 0) == 0);
    }
}

TEST_CASE("report aggregates table 1 from per-run CSVs") {
    auto dir = fresh_dir("report");
    const char* header = "mean,mse,model,seed,last_block_label,mu1,mu2\n";
    auto make_mse = [&](const std::string& name, const std::string& model, int seed, double base) {
        std::string csv = header;
        for (int i = -2; i <= 12; ++i)
            csv += std::to_string(i / 10.0) + "," + std::to_string(base + 0.01 * std::abs(i)) + "," +
                   model + "," + std::to_string(seed) + ",1,0.2,0.8\n";
        write_file(dir / name, csv);
    };
    make_mse("gbi_s0.csv", "gbi", 0, 0.02);
    make_mse("gbi_s1.csv", "gbi", 1, 0.04);
    make_mse("lstm_s0.csv", "lstm", 0, 0.10);
    make_mse("lstm_s1.csv", "lstm", 1, 0.12);

    std::string output;
    REQUIRE(run("report --table 1 --out " + (dir / "agg").string() + " " +
                (dir / "gbi_s0.csv").string() + " " + (dir / "gbi_s1.csv").string() + " " +
                (dir / "lstm_s0.csv").string() + " " + (dir / "lstm_s1.csv").string(),
                &output) == 0);
    const std::string table = slurp(dir / "agg" / "table1.csv");
    CHECK(table.find("group,gbi_mse,gbi_sem,lstm_mse,lstm_sem") == 0);
    CHECK(table.find("last_training_block_mean") != std::string::npos);
    CHECK(table.find("outside_training_range") != std::string::npos);
    CHECK(output.find("outside_training_range") != std::string::npos);
}

TEST_CASE("report aggregates tables 2 and 3") {
    auto dir = fresh_dir("report23");
    write_file(dir / "acc0.csv", "method,accuracy,runs,seed\ngbi,0.85,1,0\n");
    write_file(dir / "acc1.csv", "method,accuracy,runs,seed\ngbi,0.87,1,1\nlikelihood,0.92,10,1\n");
    REQUIRE(run("report --table 2 --out " + (dir / "t2").string() + " " + (dir / "acc0.csv").string() +
                " " + (dir / "acc1.csv").string()) == 0);
    const std::string t2 = slurp(dir / "t2" / "table2.csv");
    CHECK(t2.find("gbi,0.86,") != std::string::npos);
    CHECK(t2.find("likelihood,0.92,0,10,1") != std::string::npos);

    write_file(dir / "ood0.csv", "method,normalized,aucroc,seed\ngbi_max,true,0.88,0\n");
    write_file(dir / "ood1.csv", "method,normalized,aucroc,seed\ngbi_max,true,0.90,1\n");
    REQUIRE(run("report --table 3 --out " + (dir / "t3").string() + " " + (dir / "ood0.csv").string() +
                " " + (dir / "ood1.csv").string()) == 0);
    CHECK(slurp(dir / "t3" / "table3.csv").find("gbi_max,true,0.89,") != std::string::npos);
}

TEST_CASE("failures exit nonzero with a one-line error") {
    auto dir = fresh_dir("fail");
    write_file(dir / "bad.cfg", "not_a_key=1\n");
    std::string output;
    CHECK(run("gen-data --config " + (dir / "bad.cfg").string() + " --out " + (dir / "x").string(),
              &output) != 0);
    CHECK(output.find("error:") != std::string::npos);
    CHECK(output.find("not_a_key") != std::string::npos);

    CHECK(run("eval-toy --ckpt " + (dir / "missing.ckpt").string() + " --out " +
              (dir / "y").string(), &output) != 0);
    CHECK(output.find("error:") != std::string::npos);

    // malformed checkpoint (magic mismatch)
    write_file(dir / "fake.ckpt", "THIS IS NOT A CHECKPOINT");
    CHECK(run("eval-toy --ckpt " + (dir / "fake.ckpt").string() + " --out " + (dir / "z").string(),
              &output) != 0);
    CHECK(output.find("GBICKPT1") != std::string::npos);
}

#include "gbi/vision.hpp"
#include "support/synth_images.hpp"

TEST_CASE("vision pipeline round trip through the CLI on synthetic IDX data") {
    auto dir = fresh_dir("vision");
    // lay out a dataset root the vision commands understand
    const fs::path data = dir / "data";
    fs::create_directories(data / "mnist");
    fs::create_directories(data / "fashion-mnist");
    auto train = gbi::testing::make_synth_images(600, 41);
    auto test = gbi::testing::make_synth_images(128, 42);
    auto ood = gbi::testing::make_synth_images(128, 43);
    for (auto& p : ood.pixels) p = 1.0f - p;  // a different pixel distribution
    gbi::testing::write_idx_pair(train, (data / "mnist" / "train-images-idx3-ubyte").string(),
                                 (data / "mnist" / "train-labels-idx1-ubyte").string());
    gbi::testing::write_idx_pair(test, (data / "mnist" / "t10k-images-idx3-ubyte").string(),
                                 (data / "mnist" / "t10k-labels-idx1-ubyte").string());
    gbi::testing::write_idx_pair(ood, (data / "fashion-mnist" / "t10k-images-idx3-ubyte").string(),
                                 (data / "fashion-mnist" / "t10k-labels-idx1-ubyte").string());

    auto cfg = dir / "vision.cfg";
    write_file(cfg, "epochs=2\nbatch=64\nseed=3\n");
    const std::string common = " --config " + cfg.string() + " --data-dir " + data.string();

    REQUIRE(run("train-mnist" + common + " --model ae --out " + (dir / "ae").string()) == 0);
    REQUIRE(run("train-mnist" + common + " --model classifier --out " + (dir / "clf").string()) == 0);
    CHECK(slurp(dir / "ae" / "losses.csv").substr(0, 26) == "epoch,train_loss,val_loss\n");

    const std::string ae_ckpt = (dir / "ae" / "checkpoint.ckpt").string();
    const std::string clf_ckpt = (dir / "clf" / "checkpoint.ckpt").string();

    REQUIRE(run("eval-mnist" + common + " --ae-ckpt " + ae_ckpt + " --method gbi --limit 64 --out " +
                (dir / "eval").string()) == 0);
    const std::string acc = slurp(dir / "eval" / "accuracy.csv");
    CHECK(acc.substr(0, 26) == "method,accuracy,runs,seed\n");
    CHECK(acc.find("gbi,") != std::string::npos);
    CHECK(acc.find(",1,3") != std::string::npos);  // runs=1, seed=3
    CHECK(fs::exists(dir / "eval" / "confbins.csv"));
    CHECK(slurp(dir / "eval" / "summary.json").find("\"runs\": 1") != std::string::npos);

    REQUIRE(run("eval-mnist" + common + " --ae-ckpt " + ae_ckpt + " --clf-ckpt " + clf_ckpt +
                " --method discriminative --limit 64 --out " + (dir / "eval-clf").string()) == 0);
    CHECK(slurp(dir / "eval-clf" / "accuracy.csv").find("discriminative,") != std::string::npos);

    REQUIRE(run("ood" + common + " --ae-ckpt " + ae_ckpt + " --clf-ckpt " + clf_ckpt +
                " --limit 32 --out " + (dir / "ood").string()) == 0);
    const std::string summary = slurp(dir / "ood" / "ood_summary.csv");
    CHECK(summary.substr(0, 30) == "method,normalized,aucroc,seed\n");
    CHECK(summary.find("gbi_max,false,") != std::string::npos);
    CHECK(summary.find("clf_softmax_max,false,") != std::string::npos);

    REQUIRE(run("cond-gen" + common + " --ae-ckpt " + ae_ckpt + " --index 5 --out " +
                (dir / "strip").string()) == 0);
    const std::string pgm = slurp(dir / "strip" / "strip.pgm");
    CHECK(pgm.substr(0, 3) == "P5\n");
    CHECK(fs::exists(dir / "strip" / "condgen_mse.csv"));

    // unknown method is a one-line error
    std::string output;
    CHECK(run("eval-mnist" + common + " --ae-ckpt " + ae_ckpt + " --method bogus --out " +
              (dir / "bad").string(), &output) != 0);
    CHECK(output.find("error:") != std::string::npos);
}
