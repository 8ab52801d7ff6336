#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>

#include "test_util.hpp"

using namespace vitsvm;
using testutil::TempDir;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const TempDir& dir)
{
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(VITSVM_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file_bytes(out);
    r.err = read_file_bytes(err);
    return r;
}

RunConfig tiny_run(const std::filesystem::path& data_dir, const std::filesystem::path& out_dir, std::size_t epochs)
{
    RunConfig cfg;
    cfg.model = preset_config("tiny");
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.train.adam.lr = 1e-3;
    cfg.train.augment = false;
    cfg.train.seed = 5;
    cfg.data.manifest = (data_dir / "manifest.csv").string();
    cfg.output.checkpoint_dir = out_dir.string();
    return cfg;
}

void write_config(const std::filesystem::path& path, const RunConfig& cfg)
{
    std::ofstream(path) << run_config_to_json(cfg).dump(2);
}

Manifest synth(const std::filesystem::path& dir, std::size_t per_class = 4, std::uint64_t seed = 1)
{
    SynthOptions opts;
    opts.per_class = per_class;
    opts.seed = seed;
    opts.size = 16;
    return generate_synthetic(dir, opts);
}

}  // namespace

TEST(Config, PresetDefaultsAndOverrides)
{
    const auto cfg = run_config_from_json(nlohmann::json::parse(R"({"model":{"preset":"tiny","num_layers":3}})"));
    EXPECT_EQ(cfg.model.vit.num_layers, 3u);
    EXPECT_EQ(cfg.model.vit.hidden_dim, 16u);
    EXPECT_EQ(cfg.model.head.kind, HeadKind::SvmHinge);
    const auto d = run_config_from_json(nlohmann::json::object());
    EXPECT_EQ(d.train.epochs, 50u);
    EXPECT_EQ(d.train.batch_size, 8u);
    EXPECT_DOUBLE_EQ(d.train.adam.lr, 1e-4);
    EXPECT_DOUBLE_EQ(d.model.head.dropout, 0.5);
    EXPECT_DOUBLE_EQ(d.model.head.l2, 0.01);
    EXPECT_EQ(d.model.vit.patch_size, 32u);
    EXPECT_EQ(d.model.vit.image_size, 256u);
    EXPECT_EQ(run_config_from_json(run_config_to_json(cfg)), cfg);
}

TEST(Config, Errors)
{
    for (const char* bad : {R"({"train":{"epoch":3}})", R"({"model":{"preset":"vit-l16"}})",
                            R"({"model":{"patch_size":30}})", R"({"train":{"lr":-1}})",
                            R"({"train":{"batch_size":"8"}})", R"({"extra":1})"}) {
        EXPECT_THROW(run_config_from_json(nlohmann::json::parse(bad)), ConfigError) << bad;
    }
}

TEST(Config, RelativePathsResolveAgainstConfigDir)
{
    TempDir dir("cfg");
    std::ofstream(dir / "run.json") << R"({"data":{"manifest":"d/m.csv"},"output":{"checkpoint_dir":"ck"}})";
    const auto cfg = load_run_config(dir / "run.json");
    EXPECT_EQ(cfg.data.manifest, (dir / "d/m.csv").string());
    EXPECT_EQ(cfg.output.checkpoint_dir, (dir / "ck").string());
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical)
{
    TempDir dir("ckpt");
    RunConfig cfg = tiny_run(dir.path(), dir.path(), 1);
    auto state = fresh_state<float>(cfg);
    state.epoch = 3;
    state.adam.step = 7;
    state.schedule.best = 0.25;
    state.model.params.at(0)[0] = 0.125f;
    state.adam.m[2][0] = -1.5f;
    save_checkpoint(state, dir / "a.ckpt");
    const auto loaded = load_checkpoint<float>(dir / "a.ckpt");
    EXPECT_EQ(loaded.model.params, state.model.params);
    EXPECT_EQ(loaded.adam, state.adam);
    EXPECT_EQ(loaded.schedule, state.schedule);
    EXPECT_EQ(loaded.rng, state.rng);
    EXPECT_EQ(loaded.config, state.config);
    save_checkpoint(loaded, dir / "b.ckpt");
    EXPECT_EQ(read_file_bytes(dir / "a.ckpt"), read_file_bytes(dir / "b.ckpt"));
    EXPECT_EQ(checkpoint_precision(dir / "a.ckpt"), Precision::F32);
}

TEST(Checkpoint, InfiniteBestRoundTrips)
{
    TempDir dir("ckpt-inf");
    const auto state = fresh_state<double>(tiny_run(dir.path(), dir.path(), 1));
    const auto back = decode_checkpoint<double>(encode_checkpoint(state));
    EXPECT_TRUE(std::isinf(back.schedule.best));
}

TEST(Checkpoint, CorruptInputsAreRejected)
{
    TempDir dir("ckpt-bad");
    const auto bytes = encode_checkpoint(fresh_state<float>(tiny_run(dir.path(), dir.path(), 1)));
    EXPECT_THROW(decode_checkpoint<float>(bytes.substr(0, bytes.size() - 1)), ParseError);
    EXPECT_THROW(decode_checkpoint<float>(bytes.substr(0, 40)), ParseError);
    EXPECT_THROW(decode_checkpoint<float>(bytes.substr(0, 10)), ParseError);
    EXPECT_THROW(decode_checkpoint<double>(bytes), ParseError);
    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint<float>(wrong_magic), ParseError);
    std::string wrong_version = bytes;
    const auto pos = wrong_version.find("\"format_version\":1");
    ASSERT_NE(pos, std::string::npos);
    wrong_version[pos + 17] = '9';
    EXPECT_THROW(decode_checkpoint<float>(wrong_version), ParseError);
    std::string wrong_shape = bytes;
    const auto s = wrong_shape.find("\"shape\":[48,16]");
    ASSERT_NE(s, std::string::npos);
    wrong_shape.replace(s, 15, "\"shape\":[16,48]");
    EXPECT_THROW(decode_checkpoint<float>(wrong_shape), ParseError);
    EXPECT_THROW(load_checkpoint<float>(dir / "missing.ckpt"), IoError);
}

TEST(Training, ResumeMatchesUninterruptedRun)
{
    TempDir dir("resume");
    synth(dir / "data");
    const RunConfig full_cfg = tiny_run(dir / "data", dir / "full", 6);
    auto full = fresh_state<float>(full_cfg);
    const auto full_logs = train(full);

    RunConfig part_cfg = tiny_run(dir / "data", dir / "part", 3);
    auto part = fresh_state<float>(part_cfg);
    train(part);
    auto resumed = load_checkpoint<float>(dir / "part" / "epoch_0003.ckpt");
    resumed.config.train.epochs = 6;
    const auto tail = train(resumed);
    ASSERT_EQ(tail.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(format_epoch_log(tail[i]), format_epoch_log(full_logs[i + 3]));
    EXPECT_EQ(resumed.model.params, full.model.params);
    EXPECT_EQ(resumed.adam, full.adam);
    const auto full_log = read_file_bytes(dir / "full" / "train_log.csv");
    EXPECT_EQ(read_file_bytes(dir / "part" / "train_log.csv"), full_log);
}

TEST(Training, LogLayoutAndCheckpoints)
{
    TempDir dir("layout");
    synth(dir / "data");
    auto state = fresh_state<float>(tiny_run(dir / "data", dir / "out", 2));
    train(state);
    std::istringstream log(read_file_bytes(dir / "out" / "train_log.csv"));
    std::string header, line;
    std::getline(log, header);
    EXPECT_EQ(header, "epoch,train_loss,val_loss,val_acc,lr");
    std::getline(log, line);
    EXPECT_EQ(line.substr(0, 2), "1,");
    for (const char* f : {"epoch_0000.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt", "last.ckpt"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
    }
}

TEST(Training, NonFiniteLossNamesEpochAndBatch)
{
    TempDir dir("nan");
    synth(dir / "data");
    auto state = fresh_state<float>(tiny_run(dir / "data", dir / "out", 1));
    state.model.params.get_mutable("head/svm2_b")[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(state);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
    }
}

// --- CLI ---------------------------------------------------------------------

TEST(Cli, UsageErrorsExitOne)
{
    TempDir dir("cli-usage");
    EXPECT_EQ(run_cli("", dir).code, 1);
    EXPECT_EQ(run_cli("bogus", dir).code, 1);
    EXPECT_EQ(run_cli("train", dir).code, 1);
    EXPECT_EQ(run_cli("train --config " + (dir / "none.json").string(), dir).code, 1);
    std::ofstream(dir / "bad.json") << R"({"train":{"epochz":1}})";
    const auto r = run_cli("train --config " + (dir / "bad.json").string(), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("epochz"), std::string::npos) << r.err;
    EXPECT_EQ(run_cli("gradcheck --preset vit-b32", dir).code, 1);
}

TEST(Cli, SynthTrainEvalPredict)
{
    TempDir dir("cli");
    ASSERT_EQ(run_cli("synth --out-dir " + (dir / "data").string() + " --per-class 4 --seed 3 --size 16", dir).code, 0);
    ASSERT_TRUE(std::filesystem::exists(dir / "data" / "manifest.csv"));
    const auto data_before = read_file_bytes(dir / "data" / "manifest.csv");

    // epochs = 0: initial checkpoint plus a header-only log.
    write_config(dir / "zero.json", tiny_run(dir / "data", dir / "zero", 0));
    ASSERT_EQ(run_cli("train --config " + (dir / "zero.json").string(), dir).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "zero" / "epoch_0000.ckpt"));
    EXPECT_EQ(read_file_bytes(dir / "zero" / "train_log.csv"), "epoch,train_loss,val_loss,val_acc,lr\n");

    write_config(dir / "a.json", tiny_run(dir / "data", dir / "a", 3));
    write_config(dir / "b.json", tiny_run(dir / "data", dir / "b", 3));
    ASSERT_EQ(run_cli("train --config " + (dir / "a.json").string(), dir).code, 0);
    ASSERT_EQ(run_cli("train --config " + (dir / "b.json").string(), dir).code, 0);
    EXPECT_EQ(read_file_bytes(dir / "a" / "train_log.csv"), read_file_bytes(dir / "b" / "train_log.csv"));
    const auto ca = load_checkpoint<float>(dir / "a" / "last.ckpt");
    const auto cb = load_checkpoint<float>(dir / "b" / "last.ckpt");
    EXPECT_EQ(ca.model.params, cb.model.params);
    EXPECT_EQ(ca.adam, cb.adam);
    EXPECT_EQ(ca.rng, cb.rng);

    const std::string ckpt = (dir / "a" / "last.ckpt").string();
    const std::string manifest = (dir / "data" / "manifest.csv").string();
    const auto e1 = run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest, dir);
    const auto e2 = run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest, dir);
    ASSERT_EQ(e1.code, 0) << e1.err;
    EXPECT_EQ(e1.out, e2.out);
    const auto report = report_from_json(nlohmann::json::parse(e1.out));
    EXPECT_EQ(report.samples, 16u);
    EXPECT_EQ(report.model, "tiny");

    ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest + " --format text --out " +
                          (dir / "r.txt").string(), dir).code, 0);
    EXPECT_NE(read_file_bytes(dir / "r.txt").find("accuracy: "), std::string::npos);
    EXPECT_EQ(run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest + " --format xml", dir).code, 1);

    const std::string image = (dir / "data" / "class2_0.png").string();
    const auto p1 = run_cli("predict --checkpoint " + ckpt + " --image " + image, dir);
    const auto p2 = run_cli("predict --checkpoint " + ckpt + " --image " + image, dir);
    ASSERT_EQ(p1.code, 0) << p1.err;
    EXPECT_EQ(p1.out, p2.out);
    const auto pj = nlohmann::json::parse(p1.out);
    double total = 0.0;
    for (double v : pj.at("probabilities")) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_EQ(pj.at("name").get<std::string>(), class_names()[pj.at("class").get<std::size_t>()]);

    // Resume continues the log from the epoch-2 checkpoint.
    write_config(dir / "r.json", tiny_run(dir / "data", dir / "a", 4));
    ASSERT_EQ(run_cli("train --config " + (dir / "r.json").string() + " --resume " +
                          (dir / "a" / "epoch_0003.ckpt").string(), dir).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / "epoch_0004.ckpt"));

    EXPECT_EQ(read_file_bytes(dir / "data" / "manifest.csv"), data_before);
}

TEST(Cli, RuntimeErrorsExitTwo)
{
    TempDir dir("cli-err");
    synth(dir / "data");
    write_config(dir / "a.json", tiny_run(dir / "data", dir / "a", 0));
    ASSERT_EQ(run_cli("train --config " + (dir / "a.json").string(), dir).code, 0);
    const std::string ckpt = (dir / "a" / "last.ckpt").string();

    std::ofstream(dir / "empty.csv") << "path,label\n";
    const auto empty = run_cli("eval --checkpoint " + ckpt + " --manifest " + (dir / "empty.csv").string(), dir);
    EXPECT_EQ(empty.code, 2);
    EXPECT_TRUE(empty.out.empty());

    const auto missing = run_cli("predict --checkpoint " + ckpt + " --image " + (dir / "nope.png").string(), dir);
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("nope.png"), std::string::npos);

    const auto bytes = read_file_bytes(ckpt);
    write_file_bytes(dir / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
    EXPECT_EQ(run_cli("predict --checkpoint " + (dir / "trunc.ckpt").string() + " --image " +
                          (dir / "data" / "class0_0.png").string(), dir).code, 2);
}

TEST(Cli, GradcheckCorruptionFailsNamingParameter)
{
    TempDir dir("cli-grad");
    const auto r = run_cli("gradcheck --corrupt head/svm1_w", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("FAIL svm-hinge/probability"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("worst=head/svm1_w"), std::string::npos) << r.out;
    // The dense head has no such parameter, so its two checks still pass.
    EXPECT_NE(r.out.find("PASS dense-softmax/margin"), std::string::npos) << r.out;
}
