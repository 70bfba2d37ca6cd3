#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "logpeft/checkpoint.hpp"
#include "logpeft/config.hpp"

using namespace logpeft;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.model_dim = 8;
    cfg.model_heads = 2;
    cfg.model_layers = 1;
    cfg.model_max_len = 8;
    cfg.vocab_keys = 6;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("defaults carry the documented training recipe", "[config]") {
    RunConfig cfg = default_config();
    CHECK(cfg.epochs == 3);
    CHECK(cfg.batch_size == 2);
    CHECK(cfg.lr == 5e-5);
    CHECK(cfg.lora_rank == 2);
    CHECK(cfg.lora_alpha == 16.0);
    CHECK(cfg.lora_dropout == 0.05);
    CHECK(cfg.lora_targets == "k_proj");
    CHECK(cfg.model_dim == 64);
    CHECK(cfg.model_heads == 4);
    CHECK(cfg.model_layers == 2);
    CHECK(cfg.model_max_len == 128);
    CHECK(cfg.depth == 4);
    CHECK(cfg.sim_threshold == 0.5);
    CHECK(cfg.max_children == 100);
    CHECK(cfg.window_size == 64);
    CHECK(cfg.stride == 64);
    CHECK(cfg.train_frac == 0.8);
    CHECK(cfg.val_frac == 0.1);
}

TEST_CASE("set, get and unknown keys", "[config]") {
    RunConfig cfg;
    cfg.set("epochs", "9");
    CHECK(cfg.epochs == 9);
    cfg.set("lr", "0.001");
    CHECK(cfg.lr == 0.001);
    cfg.set("lora_targets", "q_proj,v_proj");
    CHECK(cfg.get("lora_targets") == "q_proj,v_proj");
    cfg.set("lora_alpha_over_rank", "true");
    CHECK(cfg.lora_alpha_over_rank);

    CHECK_THROWS_AS(cfg.set("no_such_key", "1"), ArgumentError);
    CHECK_THROWS_AS(cfg.set("epochs", "banana"), ArgumentError);
    CHECK_THROWS_AS(cfg.get("no_such_key"), ArgumentError);
}

TEST_CASE("config files parse with comments and override defaults", "[config]") {
    std::istringstream file(
        "# training recipe\n"
        "\n"
        "epochs = 5\n"
        "method = adapter\n"
        "lora_targets = q_proj,k_proj\n");
    RunConfig cfg;
    cfg.load(file);
    CHECK(cfg.epochs == 5);
    CHECK(cfg.method == "adapter");
    CHECK(cfg.batch_size == 2);  // untouched default

    // a later explicit set models a command-line override
    cfg.set("epochs", "7");
    CHECK(cfg.epochs == 7);

    std::istringstream bad("epochs 5\n");
    RunConfig cfg2;
    CHECK_THROWS_AS(cfg2.load(bad), ArgumentError);
}

TEST_CASE("serialization round-trips exactly", "[config]") {
    RunConfig cfg;
    cfg.lr = 5e-5;
    cfg.sim_threshold = 0.35;
    cfg.logs = "/tmp/some file.log";
    cfg.seed = 123456789012345ULL;
    const std::string once = cfg.serialize();

    RunConfig reloaded;
    std::istringstream is(once);
    reloaded.load(is);
    CHECK(reloaded.serialize() == once);
    CHECK(reloaded.lr == cfg.lr);
    CHECK(reloaded.logs == cfg.logs);
    CHECK(reloaded.seed == cfg.seed);
}

TEST_CASE("typed views map the flat fields", "[config]") {
    RunConfig cfg = tiny_run_config();
    const TransformerConfig mc = cfg.transformer_config();
    CHECK(mc.vocab_size == 7);
    CHECK(mc.pad_id == 6);
    CHECK(mc.dim == 8);

    cfg.lora_targets = "x_proj";
    CHECK_THROWS_AS(cfg.lora_config(), UnknownTarget);
    cfg.lora_targets = "k_proj,v_proj";
    CHECK(cfg.lora_config().targets.size() == 2);

    cfg.method = "banana";
    CHECK_THROWS_AS(cfg.train_config(), ArgumentError);
}

TEST_CASE("checkpoints round-trip bit-exactly", "[config]") {
    RunConfig cfg = tiny_run_config();
    ModelBundle bundle = ModelBundle::make_lora(cfg.transformer_config(), cfg.lora_config(),
                                                cfg.seed);
    // make the state non-trivial
    auto rng = named_stream(131, "ckpt");
    for (LoraSite& s : bundle.lora->sites())
        for (LoraPair& p : s.heads)
            for (std::size_t i = 0; i < p.b.size(); ++i)
                p.b.data()[i] = uniform_double(rng) - 0.5;

    TempFile f1("ckpt_roundtrip.bin");
    TempFile f2("ckpt_roundtrip2.bin");
    save_checkpoint(bundle, cfg, f1.path);
    LoadedCheckpoint loaded = load_checkpoint(f1.path);
    save_checkpoint(loaded.bundle, loaded.config, f2.path);
    CHECK(slurp(f1.path) == slurp(f2.path));  // save -> load -> save is byte-identical

    std::vector<int> mask(5, 1);
    for (int round = 0; round < 10; ++round) {
        std::vector<int> ids;
        for (int t = 0; t < 5; ++t) ids.push_back(static_cast<int>(uniform_below(rng, 6)));
        Tensor a = bundle.logits(ids, mask);
        Tensor b = loaded.bundle.logits(ids, mask);
        CHECK(a.at(0) == b.at(0));
        CHECK(a.at(1) == b.at(1));
    }
}

TEST_CASE("adapter checkpoints restore the head", "[config]") {
    RunConfig cfg = tiny_run_config();
    cfg.method = "adapter";
    ModelBundle bundle = ModelBundle::make_adapter(cfg.transformer_config(), cfg.seed);
    TempFile f("ckpt_adapter.bin");
    save_checkpoint(bundle, cfg, f.path);
    LoadedCheckpoint loaded = load_checkpoint(f.path);
    CHECK(loaded.bundle.method == PeftMethod::Adapter);

    std::vector<int> ids = {0, 1, 2};
    std::vector<int> mask = {1, 1, 1};
    Tensor a = bundle.logits(ids, mask);
    Tensor b = loaded.bundle.logits(ids, mask);
    CHECK(a.at(0) == b.at(0));
    CHECK(a.at(1) == b.at(1));
}

TEST_CASE("corrupt and mismatched checkpoints are rejected", "[config]") {
    RunConfig cfg = tiny_run_config();
    ModelBundle bundle = ModelBundle::make_lora(cfg.transformer_config(), cfg.lora_config(),
                                                cfg.seed);
    TempFile f("ckpt_corrupt.bin");
    save_checkpoint(bundle, cfg, f.path);
    const std::string full = slurp(f.path);

    {
        std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
        os.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(f.path), CorruptCheckpoint);

    {
        std::string bad_magic = full;
        bad_magic[0] = 'X';
        std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
        os.write(bad_magic.data(), static_cast<std::streamsize>(bad_magic.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(f.path), CorruptCheckpoint);

    {
        std::string bad_version = full;
        bad_version[4] = 9;  // little-endian u32 version field
        std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
        os.write(bad_version.data(), static_cast<std::streamsize>(bad_version.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(f.path), VersionMismatch);

    CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), IoError);
}
