#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "cslb/checkpoint.hpp"
#include "cslb/config.hpp"
#include "cslb/data.hpp"
#include "cslb/model.hpp"
#include "cslb/optim.hpp"
#include "cslb/train.hpp"
#include "helpers.hpp"

using namespace cslb;
using cslb::test::bitwise_equal;
using cslb::test::random_ids;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cslb_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

RunConfig small_run_config() {
  RunConfig c;
  c.model.n_layers = 2;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ff = 24;
  c.model.vocab_size = 19;
  c.model.max_seq_len = 32;
  c.model.seed = 4;
  c.train.steps = 6;
  c.train.batch_size = 2;
  c.train.seq_len = 8;
  c.train.warmup_steps = 1;
  c.train.eval_every = 3;
  c.train.eval_windows = 2;
  return c;
}

}  // namespace

TEST_SUITE("persistence") {

TEST_CASE("checkpoint: load-save round trip is byte identical") {
  TempDir tmp;
  RunConfig cfg = small_run_config();
  TransformerModel<float> model(cfg.model);
  AdamW<float> opt(cfg.train.adamw(), model.params());

  // Give the state some texture first.
  std::vector<std::int32_t> corpus;
  for (int i = 0; i < 500; ++i) corpus.push_back(i % 19);
  auto result = train(model, opt, cfg.train, corpus);
  REQUIRE_FALSE(result.aborted);

  const std::string p1 = tmp.file("a.cslb"), p2 = tmp.file("b.cslb");
  save_checkpoint(p1, model, &opt, result.completed_steps,
                  result.batcher_rng_state, run_config_to_json(cfg));

  TransformerModel<float> loaded(cfg.model);
  AdamW<float> opt2(cfg.train.adamw(), loaded.params());
  CheckpointInfo info = load_checkpoint(p1, loaded, &opt2);
  CHECK(info.step == result.completed_steps);
  CHECK(info.rng_state == result.batcher_rng_state);
  CHECK(opt2.step() == opt.step());

  save_checkpoint(p2, loaded, &opt2, info.step, info.rng_state, info.config);
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("checkpoint: forward passes are bit identical after reload") {
  TempDir tmp;
  RunConfig cfg = small_run_config();
  TransformerModel<float> model(cfg.model);
  // Perturb away from init so the test is not vacuous.
  std::mt19937_64 rng(8);
  for (auto& p : model.params())
    for (auto& v : *p.data) v += 1e-3f * static_cast<float>(rng() % 7);

  const std::string path = tmp.file("m.cslb");
  save_checkpoint(path, model, static_cast<AdamW<float>*>(nullptr), 0, "rng",
                  run_config_to_json(cfg));
  TransformerModel<float> loaded(cfg.model);
  load_checkpoint(path, loaded, static_cast<AdamW<float>*>(nullptr));

  auto ids = random_ids(9, cfg.model.vocab_size, rng);
  Tape<float> t1, t2;
  auto f1 = model.forward(t1, model.bind(t1, false), ids, 1, 9);
  auto f2 = loaded.forward(t2, loaded.bind(t2, false), ids, 1, 9);
  CHECK(bitwise_equal<float>(f1.logits.values(), f2.logits.values()));
}

TEST_CASE("checkpoint: corruption and mismatch diagnostics") {
  TempDir tmp;
  RunConfig cfg = small_run_config();
  TransformerModel<float> model(cfg.model);
  const std::string path = tmp.file("m.cslb");
  save_checkpoint(path, model, static_cast<AdamW<float>*>(nullptr), 3, "state",
                  run_config_to_json(cfg));

  {  // bad magic
    std::string bytes = read_file(path);
    bytes[0] = 'X';
    write_file(tmp.file("bad.cslb"), bytes);
    TransformerModel<float> m2(cfg.model);
    CHECK_THROWS_AS(
        load_checkpoint(tmp.file("bad.cslb"), m2,
                        static_cast<AdamW<float>*>(nullptr)),
        IoError);
  }
  {  // truncated payload
    std::string bytes = read_file(path);
    bytes.resize(bytes.size() / 2);
    write_file(tmp.file("trunc.cslb"), bytes);
    TransformerModel<float> m2(cfg.model);
    CHECK_THROWS_AS(
        load_checkpoint(tmp.file("trunc.cslb"), m2,
                        static_cast<AdamW<float>*>(nullptr)),
        IoError);
  }
  {  // dtype mismatch
    TransformerModel<double> m2(cfg.model);
    CHECK_THROWS_WITH_AS(
        load_checkpoint(path, m2, static_cast<AdamW<double>*>(nullptr)),
        doctest::Contains("f32"), ConfigError);
  }
  {  // missing tensor: a gated model expects gate_theta
    RunConfig gated = cfg;
    gated.model.attenuation = AttenuationSpec::gated();
    TransformerModel<float> m2(gated.model);
    CHECK_THROWS_WITH_AS(
        load_checkpoint(path, m2, static_cast<AdamW<float>*>(nullptr)),
        doctest::Contains("gate_theta"), ConfigError);
  }
  {  // shape mismatch names the tensor
    RunConfig wider = cfg;
    wider.model.d_ff = 32;
    TransformerModel<float> m2(wider.model);
    CHECK_THROWS_WITH_AS(
        load_checkpoint(path, m2, static_cast<AdamW<float>*>(nullptr)),
        doctest::Contains("layer0.w1"), ConfigError);
  }
  {  // optimizer requested but absent
    TransformerModel<float> m2(cfg.model);
    AdamW<float> opt(cfg.train.adamw(), m2.params());
    CHECK_THROWS_AS(load_checkpoint(path, m2, &opt), ConfigError);
  }
}

TEST_CASE("config: echo re-parses to an equal config") {
  RunConfig cfg = small_run_config();
  cfg.model.attenuation = AttenuationSpec::fixed_cut(2, 1, 0.25);
  cfg.train.corpus_path = "data/corpus.txt";
  cfg.lens.k = 3;
  cfg.lens.exclude_position0 = true;

  auto echo = run_config_to_json(cfg);
  RunConfig back = parse_run_config(echo);
  CHECK(config_equal(cfg, back));
  CHECK(run_config_to_json(back) == echo);

  // Gated echo round trip.
  cfg.model.attenuation = AttenuationSpec::gated(0.8, 0.05);
  back = parse_run_config(run_config_to_json(cfg));
  CHECK(config_equal(cfg, back));
  CHECK(back.model.attenuation.cut_strength == 0.8);
}

TEST_CASE("config: unknown keys and malformed files are rejected") {
  CHECK_THROWS_WITH_AS(
      parse_run_config(nlohmann::json::parse(R"({"modle": {}})")),
      doctest::Contains("modle"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_run_config(
          nlohmann::json::parse(R"({"model": {"n_layres": 3}})")),
      doctest::Contains("model.n_layres"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_run_config(
          nlohmann::json::parse(R"({"train": {"steps": "ten"}})")),
      doctest::Contains("train.steps"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(
                      R"({"attenuation": {"mode": "soft"}})")),
                  ConfigError);

  TempDir tmp;
  write_file(tmp.file("bad.json"), "{ not json ");
  CHECK_THROWS_WITH_AS(parse_run_config_file(tmp.file("bad.json")),
                       doctest::Contains("bad.json"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_file(tmp.file("absent.json")), IoError);
}

TEST_CASE("config: fixed-cut sugar expands into explicit alphas") {
  auto j = nlohmann::json::parse(R"({
    "model": {"n_layers": 4, "d_model": 16, "n_heads": 2, "d_ff": 24,
              "vocab_size": 19, "max_seq_len": 32},
    "attenuation": {"mode": "fixed", "cut_layer": 2, "alpha": 0.1}
  })");
  RunConfig cfg = parse_run_config(j);
  REQUIRE(cfg.model.attenuation.fixed_alphas.size() == 4);
  CHECK(cfg.model.attenuation.fixed_alphas[2] == 0.1);
  CHECK(cfg.model.attenuation.fixed_alphas[0] == 1.0);
  auto echo = run_config_to_json(cfg);
  CHECK(echo["attenuation"].contains("fixed_alphas"));
  CHECK_FALSE(echo["attenuation"].contains("cut_layer"));

  j["attenuation"]["fixed_alphas"] = {1.0, 1.0, 0.1, 1.0};
  CHECK_THROWS_AS(parse_run_config(j), ConfigError);  // both forms given
}

}  // TEST_SUITE
