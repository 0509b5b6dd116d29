#include "doctest.h"
#include "helpers.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oneframe/checkpoint.hpp"
#include "oneframe/error.hpp"
#include "oneframe/fusion.hpp"
#include "oneframe/training.hpp"

using namespace oneframe;
namespace fs = std::filesystem;

namespace {

ScheduleConfig schedule(int warmup, int total) {
  ScheduleConfig s;
  s.peak_lr = 1e-4;
  s.min_lr = 1e-6;
  s.warmup_steps = warmup;
  s.total_steps = total;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oneframe_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("learning-rate schedule examples") {
    const ScheduleConfig s = schedule(100, 1000);
    CHECK(lr_at_step(0, s) == 0.0);
    CHECK(lr_at_step(100, s) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at_step(1000, s) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(lr_at_step(5000, s) == 1e-6);
    CHECK(std::abs(lr_at_step(550, s) - (1e-6 + 0.495e-4)) < 1e-12);
    CHECK_THROWS_AS(lr_at_step(-1, s), InputError);
  }

  TEST_CASE("schedule is continuous and non-increasing after warmup") {
    const ScheduleConfig s = schedule(37, 911);
    for (int step = 0; step < 911; ++step) {
      const double a = lr_at_step(step, s);
      const double b = lr_at_step(step + 1, s);
      CHECK(std::abs(b - a) <= s.peak_lr / 37.0 + 1e-15);
      if (step >= 37) CHECK(b <= a);
    }
  }

  TEST_CASE("schedule invariants are validated") {
    CHECK_THROWS_AS(schedule(10, 5).validate(), ConfigError);
    ScheduleConfig s = schedule(0, 5);
    s.min_lr = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("decoupled weight decay shrinks a zero-gradient parameter") {
    ParameterStore store;
    store.add("w", Mat::Constant(2, 2, 3.0), true);
    store.add("b", Mat::Constant(1, 2, 3.0), false);
    ScheduleConfig s = schedule(0, 10);
    s.weight_decay = 0.02;
    AdamW opt(s);
    for (int step = 0; step < 5; ++step) {
      store.zero_grad();
      opt.step(store, 0.5);
    }
    CHECK(store.get("w").value(0, 0) == doctest::Approx(3.0 * std::pow(1.0 - 0.5 * 0.02, 5)).epsilon(1e-12));
    CHECK(store.get("b").value(0, 0) == 3.0);
  }

  TEST_CASE("adam update matches the bias-corrected formula") {
    ParameterStore store;
    store.add("w", Mat::Constant(1, 1, 1.0), false);
    ScheduleConfig s = schedule(0, 10);
    AdamW opt(s);
    store.get("w").grad = Mat::Constant(1, 1, 0.3);
    opt.step(store, 0.1);
    CHECK(store.get("w").value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("learning-rate multipliers pick the longest prefix") {
    AdamW opt(schedule(0, 10), {{"temporal", 10.0}, {"temporal.pos", 3.0}});
    CHECK(opt.scale_for("temporal.pos") == 3.0);
    CHECK(opt.scale_for("temporal.layers.0.attn.q.weight") == 10.0);
    CHECK(opt.scale_for("vision.pos") == 1.0);
  }

  TEST_CASE("objective names") {
    CHECK(parse_objective("retrieval-finetune") == Objective::retrieval_finetune);
    CHECK(expand_objectives({Objective::retrieval_finetune}) == std::set<Objective>{Objective::vtc, Objective::vtm});
    CHECK_THROWS_AS(parse_objective("itc"), ConfigError);
  }

  TEST_CASE("overfit: 8 video-text pairs, 200 steps") {
    Dataset data = generate_static_corpus(8, 2, 1, 16);
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    ModelConfig c = testing::small_config(tok.vocab_size());
    // Matching needs some fusion capacity to leave its constant-prediction plateau.
    c.hidden_dim = 32;
    c.multimodal_layers = 2;
    Model m(c, 2);
    TrainOptions o;
    o.epochs = 200;
    o.batch_size = 8;
    o.peak_lr = 3e-3;
    o.warmup_epochs = 10;
    o.augment = false;
    o.seed = 3;
    const TrainResult r = run_training(m, data, tok, o);
    REQUIRE(r.log.size() == 200);
    CHECK(r.log.back().loss_total < 0.1 * r.log.front().loss_total);
  }

  TEST_CASE("same seed gives identical loss curves and checkpoints") {
    Dataset data = generate_static_corpus(12, 4, 4, 16);
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    for (const auto& dir : {a, b}) {
      Model m(testing::small_config(tok.vocab_size()), 5);
      TrainOptions o;
      o.epochs = 2;
      o.batch_size = 4;
      o.seed = 6;
      o.run_dir = dir;
      const TrainResult r = run_training(m, data, tok, o);
      CHECK(r.checkpoints.size() == 2);
      CHECK(fs::exists(dir / "ckpt_ep1"));
      CHECK(fs::exists(dir / "ckpt_ep2"));
    }
    CHECK(read_file(a / "metrics.jsonl") == read_file(b / "metrics.jsonl"));
    CHECK(read_file(a / "ckpt_ep2") == read_file(b / "ckpt_ep2"));
    std::ifstream log(a / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      for (const char* key : {"step", "lr", "loss_total", "loss_vtc", "loss_mlm", "loss_vtm"}) CHECK(j.contains(key));
      ++lines;
    }
    CHECK(lines == 6);
  }

  TEST_CASE("every frame index is sampled across training steps") {
    std::set<int> seen;
    for (int step = 0; step < 200; ++step) {
      Rng rng = make_rng(8, "frames", static_cast<std::uint64_t>(step));
      for (int v = 0; v < 4; ++v) seen.insert(sample_train_frame(8, rng));
    }
    CHECK(seen.size() == 8);
  }

  TEST_CASE("divergence aborts with a diagnostic record") {
    Dataset data = generate_static_corpus(4, 1, 9, 16);
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    Model m(testing::small_config(tok.vocab_size()), 10);
    m.params().get("mm.itm.weight").value.setConstant(std::numeric_limits<double>::quiet_NaN());
    const fs::path dir = scratch_dir("diverge");
    TrainOptions o;
    o.batch_size = 4;
    o.run_dir = dir;
    CHECK_THROWS_AS(run_training(m, data, tok, o), DivergenceError);
    std::ifstream log(dir / "metrics.jsonl");
    std::string line;
    REQUIRE(std::getline(log, line));
    CHECK(nlohmann::json::parse(line).contains("error"));
  }

  TEST_CASE("training preconditions") {
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    Model m(testing::small_config(tok.vocab_size()), 11);
    TrainOptions o;
    CHECK_THROWS_AS(run_training(m, Dataset{}, tok, o), InputError);
    o.objectives = {Objective::qa};
    CHECK_THROWS_AS(run_training(m, generate_static_corpus(4, 1, 1, 16), tok, o), ConfigError);
  }

  TEST_CASE("checkpoint round trip including temporal and decoder weights") {
    Tokenizer tok = Tokenizer::from_texts(synthetic_vocabulary());
    Model m(testing::small_config(tok.vocab_size()), 12);
    m.enable_temporal(13);
    m.enable_decoder();
    m.params().get("temporal.pos").value.setConstant(0.25);
    const fs::path dir = scratch_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", m, tok);
    const LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
    CHECK(nlohmann::json(back.model.config()) == nlohmann::json(m.config()));
    CHECK(back.tokenizer.words() == tok.words());
    CHECK(back.model.has_temporal());
    CHECK(back.model.has_decoder());
    REQUIRE(back.model.params().all().size() == m.params().all().size());
    for (const auto& [name, p] : m.params().all()) {
      CHECK(back.model.params().get(name).value == p.value);
      CHECK(back.model.params().get(name).decay == p.decay);
    }
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
    const std::string bytes = read_file(dir / "m.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  }
}
