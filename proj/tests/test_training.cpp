#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "istt/training.hpp"
#include "reference_decoder.hpp"

using namespace istt;
using namespace istt::testing;
namespace fs = std::filesystem;

namespace {

constexpr int kC = Vocabulary::kNumSpecials;  // first content id

ToySpec train_spec(std::uint64_t seed) {
  ToySpec spec;
  spec.vocab_size = 8;
  spec.min_len = 2;
  spec.max_len = 5;
  spec.frames_per_token = 3;
  spec.feature_dim = 20;
  spec.noise_std = 0.05;
  spec.rule = TranslationRule::kMap;
  spec.seed = seed;
  return spec;
}

ModelConfig train_cfg() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.dropout = 0.0;
  cfg.lambda_cross = 0.3;
  cfg.wait_k = 0;
  cfg.max_positions = 64;
  cfg.vocab_size = 0;  // from corpus
  cfg.feature_dim = 80;  // 20 * num_stack(4)
  return cfg;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("prepare_targets") {
  SUBCASE("k=0 construction") {
    // x=[a,b], y=[c] with a,b,c content ids
    PreparedTargets t = prepare_targets({kC + 0, kC + 1}, {kC + 2}, 0);
    CHECK(t.rec_in == std::vector<int>{Vocabulary::kRecog, kC + 0, kC + 1});
    CHECK(t.rec_tgt == std::vector<int>{kC + 0, kC + 1, Vocabulary::kEos});
    CHECK(t.tr_in == std::vector<int>{Vocabulary::kTrans, kC + 2, Vocabulary::kPad});
    CHECK(t.tr_tgt == std::vector<int>{kC + 2, Vocabulary::kEos, Vocabulary::kPad});
    CHECK(t.rec_loss_mask == std::vector<std::uint8_t>{1, 1, 1});
    CHECK(t.tr_loss_mask == std::vector<std::uint8_t>{1, 1, 0});
  }
  SUBCASE("k=3 prepends three delay labels") {
    PreparedTargets t = prepare_targets({kC + 0}, {kC + 2, kC + 3}, 3);
    CHECK(t.tr_in == std::vector<int>{Vocabulary::kTrans, Vocabulary::kDelay, Vocabulary::kDelay,
                                      Vocabulary::kDelay, kC + 2, kC + 3});
    CHECK(t.tr_tgt == std::vector<int>{Vocabulary::kDelay, Vocabulary::kDelay, Vocabulary::kDelay,
                                       kC + 2, kC + 3, Vocabulary::kEos});
  }
  SUBCASE("k=2 loss mask zeroes delay and pad target slots") {
    PreparedTargets t = prepare_targets({kC + 0, kC + 1, kC + 2, kC + 3, kC + 4}, {kC + 5}, 2);
    // tr_in: <trans> <delay> <delay> y0 -> length 4 padded to 6
    CHECK(t.length() == 6);
    CHECK(t.tr_loss_mask == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0});
    CHECK(t.rec_loss_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1});
  }
  SUBCASE("rejects empty or special-bearing sequences") {
    CHECK_THROWS_AS(prepare_targets({}, {kC}, 0), InputError);
    CHECK_THROWS_AS(prepare_targets({kC}, {}, 0), InputError);
    CHECK_THROWS_AS(prepare_targets({Vocabulary::kEos}, {kC}, 0), InputError);
  }
}

TEST_CASE("joint loss values") {
  SUBCASE("uniform logits cost ln(V) per unmasked position") {
    const int vocab = 11;
    Tape tape;
    DualLogits logits;
    logits.rec = tape.constant(Tensor({3, vocab}));
    logits.tr = tape.constant(Tensor({3, vocab}));
    PreparedTargets t;
    t.rec_in = {Vocabulary::kRecog, kC, kC};
    t.rec_tgt = {kC, kC, Vocabulary::kEos};
    t.rec_loss_mask = {1, 1, 1};
    t.tr_in = {Vocabulary::kTrans, kC, Vocabulary::kPad};
    t.tr_tgt = {kC, Vocabulary::kEos, Vocabulary::kPad};
    t.tr_loss_mask = {1, 1, 0};
    UttLoss ul = utterance_loss(tape, logits, t);
    JointLoss jl = joint_loss(tape, {ul});
    CHECK(tape.value(jl.loss).item() == doctest::Approx(std::log(vocab)).epsilon(1e-12));
    CHECK(jl.rec_count == 3);
    CHECK(jl.tr_count == 2);
  }
  SUBCASE("confident correct logits drive the loss toward zero") {
    const int vocab = 7;
    Tensor sharp({2, vocab});
    sharp.fill(-50.0);
    sharp(0, kC) = 50.0;
    sharp(1, Vocabulary::kEos) = 50.0;
    Tape tape;
    DualLogits logits;
    logits.rec = tape.constant(sharp);
    logits.tr = tape.constant(sharp);
    PreparedTargets t;
    t.rec_tgt = {kC, Vocabulary::kEos};
    t.rec_loss_mask = {1, 1};
    t.tr_tgt = {kC, Vocabulary::kEos};
    t.tr_loss_mask = {1, 1};
    UttLoss ul = utterance_loss(tape, logits, t);
    JointLoss jl = joint_loss(tape, {ul});
    CHECK(tape.value(jl.loss).item() < 1e-9);
  }
  SUBCASE("joint loss decomposes into stream sums over the shared normalizer") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist;
    Tensor rec({4, 9}), tr({4, 9});
    for (double& v : rec.vec()) v = dist(rng);
    for (double& v : tr.vec()) v = dist(rng);
    Tape tape;
    DualLogits logits{tape.constant(rec), tape.constant(tr)};
    PreparedTargets t;
    t.rec_tgt = {kC, kC + 1, Vocabulary::kEos, Vocabulary::kPad};
    t.rec_loss_mask = {1, 1, 1, 0};
    t.tr_tgt = {Vocabulary::kDelay, kC + 2, Vocabulary::kEos, Vocabulary::kPad};
    t.tr_loss_mask = {0, 1, 1, 0};
    UttLoss ul = utterance_loss(tape, logits, t);
    JointLoss jl = joint_loss(tape, {ul});
    double rec_sum = tape.value(ul.rec_sum).item();
    double tr_sum = tape.value(ul.tr_sum).item();
    CHECK(tape.value(jl.loss).item() ==
          doctest::Approx((rec_sum + tr_sum) / 5.0).epsilon(1e-12));
  }
  SUBCASE("all-masked batch is a contract error") {
    Tape tape;
    DualLogits logits{tape.constant(Tensor({1, 6})), tape.constant(Tensor({1, 6}))};
    PreparedTargets t;
    t.rec_tgt = {Vocabulary::kPad};
    t.rec_loss_mask = {0};
    t.tr_tgt = {Vocabulary::kPad};
    t.tr_loss_mask = {0};
    UttLoss ul = utterance_loss(tape, logits, t);
    CHECK_THROWS_AS(joint_loss(tape, {ul}), ContractError);
  }
}

TEST_CASE("loss gradients vanish exactly on masked target positions") {
  ModelConfig cfg = train_cfg();
  cfg.vocab_size = 10;
  cfg.wait_k = 2;
  ModelParams params = ModelParams::init(cfg, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> dist;
  Tensor feats({4, cfg.feature_dim});
  for (double& v : feats.vec()) v = dist(rng);

  PreparedTargets t = prepare_targets({kC, kC + 1}, {kC + 2}, cfg.wait_k);
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var mem = encode(tape, feats, bound, cfg, params.positional);
  DualLogits logits = dual_forward(tape, mem, t.rec_in, t.tr_in, bound, cfg, params.positional);
  UttLoss ul = utterance_loss(tape, logits, t);
  JointLoss jl = joint_loss(tape, {ul});
  tape.backward(jl.loss);

  const Tensor& g = tape.grad(logits.tr);
  REQUIRE(g.defined());
  for (int i = 0; i < t.length(); ++i) {
    double row = 0.0;
    for (int v = 0; v < cfg.vocab_size; ++v) row += std::abs(g(i, v));
    if (t.tr_loss_mask[static_cast<size_t>(i)])
      CHECK(row > 0.0);
    else
      CHECK(row == 0.0);
  }
}

TEST_CASE("batch loss is invariant to utterance order") {
  Corpus corpus = generate(train_spec(21), 6);
  ModelConfig cfg = train_cfg();
  cfg.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(cfg, 5);

  auto batch_loss = [&](const std::vector<int>& order) {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    std::vector<UttLoss> parts;
    for (int i : order) {
      const Utterance& utt = corpus.utts[static_cast<size_t>(i)];
      Tensor input = prepare_model_input(utt.features, cfg);
      Var mem = encode(tape, input, bound, cfg, params.positional);
      PreparedTargets t = prepare_targets(utt.transcription, utt.translation, cfg.wait_k);
      parts.push_back(utterance_loss(tape, dual_forward(tape, mem, t.rec_in, t.tr_in, bound, cfg,
                                                        params.positional), t));
    }
    return tape.value(joint_loss(tape, parts).loss).item();
  };
  double a = batch_loss({0, 1, 2, 3, 4, 5});
  double b = batch_loss({5, 3, 1, 0, 4, 2});
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("epoch batches are deterministic and cover every utterance") {
  std::vector<int> lengths(37);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> len(4, 30);
  for (int& l : lengths) l = len(rng);

  auto a = epoch_batches(lengths, 8, 42, 3);
  auto b = epoch_batches(lengths, 8, 42, 3);
  CHECK(a == b);
  auto c = epoch_batches(lengths, 8, 42, 4);
  CHECK(a != c);

  std::vector<int> seen;
  for (const auto& batch : a) {
    CHECK(batch.size() <= 8);
    seen.insert(seen.end(), batch.begin(), batch.end());
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < 37; ++i) CHECK(seen[static_cast<size_t>(i)] == i);
}

TEST_CASE("short training run learns and is bit-deterministic") {
  Corpus corpus = generate(train_spec(77), 48);
  ModelConfig cfg = train_cfg();
  TrainConfig tcfg;
  tcfg.steps = 40;
  tcfg.batch_size = 8;
  tcfg.seed = 9;
  tcfg.lr_scale = 2.0;
  tcfg.checkpoint_every = 20;
  tcfg.quiet = true;

  fs::path dir1 = fs::temp_directory_path() / "istt_train_a";
  fs::path dir2 = fs::temp_directory_path() / "istt_train_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  TrainResult r1 = train(corpus, nullptr, cfg, tcfg, dir1);
  TrainResult r2 = train(corpus, nullptr, cfg, tcfg, dir2);

  REQUIRE(r1.loss_history.size() == 40);
  // learnability smoke: the objective moves down
  double head = (r1.loss_history[0] + r1.loss_history[1] + r1.loss_history[2]) / 3.0;
  double tail = (r1.loss_history[37] + r1.loss_history[38] + r1.loss_history[39]) / 3.0;
  CHECK(tail < head);

  // identical seeds give identical checkpoint bytes
  CHECK(file_bytes(r1.final_checkpoint) == file_bytes(r2.final_checkpoint));
  CHECK(fs::exists(dir1 / "metrics.log"));
  CHECK(fs::exists(dir1 / "state_last.bin"));

  // metrics log has one record per step with six fields
  std::ifstream log(dir1 / "metrics.log");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 5);
  }
  CHECK(lines == 40);

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("resume reproduces the uninterrupted trajectory exactly") {
  Corpus corpus = generate(train_spec(31), 24);
  ModelConfig cfg = train_cfg();
  TrainConfig full;
  full.steps = 30;
  full.batch_size = 8;
  full.seed = 11;
  full.checkpoint_every = 15;
  full.quiet = true;

  fs::path dir_full = fs::temp_directory_path() / "istt_resume_full";
  fs::path dir_part = fs::temp_directory_path() / "istt_resume_part";
  fs::remove_all(dir_full);
  fs::remove_all(dir_part);

  TrainResult rf = train(corpus, nullptr, cfg, full, dir_full);

  TrainConfig first_half = full;
  first_half.steps = 15;
  TrainResult rp1 = train(corpus, nullptr, cfg, first_half, dir_part);
  TrainConfig second_half = full;
  second_half.resume = dir_part / "state_last.bin";
  TrainResult rp2 = train(corpus, nullptr, cfg, second_half, dir_part);

  REQUIRE(rp2.loss_history.size() == 15);
  for (size_t i = 0; i < 15; ++i)
    CHECK(rp2.loss_history[i] == doctest::Approx(rf.loss_history[15 + i]).epsilon(1e-9));
  CHECK(file_bytes(rf.final_checkpoint) == file_bytes(rp2.final_checkpoint));

  fs::remove_all(dir_full);
  fs::remove_all(dir_part);
}

TEST_CASE("lambda=0 training matches the multi-task reference step for step") {
  Corpus corpus = generate(train_spec(55), 16);
  ModelConfig cfg = train_cfg();
  cfg.lambda_cross = 0.0;
  TrainConfig tcfg;
  tcfg.steps = 30;
  tcfg.batch_size = 8;
  tcfg.seed = 13;
  tcfg.checkpoint_every = 1000;
  tcfg.quiet = true;

  fs::path dir = fs::temp_directory_path() / "istt_equiv";
  fs::remove_all(dir);
  TrainResult dual = train(corpus, nullptr, cfg, tcfg, dir);
  std::vector<double> reference = reference_multitask_losses(corpus, cfg, tcfg);

  REQUIRE(dual.loss_history.size() == reference.size());
  for (size_t i = 0; i < reference.size(); ++i)
    CHECK(std::abs(dual.loss_history[i] - reference[i]) < 1e-6);
  fs::remove_all(dir);
}

TEST_CASE("dev selection writes a best checkpoint") {
  Corpus corpus = generate(train_spec(91), 24);
  ToySpec dev_spec = train_spec(92);
  Corpus dev = generate(dev_spec, 6);
  ModelConfig cfg = train_cfg();
  TrainConfig tcfg;
  tcfg.steps = 20;
  tcfg.batch_size = 8;
  tcfg.seed = 3;
  tcfg.checkpoint_every = 10;
  tcfg.quiet = true;

  fs::path dir = fs::temp_directory_path() / "istt_dev_sel";
  fs::remove_all(dir);
  TrainResult r = train(corpus, &dev, cfg, tcfg, dir);
  CHECK(fs::exists(r.best_checkpoint));
  CHECK(fs::exists(dir / "dev_metrics.log"));
  fs::remove_all(dir);
}
