#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "hiercap/trainer.hpp"
#include "support.hpp"

using namespace hiercap;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hiercap_trainer_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A 40-scene dataset shared by every case.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data");
    ToySceneConfig c;
    c.train_size = 40;
    c.val_size = 12;
    c.test_size = 12;
    write_dataset(d, generate_dataset(c, 5), c, 1);
    return d;
  }();
  return dir;
}

TrainConfig tiny(const std::string& out) {
  TrainConfig c;
  c.data_dir = dataset();
  c.out_dir = scratch(out);
  c.seed = 3;
  c.embed = 6;
  c.hidden = 8;
  c.att = 5;
  c.object_slots = 10;
  c.max_gen_len = 12;
  c.disc_embed = 6;
  c.disc_hidden = 8;
  c.joint_dim = 4;
  c.batch = 8;
  c.mle_epochs = 2;
  c.d_pretrain_steps = 6;
  c.rollout_n = 2;
  c.adv_budget = AdvBudget::steps;
  c.adv_steps = 4;
  c.checkpoint_every = 2;
  return c;
}

std::vector<double> flat(const NamedTensors& params) {
  std::vector<double> out;
  for (const auto& [n, t] : params) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(HIERCAP_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config json round trip, defaults and rejection") {
  const TrainConfig d;
  CHECK(d.hidden == 512);
  CHECK(d.embed == 128);
  CHECK(d.batch == 32);
  CHECK(d.lr_mle == 1e-3);
  CHECK(d.lr_adv == 1e-4);
  CHECK(d.mle_epochs == 10);
  CHECK(d.d_pretrain_steps == 2500);
  CHECK(d.rollout_n == 16);
  CHECK(d.d_steps_per_g == 1);
  CHECK(TrainConfig::from_json(d.to_json()).to_json() == d.to_json());
  auto j = d.to_json();
  j["hiden"] = 3;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  j = d.to_json();
  j["batch"] = 0;
  CHECK_THROWS_AS(TrainConfig::from_json(j).validate(), ConfigError);
  j = d.to_json();
  j["hidden"] = 16;
  CHECK(TrainConfig::from_json(j).hidden == 16);
  CHECK(TrainConfig::from_json(nlohmann::json::object()).to_json() == d.to_json());
  CHECK_THROWS_AS(parse_adv_budget("forever"), ConfigError);
}

TEST_CASE("missing dataset is a data error") {
  TrainConfig c = tiny("missing");
  c.data_dir = c.out_dir / "nowhere";
  CHECK_THROWS_AS(Trainer{c}, DataError);
}

TEST_CASE("algorithm 1 writes a contiguous ledger with phases in order") {
  Trainer t(tiny("ledger"));
  const RunLedger& ledger = t.run_algorithm1();
  const auto& rows = ledger.rows();
  const std::size_t mle = 2 * ((t.training_pairs().size() + 7) / 8);
  REQUIRE(rows.size() == mle + 6 + 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == i + 1);
    const char* phase = i < mle ? "mle" : i < mle + 6 ? "disc_pretrain" : "adversarial";
    CHECK(rows[i].phase == phase);
    CHECK(rows[i].wall_ms == 0.0);
  }
  // The frozen generator's loss is flat while D pretrains.
  for (std::size_t i = mle; i < mle + 6; ++i) {
    CHECK(rows[i].g_loss == rows[mle].g_loss);
    CHECK(rows[i].d_loss.has_value());
  }
  for (std::size_t i = mle + 6; i < rows.size(); ++i) {
    CHECK(rows[i].j.has_value());
    CHECK(rows[i].mean_q.has_value());
  }
  const auto back = RunLedger::read(t.config().out_dir / "ledger.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(RunLedger::format(back[i]) == RunLedger::format(rows[i]));
  CHECK(slurp(t.config().out_dir / "ledger.csv").rfind(std::string(RunLedger::kHeader) + "\n", 0) == 0);
  for (const char* f : {"gen_mle.ckpt", "disc_pretrain.ckpt", "adv_000002.ckpt", "adv_000004.ckpt", "final.ckpt"}) {
    CHECK(fs::exists(t.checkpoint_dir() / f));
  }
  CHECK(fs::exists(t.config().out_dir / "config.json"));
}

TEST_CASE("ledger appends must be contiguous") {
  RunLedger ledger;
  LedgerRow row;
  row.step = 1;
  ledger.append(row);
  row.step = 3;
  CHECK_THROWS_AS(ledger.append(row), ContractError);
}

TEST_CASE("an adversarial budget of zero leaves the MLE model") {
  TrainConfig c = tiny("budget0");
  c.adv_steps = 0;
  Trainer t(c);
  t.run_algorithm1();
  CHECK(t.adversarial_steps_done() == 0);
  Trainer mle(c);
  mle.load(t.checkpoint_dir() / "gen_mle.ckpt");
  CHECK(flat(t.generator().parameters()) == flat(mle.generator().parameters()));
  CHECK(t.evaluate(t.data().split.test).to_json() == mle.evaluate(mle.data().split.test).to_json());
}

TEST_CASE("checkpoint round trip evaluates identically") {
  TrainConfig c = tiny("roundtrip");
  c.mle_epochs = 1;
  Trainer t(c);
  t.pretrain_generator();
  const fs::path path = c.out_dir / "model.ckpt";
  t.save(path, "mle");
  const auto before = t.evaluate(t.data().split.val).to_json().dump();
  Trainer u(c);
  CHECK(u.evaluate(u.data().split.val).to_json().dump() != before);
  u.load(path);
  CHECK(u.evaluate(u.data().split.val).to_json().dump() == before);
  CHECK(u.caption_split(u.data().split.test) == t.caption_split(t.data().split.test));
}

TEST_CASE("checkpoint with a different vocabulary is rejected") {
  TrainConfig c = tiny("vocab");
  c.mle_epochs = 1;
  Trainer t(c);
  const fs::path path = c.out_dir / "model.ckpt";
  t.save(path, "mle");
  LoadedDataset data = read_dataset(dataset());
  auto corpus = all_references(data.split.train);
  corpus.push_back("zebra");
  Trainer other(c, data, Vocabulary::build(corpus, 0, false));
  CHECK_THROWS_AS(other.load(path), ContractError);
}

TEST_CASE("resuming from an adversarial checkpoint continues the run exactly") {
  TrainConfig c = tiny("resume_full");
  Trainer full(c);
  full.run_algorithm1();
  const auto expected = slurp(c.out_dir / "ledger.csv");

  TrainConfig r = c;
  r.out_dir = scratch("resume_part");
  fs::create_directories(r.out_dir / "checkpoints");
  fs::copy_file(full.checkpoint_dir() / "adv_000002.ckpt", r.out_dir / "checkpoints" / "adv_000002.ckpt");
  // The interrupted run's ledger, including rows written after the checkpoint.
  fs::copy_file(c.out_dir / "ledger.csv", r.out_dir / "ledger.csv");
  Trainer resumed(r);
  resumed.load(r.out_dir / "checkpoints" / "adv_000002.ckpt");
  CHECK(resumed.adversarial_steps_done() == 2);
  resumed.open_ledger(resumed.global_step());
  resumed.adversarial();
  CHECK(slurp(r.out_dir / "ledger.csv") == expected);
  CHECK(flat(resumed.generator().parameters()) == flat(full.generator().parameters()));
  CHECK(flat(resumed.discriminator().parameters()) == flat(full.discriminator().parameters()));
}

TEST_CASE("two runs with the same seed agree byte for byte") {
  Trainer a(tiny("det_a"));
  a.run_algorithm1();
  Trainer b(tiny("det_b"));
  b.run_algorithm1();
  CHECK(slurp(a.config().out_dir / "ledger.csv") == slurp(b.config().out_dir / "ledger.csv"));
  CHECK(a.evaluate(a.data().split.test).to_json().dump() == b.evaluate(b.data().split.test).to_json().dump());
}

TEST_CASE("adversarial phase requires a pretrained discriminator") {
  Trainer t(tiny("untrained"));
  CHECK_THROWS_AS(t.adversarial(), ContractError);
}

TEST_CASE("ground truth scored against itself") {
  const LoadedDataset data = read_dataset(dataset());
  const fs::path dir = scratch("selfscore");
  std::ofstream cands(dir / "cands.jsonl"), refs(dir / "refs.jsonl");
  for (const auto& s : data.split.test) {
    if (s.graph.objects.size() < 2) continue;  // four or more words: every order has n-grams
    nlohmann::json cand, ref;
    cand["id"] = ref["id"] = s.id;
    cand["caption"] = s.refs[0];
    ref["refs"] = std::vector<std::string>{s.refs[0]};
    cands << cand.dump() << '\n';
    refs << ref.dump() << '\n';
  }
  cands.close();
  refs.close();
  const MetricReport m = score_files(dir / "cands.jsonl", dir / "refs.jsonl");
  CHECK(m.bleu[3] == 1.0);
  CHECK(std::abs(m.cider - 10.0) < 1e-12);
  CHECK(m.rouge_l == 1.0);
  std::vector<std::string> keys;
  const auto report = m.to_json();
  for (const auto& [k, v] : report.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "CIDEr", "ROUGE-L"});
  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\"}\n";
  CHECK_THROWS_AS(score_files(dir / "bad.jsonl", dir / "refs.jsonl"), DataError);
}

TEST_CASE("discriminator accuracy lies in the unit interval") {
  TrainConfig c = tiny("dacc");
  c.mle_epochs = 1;
  Trainer t(c);
  t.pretrain_discriminator();
  Rng rng(1);
  const double acc = t.discriminator_accuracy(t.data().split.val, rng);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("pretrain-gen --config " + (dir / "absent.json").string()) == 2);
  std::ofstream(dir / "bad.json") << "{\"hidden\": 0}";
  CHECK(run_cli("pretrain-gen --config " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("pretrain-gen --data " + (dir / "no_data").string() + " --out " + (dir / "o").string()) == 3);
  CHECK(run_cli("gen-data --out " + (dir / "d").string() + " --train-size 6 --val-size 2 --test-size 2") == 0);
  CHECK(fs::exists(dir / "d" / "scenes.train.jsonl"));
  const std::string common = "--data " + (dir / "d").string() + " --out " + (dir / "run").string() +
                             " --hidden 4 --embed 4 --att 4 --object-slots 8 --batch 4 --mle-epochs 1"
                             " --d-pretrain-steps 2 --rollouts 1 --adv-budget steps --adv-steps 1";
  CHECK(run_cli("train-all " + common) == 0);
  CHECK(fs::exists(dir / "run" / "report.json"));
  CHECK(fs::exists(dir / "run" / "ledger.csv"));
  CHECK(run_cli("evaluate --checkpoint " + (dir / "run" / "checkpoints" / "final.ckpt").string() + " " + common) == 0);
  CHECK(run_cli("evaluate --checkpoint " + (dir / "missing.ckpt").string() + " " + common) == 3);
}

}  // TEST_SUITE
