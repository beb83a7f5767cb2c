// Command-line front end: dataset generation, the three training phases,
// evaluation, ablation, caption generation and corpus scoring.
#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <sstream>
#include <iostream>

#include "hiercap/trainer.hpp"

using namespace hiercap;

namespace {

// Flags that override fields of the JSON config when given.
struct Overrides {
  std::string config, data, out;
  std::uint64_t seed = 0;
  std::size_t hidden = 0, embed = 0, att = 0, batch = 0, max_train_len = 0, max_gen_len = 0, object_slots = 0;
  std::size_t mle_epochs = 0, d_pretrain_steps = 0, rollouts = 0, d_steps = 0, adv_steps = 0, adv_epochs = 0;
  double lr = 0, lr_adv = 0, lr_disc = 0;
  std::string disc_variant, mode, adv_budget, candidate;
  bool wall_time = false, baseline = false;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app) {
    opts["config"] = app->add_option("--config", config, "JSON training config");
    opts["data"] = app->add_option("--data", data, "dataset directory");
    opts["out"] = app->add_option("--out", out, "output directory");
    opts["seed"] = app->add_option("--seed", seed);
    opts["hidden"] = app->add_option("--hidden", hidden, "LSTM hidden size (512)");
    opts["embed"] = app->add_option("--embed", embed, "word embedding size (128)");
    opts["att"] = app->add_option("--att", att, "attention scorer width (64)");
    opts["batch"] = app->add_option("--batch", batch, "minibatch size (32)");
    opts["lr"] = app->add_option("--lr", lr, "MLE learning rate (1e-3)");
    opts["lr_adv"] = app->add_option("--lr-adv", lr_adv, "adversarial learning rate (1e-4)");
    opts["lr_disc"] = app->add_option("--lr-disc", lr_disc, "discriminator pretraining learning rate (1e-3)");
    opts["max_train_len"] = app->add_option("--max-train-len", max_train_len, "(20)");
    opts["max_gen_len"] = app->add_option("--max-gen-len", max_gen_len, "(30)");
    opts["object_slots"] = app->add_option("--object-slots", object_slots, "top-K detections (30)");
    opts["mle_epochs"] = app->add_option("--mle-epochs", mle_epochs, "(10)");
    opts["d_pretrain_steps"] = app->add_option("--d-pretrain-steps", d_pretrain_steps, "(2500)");
    opts["rollouts"] = app->add_option("--rollouts", rollouts, "Monte Carlo rollouts per token (16)");
    opts["d_steps"] = app->add_option("--d-steps-per-g", d_steps, "discriminator steps per G step (1)");
    opts["adv_budget"] = app->add_option("--adv-budget", adv_budget, "epochs|steps|auto");
    opts["adv_steps"] = app->add_option("--adv-steps", adv_steps, "(3000)");
    opts["adv_epochs"] = app->add_option("--adv-epochs", adv_epochs, "(1)");
    opts["disc_variant"] = app->add_option("--disc-variant", disc_variant, "sentence|coherence");
    opts["mode"] = app->add_option("--mode", mode, "hierarchical|global_only|local_only");
    opts["candidate"] = app->add_option("--lstm-candidate-activation", candidate, "tanh|sigmoid");
    opts["wall_time"] = app->add_flag("--record-wall-time", wall_time, "write measured wall_ms to the ledger");
    opts["baseline"] = app->add_flag("--baseline", baseline, "moving-average reward baseline");
  }

  bool given(const std::string& name) const { return opts.at(name)->count() > 0; }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : TrainConfig::load(config);
    if (given("data")) c.data_dir = data;
    if (given("out")) c.out_dir = out;
    if (given("seed")) c.seed = seed;
    if (given("hidden")) c.hidden = c.disc_hidden = hidden;
    if (given("embed")) c.embed = c.disc_embed = embed;
    if (given("att")) c.att = att;
    if (given("batch")) c.batch = batch;
    if (given("lr")) c.lr_mle = lr;
    if (given("lr_adv")) c.lr_adv = lr_adv;
    if (given("lr_disc")) c.lr_disc = lr_disc;
    if (given("max_train_len")) c.max_train_len = max_train_len;
    if (given("max_gen_len")) c.max_gen_len = max_gen_len;
    if (given("object_slots")) c.object_slots = object_slots;
    if (given("mle_epochs")) c.mle_epochs = mle_epochs;
    if (given("d_pretrain_steps")) c.d_pretrain_steps = d_pretrain_steps;
    if (given("rollouts")) c.rollout_n = rollouts;
    if (given("d_steps")) c.d_steps_per_g = d_steps;
    if (given("adv_budget")) c.adv_budget = parse_adv_budget(adv_budget);
    if (given("adv_steps")) c.adv_steps = adv_steps;
    if (given("adv_epochs")) c.adv_epochs = adv_epochs;
    if (given("disc_variant")) c.disc_variant = parse_disc_variant(disc_variant);
    if (given("mode")) c.mode = parse_stream_mode(mode);
    if (given("candidate")) c.candidate = parse_candidate_activation(candidate);
    if (wall_time) c.record_wall_time = true;
    if (baseline) c.use_baseline = true;
    c.validate();
    return c;
  }
};

const std::vector<ToyScene>& pick_split(const Trainer& t, const std::string& split) {
  if (split == "train") return t.data().split.train;
  if (split == "val") return t.data().split.val;
  if (split == "test") return t.data().split.test;
  throw ConfigError("unknown split '" + split + "'");
}

void write_report(const Trainer& t, const std::vector<ToyScene>& scenes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto captions = t.caption_split(scenes);
  std::vector<std::vector<std::string>> refs;
  for (const auto& s : scenes) refs.push_back(s.refs);
  const MetricReport report = score_corpus(captions, refs);
  const auto j = report.to_json();
  std::ofstream(dir / "report.json") << j.dump(1) << '\n';
  std::ofstream csv(dir / "report.csv");
  bool first = true;
  for (const auto& [k, v] : j.items()) {
    csv << (first ? "" : ",") << k;
    first = false;
  }
  csv << '\n';
  first = true;
  for (const auto& [k, v] : j.items()) {
    csv << (first ? "" : ",") << (v.is_null() ? "" : v.dump());
    first = false;
  }
  csv << '\n';
  std::ofstream caps(dir / "captions.jsonl");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    caps << nlohmann::json{{"id", scenes[i].id}, {"caption", captions[i]}}.dump() << '\n';
  }
  std::cout << j.dump(1) << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-attention caption generator with adversarial policy-gradient training"};
  app.require_subcommand(1);

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "write a procedural toy-scene dataset");
  std::string data_out = "data", scene_config;
  std::uint64_t data_seed = 1;
  int min_count = 5;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  gen_data->add_option("--out", data_out, "dataset directory");
  gen_data->add_option("--seed", data_seed);
  gen_data->add_option("--scene-config", scene_config, "JSON scene generator config");
  gen_data->add_option("--min-count", min_count, "vocabulary threshold (strictly more occurrences) (5)");
  auto* o_train = gen_data->add_option("--train-size", train_size);
  auto* o_val = gen_data->add_option("--val-size", val_size);
  auto* o_test = gen_data->add_option("--test-size", test_size);

  Overrides pretrain_gen_o, pretrain_disc_o, adversarial_o, train_all_o, evaluate_o, ablate_o, generate_o;
  auto* pretrain_gen = app.add_subcommand("pretrain-gen", "phase 1: MLE pretraining of the generator");
  pretrain_gen_o.attach(pretrain_gen);

  auto* pretrain_disc = app.add_subcommand("pretrain-disc", "phase 2: discriminator pretraining on generated fakes");
  pretrain_disc_o.attach(pretrain_disc);
  std::string disc_from;
  pretrain_disc->add_option("--checkpoint", disc_from, "generator checkpoint from pretrain-gen")->required();

  auto* adversarial = app.add_subcommand("adversarial", "phase 3: policy gradient with rollouts, alternating with D");
  adversarial_o.attach(adversarial);
  std::string adv_from;
  adversarial->add_option("--checkpoint", adv_from, "checkpoint from pretrain-disc, or an adversarial one to resume")
      ->required();

  auto* train_all = app.add_subcommand("train-all", "run all three phases and evaluate on test");
  train_all_o.attach(train_all);

  auto* evaluate = app.add_subcommand("evaluate", "greedy captions and metric report for a split");
  evaluate_o.attach(evaluate);
  std::string eval_ckpt, eval_split = "test";
  evaluate->add_option("--checkpoint", eval_ckpt)->required();
  evaluate->add_option("--split", eval_split, "train|val|test");

  auto* ablate_cmd = app.add_subcommand("ablate", "attention-stream and object-count ablations");
  ablate_o.attach(ablate_cmd);
  std::string seed_list = "1,2,3,4,5";
  ablate_cmd->add_option("--seeds", seed_list, "comma-separated seeds");

  auto* generate = app.add_subcommand("generate", "write captions for a split");
  generate_o.attach(generate);
  std::string gen_ckpt, gen_split = "test", gen_mode = "greedy", trace_path, gen_out;
  generate->add_option("--checkpoint", gen_ckpt)->required();
  generate->add_option("--split", gen_split);
  generate->add_option("--sample", gen_mode, "greedy|multinomial");
  generate->add_option("--trace", trace_path, "JSON-lines attention trace");
  generate->add_option("--captions", gen_out, "output JSON-lines file (stdout when omitted)");

  auto* score = app.add_subcommand("score", "score candidate captions against references");
  std::string cand_path, ref_path;
  score->add_option("--candidates", cand_path, "JSON lines {id, caption}")->required();
  score->add_option("--references", ref_path, "JSON lines {id, refs}")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_data->parsed()) {
      ToySceneConfig sc;
      if (!scene_config.empty()) {
        std::ifstream in(scene_config);
        if (!in) throw ConfigError("cannot open " + scene_config);
        sc = ToySceneConfig::from_json(nlohmann::json::parse(in));
      }
      if (o_train->count()) sc.train_size = train_size;
      if (o_val->count()) sc.val_size = val_size;
      if (o_test->count()) sc.test_size = test_size;
      write_dataset(data_out, generate_dataset(sc, data_seed), sc, min_count);
      std::cout << "wrote " << data_out << '\n';
    } else if (pretrain_gen->parsed()) {
      Trainer t(pretrain_gen_o.resolve());
      t.open_ledger();
      const auto r = t.pretrain_generator();
      std::cout << "mle steps " << r.steps << ", final per-token loss " << r.last_loss << '\n';
    } else if (pretrain_disc->parsed()) {
      Trainer t(pretrain_disc_o.resolve());
      t.load(disc_from);
      t.open_ledger(t.global_step());
      const auto r = t.pretrain_discriminator();
      std::cout << "discriminator steps " << r.steps << ", final loss " << r.last_loss << '\n';
    } else if (adversarial->parsed()) {
      Trainer t(adversarial_o.resolve());
      t.load(adv_from);
      t.open_ledger(t.global_step());
      const auto r = t.adversarial();
      std::cout << "adversarial steps " << t.adversarial_steps_done() << " (" << r.steps << " this run)\n";
    } else if (train_all->parsed()) {
      Trainer t(train_all_o.resolve());
      t.run_algorithm1();
      write_report(t, t.data().split.test, t.config().out_dir);
    } else if (evaluate->parsed()) {
      Trainer t(evaluate_o.resolve());
      t.load(eval_ckpt);
      write_report(t, pick_split(t, eval_split), t.config().out_dir);
    } else if (ablate_cmd->parsed()) {
      const TrainConfig cfg = ablate_o.resolve();
      const auto entries = ablate(cfg, parse_seeds(seed_list));
      const auto j = ablation_json(entries);
      std::filesystem::create_directories(cfg.out_dir);
      std::ofstream(cfg.out_dir / "ablation.json") << j.dump(1) << '\n';
      std::cout << j.dump(1) << '\n';
    } else if (generate->parsed()) {
      Trainer t(generate_o.resolve());
      t.load(gen_ckpt);
      const auto& scenes = pick_split(t, gen_split);
      const SampleMode mode = gen_mode == "greedy"        ? SampleMode::greedy
                              : gen_mode == "multinomial" ? SampleMode::multinomial
                                                          : throw ConfigError("unknown sampling mode " + gen_mode);
      std::ofstream trace_file;
      std::unique_ptr<AttentionTrace> trace;
      if (!trace_path.empty()) {
        trace_file.open(trace_path);
        trace = std::make_unique<AttentionTrace>(trace_file);
      }
      std::ofstream file;
      if (!gen_out.empty()) file.open(gen_out);
      std::ostream& out = gen_out.empty() ? std::cout : file;
      Rng rng = Rng::derive(t.config().seed, 4);
      for (std::size_t start = 0; start < scenes.size(); start += 64) {
        std::vector<const ToyScene*> ptrs;
        for (std::size_t i = start; i < std::min(scenes.size(), start + 64); ++i) ptrs.push_back(&scenes[i]);
        const auto caps = t.generator().generate(make_batch(ptrs, t.config().object_slots), mode, rng, trace.get(), start);
        for (std::size_t k = 0; k < caps.size(); ++k) {
          out << nlohmann::json{{"id", ptrs[k]->id}, {"caption", t.vocab().decode(caps[k])}}.dump() << '\n';
        }
      }
    } else if (score->parsed()) {
      std::cout << score_files(cand_path, ref_path).to_json().dump(1) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
