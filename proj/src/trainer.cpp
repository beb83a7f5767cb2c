#include "hiercap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <cinttypes>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace hiercap {

AdvBudget parse_adv_budget(const std::string& name) {
  if (name == "epochs") return AdvBudget::epochs;
  if (name == "steps") return AdvBudget::steps;
  if (name == "auto") return AdvBudget::automatic;
  throw ConfigError("unknown adversarial budget '" + name + "' (expected epochs, steps or auto)");
}

std::string to_string(AdvBudget budget) {
  switch (budget) {
    case AdvBudget::epochs:
      return "epochs";
    case AdvBudget::steps:
      return "steps";
    case AdvBudget::automatic:
      return "auto";
  }
  return "?";
}

// --- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(embed, "embed");
  positive(hidden, "hidden");
  positive(att, "att");
  positive(object_slots, "object_slots");
  positive(max_gen_len, "max_gen_len");
  positive(max_train_len, "max_train_len");
  positive(disc_embed, "disc_embed");
  positive(disc_hidden, "disc_hidden");
  positive(joint_dim, "joint_dim");
  positive(batch, "batch");
  positive(rollout_n, "rollout_n");
  positive(d_steps_per_g, "d_steps_per_g");
  positive(convergence_window, "convergence_window");
  positive(checkpoint_every, "checkpoint_every");
  for (double lr : {lr_mle, lr_disc, lr_adv}) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (convergence_delta < 0.0) throw ConfigError("convergence_delta must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"data_dir", data_dir.string()},
          {"out_dir", out_dir.string()},
          {"seed", seed},
          {"embed", embed},
          {"hidden", hidden},
          {"att", att},
          {"object_slots", object_slots},
          {"max_gen_len", max_gen_len},
          {"max_train_len", max_train_len},
          {"mode", to_string(mode)},
          {"embed_in_global_input", embed_in_global_input},
          {"local_uses_current_global", local_uses_current_global},
          {"lstm_candidate_activation", to_string(candidate)},
          {"init_scale", init_scale},
          {"disc_embed", disc_embed},
          {"disc_hidden", disc_hidden},
          {"joint_dim", joint_dim},
          {"disc_variant", to_string(disc_variant)},
          {"batch", batch},
          {"lr_mle", lr_mle},
          {"lr_disc", lr_disc},
          {"lr_adv", lr_adv},
          {"mle_epochs", mle_epochs},
          {"d_pretrain_steps", d_pretrain_steps},
          {"rollout_n", rollout_n},
          {"d_steps_per_g", d_steps_per_g},
          {"use_baseline", use_baseline},
          {"adv_budget", to_string(adv_budget)},
          {"adv_steps", adv_steps},
          {"adv_epochs", adv_epochs},
          {"convergence_window", convergence_window},
          {"convergence_delta", convergence_delta},
          {"checkpoint_every", checkpoint_every},
          {"record_wall_time", record_wall_time}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  const nlohmann::json known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    get("seed", c.seed);
    get("embed", c.embed);
    get("hidden", c.hidden);
    get("att", c.att);
    get("object_slots", c.object_slots);
    get("max_gen_len", c.max_gen_len);
    get("max_train_len", c.max_train_len);
    if (j.contains("mode")) c.mode = parse_stream_mode(j.at("mode").get<std::string>());
    get("embed_in_global_input", c.embed_in_global_input);
    get("local_uses_current_global", c.local_uses_current_global);
    if (j.contains("lstm_candidate_activation")) {
      c.candidate = parse_candidate_activation(j.at("lstm_candidate_activation").get<std::string>());
    }
    get("init_scale", c.init_scale);
    get("disc_embed", c.disc_embed);
    get("disc_hidden", c.disc_hidden);
    get("joint_dim", c.joint_dim);
    if (j.contains("disc_variant")) c.disc_variant = parse_disc_variant(j.at("disc_variant").get<std::string>());
    get("batch", c.batch);
    get("lr_mle", c.lr_mle);
    get("lr_disc", c.lr_disc);
    get("lr_adv", c.lr_adv);
    get("mle_epochs", c.mle_epochs);
    get("d_pretrain_steps", c.d_pretrain_steps);
    get("rollout_n", c.rollout_n);
    get("d_steps_per_g", c.d_steps_per_g);
    get("use_baseline", c.use_baseline);
    if (j.contains("adv_budget")) c.adv_budget = parse_adv_budget(j.at("adv_budget").get<std::string>());
    get("adv_steps", c.adv_steps);
    get("adv_epochs", c.adv_epochs);
    get("convergence_window", c.convergence_window);
    get("convergence_delta", c.convergence_delta);
    get("checkpoint_every", c.checkpoint_every);
    get("record_wall_time", c.record_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// --- ledger ------------------------------------------------------------------

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}
}  // namespace

RunLedger::RunLedger(std::filesystem::path path, std::size_t keep_steps) : path_(std::move(path)) {
  if (keep_steps > 0) {
    if (!std::filesystem::exists(path_)) throw DataError("cannot resume: ledger " + path_.string() + " is missing");
    for (auto& row : read(path_)) {
      if (row.step > keep_steps) break;
      rows_.push_back(std::move(row));
    }
    if (last_step() != keep_steps) throw DataError("ledger does not reach the checkpointed step");
  }
  std::filesystem::create_directories(path_.parent_path().empty() ? "." : path_.parent_path());
  out_ = std::make_unique<std::ofstream>(path_, std::ios::trunc);
  if (!*out_) throw DataError("cannot write ledger " + path_.string());
  *out_ << kHeader << '\n';
  for (const auto& row : rows_) *out_ << format(row) << '\n';
  out_->flush();
}

void RunLedger::append(LedgerRow row) {
  if (row.step != last_step() + 1) throw ContractError("ledger steps must be contiguous");
  if (out_) {
    *out_ << format(row) << '\n';
    out_->flush();
  }
  rows_.push_back(std::move(row));
}

std::string RunLedger::format(const LedgerRow& row) {
  std::ostringstream s;
  s << row.step << ',' << row.phase << ',' << fmt_opt(row.j) << ',' << fmt_opt(row.mean_q) << ','
    << fmt_opt(row.d_loss) << ',' << fmt_opt(row.g_loss) << ',' << fmt_double(row.wall_ms);
  return s.str();
}

std::vector<LedgerRow> RunLedger::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ledger " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kHeader) throw DataError("ledger " + path.string() + " has an unexpected header");
  std::vector<LedgerRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 7) throw DataError("malformed ledger row: " + line);
    LedgerRow r;
    r.step = std::stoul(cells[0]);
    r.phase = cells[1];
    r.j = parse_opt(cells[2]);
    r.mean_q = parse_opt(cells[3]);
    r.d_loss = parse_opt(cells[4]);
    r.g_loss = parse_opt(cells[5]);
    r.wall_ms = std::stod(cells[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// --- trainer -----------------------------------------------------------------

namespace {
Vocabulary read_vocab(const std::filesystem::path& dir) {
  std::ifstream in(dir / "vocab.json");
  if (!in) throw DataError("dataset directory " + dir.string() + " has no vocab.json");
  try {
    return Vocabulary::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed vocab.json: ") + e.what());
  }
}

std::vector<const ToyScene*> pointers(const std::vector<ToyScene>& scenes, std::span<const std::size_t> idx) {
  std::vector<const ToyScene*> out;
  for (std::size_t i : idx) out.push_back(&scenes[i]);
  return out;
}

using Clock = std::chrono::steady_clock;
}  // namespace

Trainer::Trainer(TrainConfig config) : Trainer(config, read_dataset(config.data_dir), read_vocab(config.data_dir)) {}

Trainer::Trainer(TrainConfig config, LoadedDataset data, Vocabulary vocab)
    : config_(std::move(config)), data_(std::move(data)), vocab_(std::move(vocab)) {
  config_.validate();
  if (config_.object_slots > data_.config.object_slots) {
    throw ConfigError("object_slots exceeds the dataset's " + std::to_string(data_.config.object_slots) + " slots");
  }
  const auto& train = data_.split.train;
  if (train.empty()) throw DataError("training split is empty");
  scene_pairs_.resize(train.size());
  for (std::size_t s = 0; s < train.size(); ++s) {
    for (const auto& ref : train[s].refs) {
      if (tokenize(ref).size() > config_.max_train_len) continue;
      auto ids = vocab_.try_encode(ref);
      if (!ids) continue;  // out-of-vocabulary words: no UNK token, drop the caption
      scene_pairs_[s].push_back(pairs_.size());
      pairs_.push_back({s, std::move(*ids)});
    }
    if (!scene_pairs_[s].empty()) eligible_.push_back(s);
  }
  if (pairs_.empty()) throw DataError("no training caption survives the vocabulary and length filters");
  init_models();
}

void Trainer::init_models() {
  Rng rng = Rng::derive(config_.seed, 0);
  GeneratorConfig g;
  g.vocab_size = vocab_.size();
  g.embed_dim = config_.embed;
  g.hidden_dim = config_.hidden;
  g.att_dim = config_.att;
  g.global_dim = data_.config.global_dim;
  g.local_dim = data_.config.local_dim;
  g.object_slots = config_.object_slots;
  g.max_gen_len = config_.max_gen_len;
  g.mode = config_.mode;
  g.embed_in_global_input = config_.embed_in_global_input;
  g.local_uses_current_global = config_.local_uses_current_global;
  g.candidate = config_.candidate;
  g.init_scale = config_.init_scale;
  gen_ = std::make_unique<Generator>(g, rng);
  DiscriminatorConfig d;
  d.vocab_size = vocab_.size();
  d.embed_dim = config_.disc_embed;
  d.hidden_dim = config_.disc_hidden;
  d.joint_dim = config_.joint_dim;
  d.global_dim = data_.config.global_dim;
  d.local_dim = data_.config.local_dim;
  d.variant = config_.disc_variant;
  d.candidate = config_.candidate;
  d.init_scale = config_.init_scale;
  disc_ = std::make_unique<Discriminator>(d, rng);
}

void Trainer::open_ledger(std::size_t keep_steps) {
  std::filesystem::create_directories(config_.out_dir);
  ledger_.emplace(config_.out_dir / "ledger.csv", keep_steps);
  global_step_ = keep_steps;
  std::ofstream(config_.out_dir / "config.json") << config_.to_json().dump(1) << '\n';
}

void Trainer::record(LedgerRow row) {
  row.step = ++global_step_;
  if (!config_.record_wall_time) row.wall_ms = 0.0;
  if (ledger_) ledger_->append(std::move(row));
}

std::vector<std::size_t> Trainer::sample_scenes(Rng& rng) const {
  std::vector<std::size_t> pool = eligible_;
  const std::size_t n = std::min(config_.batch, pool.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(n);
  return pool;
}

double Trainer::probe_generator_loss() const {
  const std::size_t n = std::min(config_.batch, pairs_.size());
  std::vector<std::size_t> scenes;
  std::vector<TokenSeq> refs;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scenes.push_back(pairs_[i].scene);
    refs.push_back(pairs_[i].tokens);
    tokens += pairs_[i].tokens.size();
  }
  const SceneBatch batch = make_batch(pointers(data_.split.train, scenes), config_.object_slots);
  return gen_->mle_loss(batch, refs).item() / static_cast<double>(tokens);
}

PhaseResult Trainer::pretrain_generator() {
  Rng rng = Rng::derive(config_.seed, 1);
  Adam opt(gen_->parameters(), {config_.lr_mle});
  PhaseResult result;
  std::vector<std::size_t> order(pairs_.size());
  for (std::size_t epoch = 0; epoch < config_.mle_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += config_.batch) {
      const auto t0 = Clock::now();
      const std::size_t end = std::min(order.size(), start + config_.batch);
      std::vector<std::size_t> scenes;
      std::vector<TokenSeq> refs;
      std::size_t tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        scenes.push_back(pairs_[order[k]].scene);
        refs.push_back(pairs_[order[k]].tokens);
        tokens += refs.back().size();
      }
      const SceneBatch batch = make_batch(pointers(data_.split.train, scenes), config_.object_slots);
      Tape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        const Tensor loss = gen_->mle_loss(batch, refs);
        loss_value = loss.item();
        opt.zero_grad();
        tape.backward(scale(loss, 1.0 / static_cast<double>(refs.size())));
      }
      opt.step();
      result.last_loss = loss_value / static_cast<double>(tokens);
      ++result.steps;
      LedgerRow row;
      row.phase = "mle";
      row.g_loss = result.last_loss;
      row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      record(std::move(row));
    }
    if (on_epoch) on_epoch(epoch, *this);
  }
  if (ledger_) {
    const auto path = checkpoint_dir() / "gen_mle.ckpt";
    save(path, "mle");
  }
  return result;
}

double Trainer::d_step(Adam& opt, Rng& rng) {
  const auto scenes = sample_scenes(rng);
  const SceneBatch batch = make_batch(pointers(data_.split.train, scenes), config_.object_slots);
  std::vector<TokenSeq> captions;
  for (std::size_t s : scenes) {
    const auto& own = scene_pairs_[s];
    captions.push_back(pairs_[own[rng.below(own.size())]].tokens);
  }
  const auto fakes = gen_->generate(batch, SampleMode::multinomial, rng);
  captions.insert(captions.end(), fakes.begin(), fakes.end());
  std::vector<double> labels(scenes.size(), 1.0);
  labels.resize(2 * scenes.size(), 0.0);
  std::vector<std::size_t> twice(2 * scenes.size());
  for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = i % scenes.size();
  const SceneBatch doubled = take_scenes(batch, twice);
  Tape tape;
  double value;
  {
    TapeScope scope(tape);
    const Tensor loss = disc_->d_loss(doubled, captions, labels);
    value = loss.item();
    opt.zero_grad();
    tape.backward(loss);
  }
  opt.step();
  return value;
}

PhaseResult Trainer::pretrain_discriminator() {
  Rng rng = Rng::derive(config_.seed, 2);
  Adam opt(disc_->parameters(), {config_.lr_disc});
  const double probe = probe_generator_loss();  // G is frozen in this phase
  PhaseResult result;
  for (std::size_t s = 0; s < config_.d_pretrain_steps; ++s) {
    const auto t0 = Clock::now();
    result.last_loss = d_step(opt, rng);
    ++result.steps;
    LedgerRow row;
    row.phase = "disc_pretrain";
    row.d_loss = result.last_loss;
    row.g_loss = probe;
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    record(std::move(row));
  }
  disc_->mark_pretrained();
  if (ledger_) save(checkpoint_dir() / "disc_pretrain.ckpt", "disc_pretrain");
  return result;
}

std::size_t Trainer::adversarial_budget() const {
  switch (config_.adv_budget) {
    case AdvBudget::steps:
    case AdvBudget::automatic:
      return config_.adv_steps;
    case AdvBudget::epochs:
      return config_.adv_epochs * ((eligible_.size() + config_.batch - 1) / config_.batch);
  }
  return 0;
}

PhaseResult Trainer::adversarial() {
  if (!disc_->pretrained()) throw ContractError("adversarial training requires a pretrained discriminator");
  if (!opt_g_) {
    opt_g_ = std::make_unique<Adam>(gen_->parameters(), AdamConfig{config_.lr_adv});
    opt_d_ = std::make_unique<Adam>(disc_->parameters(), AdamConfig{config_.lr_adv});
    pg_ = std::make_unique<PolicyGradient>(PolicyGradientConfig{config_.rollout_n, config_.use_baseline});
    adv_rng_ = Rng::derive(config_.seed, 3);
  }
  PhaseResult result;
  const std::size_t budget = adversarial_budget();
  const std::size_t w = config_.convergence_window;
  while (adv_step_ < budget && !converged_) {
    const auto t0 = Clock::now();
    const auto scenes = sample_scenes(adv_rng_);
    const SceneBatch batch = make_batch(pointers(data_.split.train, scenes), config_.object_slots);
    const PolicyGradientStats stats = pg_->step(*gen_, *disc_, *opt_g_, batch, adv_rng_);
    double d = 0.0;
    for (std::size_t k = 0; k < config_.d_steps_per_g; ++k) d += d_step(*opt_d_, adv_rng_);
    d /= static_cast<double>(config_.d_steps_per_g);
    ++adv_step_;
    ++result.steps;
    result.last_loss = stats.surrogate;
    j_history_.push_back(stats.j);
    if (config_.adv_budget == AdvBudget::automatic && j_history_.size() >= 2 * w) {
      const auto end = j_history_.end();
      const double recent = std::accumulate(end - static_cast<std::ptrdiff_t>(w), end, 0.0) / static_cast<double>(w);
      const double before =
          std::accumulate(end - static_cast<std::ptrdiff_t>(2 * w), end - static_cast<std::ptrdiff_t>(w), 0.0) /
          static_cast<double>(w);
      converged_ = recent - before < config_.convergence_delta;
    }
    LedgerRow row;
    row.phase = "adversarial";
    row.j = stats.j;
    row.mean_q = stats.mean_q;
    row.d_loss = d;
    row.g_loss = stats.surrogate;
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    record(std::move(row));
    if (ledger_ && adv_step_ % config_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "adv_%06zu.ckpt", adv_step_);
      save(checkpoint_dir() / name, "adversarial");
    }
  }
  if (ledger_) save(checkpoint_dir() / "final.ckpt", "final");
  return result;
}

RunLedger& Trainer::run_algorithm1() {
  if (!ledger_) open_ledger();
  pretrain_generator();
  pretrain_discriminator();
  adversarial();
  return *ledger_;
}

double Trainer::train_accuracy() const {
  Generator::Accuracy total;
  for (std::size_t start = 0; start < pairs_.size(); start += 64) {
    const std::size_t end = std::min(pairs_.size(), start + 64);
    std::vector<std::size_t> scenes;
    std::vector<TokenSeq> refs;
    for (std::size_t k = start; k < end; ++k) {
      scenes.push_back(pairs_[k].scene);
      refs.push_back(pairs_[k].tokens);
    }
    const auto acc =
        gen_->teacher_forced_accuracy(make_batch(pointers(data_.split.train, scenes), config_.object_slots), refs);
    total.correct += acc.correct;
    total.total += acc.total;
  }
  return total.value();
}

std::vector<std::string> Trainer::caption_split(const std::vector<ToyScene>& scenes) const {
  std::vector<std::string> out;
  Rng unused(0);
  for (std::size_t start = 0; start < scenes.size(); start += 64) {
    std::vector<std::size_t> idx(std::min(scenes.size(), start + 64) - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto caps =
        gen_->generate(make_batch(pointers(scenes, idx), config_.object_slots), SampleMode::greedy, unused);
    for (const auto& c : caps) out.push_back(vocab_.decode(c));
  }
  return out;
}

MetricReport Trainer::evaluate(const std::vector<ToyScene>& scenes) const {
  if (scenes.empty()) throw DataError("evaluation split is empty");
  std::vector<std::vector<std::string>> refs;
  for (const auto& s : scenes) refs.push_back(s.refs);
  return score_corpus(caption_split(scenes), refs);
}

double Trainer::discriminator_accuracy(const std::vector<ToyScene>& scenes, Rng& rng) const {
  std::size_t correct = 0, total = 0;
  std::vector<std::size_t> usable;
  std::vector<TokenSeq> reals;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& ref : scenes[i].refs) {
      if (auto ids = vocab_.try_encode(ref)) {
        usable.push_back(i);
        reals.push_back(std::move(*ids));
        break;
      }
    }
  }
  for (std::size_t start = 0; start < usable.size(); start += 64) {
    const std::size_t end = std::min(usable.size(), start + 64);
    const std::span<const std::size_t> idx(usable.data() + start, end - start);
    const SceneBatch batch = make_batch(pointers(scenes, idx), config_.object_slots);
    const auto fakes = gen_->generate(batch, SampleMode::multinomial, rng);
    const auto real_scores =
        disc_->d_score(batch, std::span<const TokenSeq>(reals.data() + start, end - start));
    const auto fake_scores = disc_->d_score(batch, fakes);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      correct += real_scores[k] > 0.5;
      correct += fake_scores[k] < 0.5;
      total += 2;
    }
  }
  if (total == 0) throw DataError("no scene with an encodable reference");
  return static_cast<double>(correct) / static_cast<double>(total);
}

void Trainer::save(const std::filesystem::path& path, const std::string& kind) {
  nlohmann::json meta;
  meta["kind"] = kind;
  meta["train_config"] = config_.to_json();
  meta["generator"] = gen_->config().to_json();
  meta["discriminator"] = disc_->config().to_json();
  meta["vocab"] = vocab_.to_json();
  meta["disc_pretrained"] = disc_->pretrained();
  meta["global_step"] = global_step_;
  Checkpoint ckpt;
  ckpt.tensors = gen_->parameters();
  const auto& dp = disc_->parameters();
  ckpt.tensors.insert(ckpt.tensors.end(), dp.begin(), dp.end());
  if (opt_g_) {
    nlohmann::json adv;
    adv["step"] = adv_step_;
    adv["rng"] = adv_rng_.state();
    adv["baseline"] = pg_->baseline();
    adv["baseline_ready"] = pg_->baseline_ready();
    adv["j_history"] = j_history_;
    adv["converged"] = converged_;
    adv["opt_g_steps"] = opt_g_->steps();
    adv["opt_d_steps"] = opt_d_->steps();
    meta["adversarial"] = adv;
    for (auto& t : opt_g_->state("opt_g.")) ckpt.tensors.push_back(std::move(t));
    for (auto& t : opt_d_->state("opt_d.")) ckpt.tensors.push_back(std::move(t));
  }
  ckpt.meta = meta.dump();
  save_checkpoint(path, ckpt);
  if (ledger_) {
    auto& list = ledger_->checkpoints();
    if (std::find(list.begin(), list.end(), path) == list.end()) list.push_back(path);
  }
}

void Trainer::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint metadata is not JSON: " + std::string(e.what()));
  }
  if (!(Vocabulary::from_json(meta.at("vocab")) == vocab_)) {
    throw ContractError("checkpoint vocabulary does not match the dataset vocabulary");
  }
  // The architecture comes from the checkpoint; paths and budgets stay as configured.
  const TrainConfig saved = TrainConfig::from_json(meta.at("train_config"));
  config_.embed = saved.embed;
  config_.hidden = saved.hidden;
  config_.att = saved.att;
  config_.object_slots = saved.object_slots;
  config_.mode = saved.mode;
  config_.embed_in_global_input = saved.embed_in_global_input;
  config_.local_uses_current_global = saved.local_uses_current_global;
  config_.candidate = saved.candidate;
  config_.disc_embed = saved.disc_embed;
  config_.disc_hidden = saved.disc_hidden;
  config_.joint_dim = saved.joint_dim;
  config_.disc_variant = saved.disc_variant;
  init_models();
  NamedTensors gp = gen_->parameters();
  assign_tensors(gp, ckpt.tensors);
  NamedTensors dp = disc_->parameters();
  assign_tensors(dp, ckpt.tensors);
  disc_->mark_pretrained(meta.value("disc_pretrained", false));
  global_step_ = meta.value("global_step", std::size_t{0});
  opt_g_.reset();
  opt_d_.reset();
  pg_.reset();
  adv_step_ = 0;
  j_history_.clear();
  converged_ = false;
  if (meta.contains("adversarial")) {
    const auto& adv = meta.at("adversarial");
    opt_g_ = std::make_unique<Adam>(gen_->parameters(), AdamConfig{config_.lr_adv});
    opt_d_ = std::make_unique<Adam>(disc_->parameters(), AdamConfig{config_.lr_adv});
    opt_g_->restore(ckpt, "opt_g.", adv.at("opt_g_steps").get<std::uint64_t>());
    opt_d_->restore(ckpt, "opt_d.", adv.at("opt_d_steps").get<std::uint64_t>());
    pg_ = std::make_unique<PolicyGradient>(PolicyGradientConfig{config_.rollout_n, config_.use_baseline});
    pg_->set_baseline(adv.at("baseline").get<double>(), adv.at("baseline_ready").get<bool>());
    adv_rng_.restore(adv.at("rng").get<std::string>());
    adv_step_ = adv.at("step").get<std::size_t>();
    j_history_ = adv.at("j_history").get<std::vector<double>>();
    converged_ = adv.at("converged").get<bool>();
  }
}

// --- ablation and scoring ----------------------------------------------------

std::vector<AblationEntry> ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                  const std::vector<std::size_t>& slot_counts) {
  LoadedDataset data = read_dataset(base.data_dir);
  const Vocabulary vocab = read_vocab(base.data_dir);
  std::vector<AblationEntry> out;
  auto run = [&](TrainConfig cfg, const std::string& name) {
    Trainer t(cfg, data, vocab);
    t.pretrain_generator();
    out.push_back({name, cfg.seed, t.evaluate(data.split.test)});
  };
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    for (StreamMode m : {StreamMode::hierarchical, StreamMode::global_only, StreamMode::local_only}) {
      cfg.mode = m;
      run(cfg, to_string(m));
    }
    cfg.mode = StreamMode::hierarchical;
    for (std::size_t k : slot_counts) {
      const std::string name = "K=" + std::to_string(k);
      if (k == base.object_slots && base.mode == StreamMode::hierarchical) {
        // Same model as the hierarchical entry of this seed.
        for (const auto& e : out) {
          if (e.seed == seed && e.variant == "hierarchical") {
            out.push_back({name, seed, e.report});
            break;
          }
        }
        continue;
      }
      cfg.object_slots = k;
      run(cfg, name);
    }
  }
  return out;
}

nlohmann::ordered_json ablation_json(const std::vector<AblationEntry>& entries) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json row;
    row["variant"] = e.variant;
    row["seed"] = e.seed;
    const auto metrics = e.report.to_json();
    for (const auto& [k, v] : metrics.items()) row[k] = v;
    rows.push_back(row);
  }
  return rows;
}

namespace {
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return rows;
}
}  // namespace

MetricReport score_files(const std::filesystem::path& candidates, const std::filesystem::path& references) {
  std::map<std::string, std::string> by_id;
  try {
    for (const auto& row : read_jsonl(candidates)) by_id[row.at("id").get<std::string>()] = row.at("caption").get<std::string>();
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    for (const auto& row : read_jsonl(references)) {
      const std::string id = row.at("id").get<std::string>();
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("no candidate caption for '" + id + "'");
      cands.push_back(it->second);
      refs.push_back(row.at("refs").get<std::vector<std::string>>());
    }
    if (cands.empty()) throw DataError("reference file " + references.string() + " is empty");
    return score_corpus(cands, refs);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scoring input: ") + e.what());
  }
}

}  // namespace hiercap
