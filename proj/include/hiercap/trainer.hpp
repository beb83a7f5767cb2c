#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiercap/metrics.hpp"
#include "hiercap/rollout.hpp"
#include "hiercap/vocab.hpp"

namespace hiercap {

enum class AdvBudget { epochs, steps, automatic };
AdvBudget parse_adv_budget(const std::string& name);
std::string to_string(AdvBudget budget);

struct TrainConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";
  std::uint64_t seed = 1;

  // generator
  std::size_t embed = 128;
  std::size_t hidden = 512;
  std::size_t att = 64;
  std::size_t object_slots = 30;
  std::size_t max_gen_len = 30;
  std::size_t max_train_len = 20;
  StreamMode mode = StreamMode::hierarchical;
  bool embed_in_global_input = true;
  bool local_uses_current_global = false;
  CandidateActivation candidate = CandidateActivation::tanh;
  double init_scale = 0.08;

  // discriminator
  std::size_t disc_embed = 128;
  std::size_t disc_hidden = 512;
  std::size_t joint_dim = 256;
  DiscVariant disc_variant = DiscVariant::coherence;

  // optimisation
  std::size_t batch = 32;
  double lr_mle = 1e-3;
  double lr_disc = 1e-3;  // discriminator pretraining
  double lr_adv = 1e-4;   // both networks during adversarial alternation
  std::size_t mle_epochs = 10;
  std::size_t d_pretrain_steps = 2500;
  std::size_t rollout_n = 16;
  std::size_t d_steps_per_g = 1;
  bool use_baseline = false;

  AdvBudget adv_budget = AdvBudget::automatic;
  std::size_t adv_steps = 3000;  // step budget, and the cap in automatic mode
  std::size_t adv_epochs = 1;
  std::size_t convergence_window = 200;
  double convergence_delta = 0.002;

  std::size_t checkpoint_every = 100;  // adversarial G-steps between checkpoints
  bool record_wall_time = false;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are a config error; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

struct LedgerRow {
  std::size_t step = 0;
  std::string phase;
  std::optional<double> j, mean_q, d_loss, g_loss;
  double wall_ms = 0.0;
};

// Per-step CSV: step,phase,J,mean_Q,d_loss,g_loss,wall_ms. Steps are
// 1-based, contiguous across phases.
class RunLedger {
 public:
  static constexpr const char* kHeader = "step,phase,J,mean_Q,d_loss,g_loss,wall_ms";

  RunLedger() = default;
  explicit RunLedger(std::filesystem::path path, std::size_t keep_steps = 0);

  void append(LedgerRow row);
  const std::vector<LedgerRow>& rows() const { return rows_; }
  std::size_t last_step() const { return rows_.empty() ? 0 : rows_.back().step; }
  std::vector<std::filesystem::path>& checkpoints() { return checkpoints_; }
  const std::vector<std::filesystem::path>& checkpoints() const { return checkpoints_; }

  static std::string format(const LedgerRow& row);
  static std::vector<LedgerRow> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::vector<LedgerRow> rows_;
  std::vector<std::filesystem::path> checkpoints_;
  std::unique_ptr<std::ofstream> out_;
};

// A reference caption ready for teacher forcing.
struct TrainingPair {
  std::size_t scene = 0;
  TokenSeq tokens;  // words then END
};

struct PhaseResult {
  double last_loss = 0.0;
  std::size_t steps = 0;
};

class Trainer {
 public:
  // Loads the dataset and vocabulary from config.data_dir.
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, LoadedDataset data, Vocabulary vocab);

  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const LoadedDataset& data() const { return data_; }
  const std::vector<TrainingPair>& training_pairs() const { return pairs_; }
  Generator& generator() { return *gen_; }
  const Generator& generator() const { return *gen_; }
  Discriminator& discriminator() { return *disc_; }
  const Discriminator& discriminator() const { return *disc_; }

  // Writes every ledger row to out_dir/ledger.csv; checkpoints go to
  // out_dir/checkpoints. Without a ledger the phases run silently.
  void open_ledger(std::size_t keep_steps = 0);
  RunLedger* ledger() { return ledger_ ? &*ledger_ : nullptr; }

  // Algorithm 1, phase by phase.
  PhaseResult pretrain_generator();
  PhaseResult pretrain_discriminator();
  PhaseResult adversarial();
  RunLedger& run_algorithm1();

  // Optional per-epoch hook for phase 1 (epoch index, trainer).
  std::function<void(std::size_t, const Trainer&)> on_epoch;

  std::size_t adversarial_budget() const;
  std::size_t adversarial_steps_done() const { return adv_step_; }
  // Ledger rows written so far across all phases.
  std::size_t global_step() const { return global_step_; }

  // Mean per-token teacher-forced accuracy over the training pairs.
  double train_accuracy() const;
  // Greedy captions for a split.
  std::vector<std::string> caption_split(const std::vector<ToyScene>& scenes) const;
  MetricReport evaluate(const std::vector<ToyScene>& scenes) const;
  // Real-vs-fake accuracy of the discriminator at threshold 0.5 on one real
  // reference and one multinomial generator sample per scene.
  double discriminator_accuracy(const std::vector<ToyScene>& scenes, Rng& rng) const;

  void save(const std::filesystem::path& path, const std::string& kind);
  void load(const std::filesystem::path& path);
  std::filesystem::path checkpoint_dir() const { return config_.out_dir / "checkpoints"; }

 private:
  void init_models();
  void record(LedgerRow row);
  double d_step(Adam& opt, Rng& rng);
  std::vector<std::size_t> sample_scenes(Rng& rng) const;
  double probe_generator_loss() const;

  TrainConfig config_;
  LoadedDataset data_;
  Vocabulary vocab_;
  std::vector<TrainingPair> pairs_;
  std::vector<std::vector<std::size_t>> scene_pairs_;  // pair indices per train scene
  std::vector<std::size_t> eligible_;                  // train scenes with at least one pair
  std::unique_ptr<Generator> gen_;
  std::unique_ptr<Discriminator> disc_;
  std::optional<RunLedger> ledger_;

  // Adversarial phase state, persisted in checkpoints for resume.
  std::unique_ptr<Adam> opt_g_, opt_d_;
  std::unique_ptr<PolicyGradient> pg_;
  Rng adv_rng_;
  std::size_t adv_step_ = 0;
  std::vector<double> j_history_;
  std::size_t global_step_ = 0;
  bool converged_ = false;
};

// Side-by-side comparison of attention variants and object-slot counts, each
// trained with MLE under the same seeds and evaluated greedily on test.
struct AblationEntry {
  std::string variant;  // hierarchical, global_only, local_only, K=10, ...
  std::uint64_t seed = 0;
  MetricReport report;
};
std::vector<AblationEntry> ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                  const std::vector<std::size_t>& slot_counts = {10, 20, 30});
nlohmann::ordered_json ablation_json(const std::vector<AblationEntry>& entries);

// Reads candidate/reference JSON-lines files ({"id", "caption"} and
// {"id", "refs"}) and scores them.
MetricReport score_files(const std::filesystem::path& candidates, const std::filesystem::path& references);

}  // namespace hiercap
