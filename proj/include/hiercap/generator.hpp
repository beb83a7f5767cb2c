#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiercap/attention.hpp"
#include "hiercap/toyscene.hpp"

namespace hiercap {

enum class StreamMode { hierarchical, global_only, local_only };
StreamMode parse_stream_mode(const std::string& name);
std::string to_string(StreamMode mode);

enum class SampleMode { greedy, multinomial };

struct GeneratorConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 512;
  std::size_t att_dim = 64;
  std::size_t global_dim = 32;
  std::size_t local_dim = 48;
  std::size_t object_slots = 30;  // top-K detections the local stream sees
  std::size_t max_gen_len = 30;
  StreamMode mode = StreamMode::hierarchical;
  // Global LSTM input is Concat(embed(prev), z_t); false feeds z_t alone.
  bool embed_in_global_input = true;
  // Local context concatenates the global h_t instead of h_{t-1}.
  bool local_uses_current_global = false;
  CandidateActivation candidate = CandidateActivation::tanh;
  double init_scale = 0.08;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Features of B scenes stacked for batched decoding, objects truncated to the
// first K (highest-confidence) slots.
struct SceneBatch {
  Tensor grid;     // [B, L, D_g]
  Tensor objects;  // [B, K, D_l]
  Mask valid;      // B*K flags
  std::size_t size() const { return grid.dim(0); }
};

SceneBatch make_batch(const std::vector<const ToyScene*>& scenes, std::size_t object_slots);
SceneBatch make_batch(const std::vector<ToyScene>& scenes, std::size_t object_slots);
// Rows of a batch by index, with repetition.
SceneBatch take_scenes(const SceneBatch& batch, std::span<const std::size_t> rows);

struct GeneratorState {
  LstmState global;  // h_t, c_t
  LstmState local;   // h^d_t, c^d_t
};

// Attention keys computed once per batch.
struct EncodedBatch {
  std::optional<AttentionKeys> global;
  std::optional<AttentionKeys> local;
  std::size_t size = 0;
};

struct StepOutput {
  Tensor logits;  // [B, V]
  GeneratorState state;
  Tensor alpha_global;  // [B, L], undefined when the stream is ablated
  Tensor alpha_local;   // [B, K]
};

// Tokens are id sequences without START; a finished caption ends with END.
using TokenSeq = std::vector<int>;

class Generator {
 public:
  Generator(GeneratorConfig config, Rng& rng);

  const GeneratorConfig& config() const { return config_; }
  // Parameters named gen.embed, gen.lstm_g.*, gen.lstm_l.*, gen.att_g.*,
  // gen.att_l.*, gen.W_p (ablated streams omit their tensors).
  const NamedTensors& parameters() const { return params_; }

  // Softmax support: every token except NULL and START.
  const Mask& emittable() const { return emittable_; }

  EncodedBatch encode(const SceneBatch& batch) const;
  GeneratorState init_state(std::size_t batch) const;
  StepOutput step(const EncodedBatch& enc, const GeneratorState& state, std::span<const int> input) const;

  // sum over rows and positions of weight * -log P(target); weights[b][t]
  // align with sequences[b][t]. Teacher forced from START.
  Tensor sequence_nll(const SceneBatch& batch, const std::vector<TokenSeq>& sequences,
                      const std::vector<std::vector<double>>& weights) const;
  // Negative log likelihood of the references, summed over tokens.
  Tensor mle_loss(const SceneBatch& batch, const std::vector<TokenSeq>& references) const;

  struct Accuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  };
  // Teacher-forced next-token argmax accuracy, END included.
  Accuracy teacher_forced_accuracy(const SceneBatch& batch, const std::vector<TokenSeq>& references) const;

  std::vector<TokenSeq> generate(const SceneBatch& batch, SampleMode mode, Rng& rng,
                                 AttentionTrace* trace = nullptr, std::size_t trace_offset = 0) const;

  // Continues row b from `state` after feeding input[b]; prefix[b] tokens are
  // already emitted (input[b] being the last of them). Stops at END or when a
  // row holds max_gen_len tokens. Returns only the new tokens.
  std::vector<TokenSeq> continue_rows(const EncodedBatch& enc, GeneratorState state, std::vector<int> input,
                                      std::vector<std::size_t> emitted, SampleMode mode, Rng& rng) const;

  // Chooses the next token from logits restricted to emittable ids.
  int select(std::span<const double> logits_row, SampleMode mode, Rng& rng) const;

  // Per-step states after each input of a sampled sequence: states[t] is
  // the state after feeding the t-th input (START first) for every row.
  std::vector<GeneratorState> replay_states(const EncodedBatch& enc, const std::vector<TokenSeq>& sequences) const;

 private:
  GeneratorConfig config_;
  Embedding embedding_;
  std::optional<LstmCell> lstm_g_, lstm_l_;
  std::optional<AttentionParams> att_g_, att_l_;
  Tensor w_p_;
  NamedTensors params_;
  Mask emittable_;
};

GeneratorState take_state(const GeneratorState& state, std::span<const std::size_t> rows);
EncodedBatch take_encoded(const EncodedBatch& enc, std::span<const std::size_t> rows);

}  // namespace hiercap
