#include "hiercap/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hiercap/vocab.hpp"

namespace hiercap {

StreamMode parse_stream_mode(const std::string& name) {
  if (name == "hierarchical") return StreamMode::hierarchical;
  if (name == "global_only" || name == "global") return StreamMode::global_only;
  if (name == "local_only" || name == "local") return StreamMode::local_only;
  throw ConfigError("unknown generator mode '" + name + "'");
}

std::string to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::hierarchical:
      return "hierarchical";
    case StreamMode::global_only:
      return "global_only";
    case StreamMode::local_only:
      return "local_only";
  }
  return "?";
}

void GeneratorConfig::validate() const {
  if (vocab_size <= 3) throw ConfigError("generator vocabulary must contain at least one word besides the specials");
  if (embed_dim == 0 || hidden_dim == 0 || att_dim == 0 || global_dim == 0 || local_dim == 0) {
    throw ConfigError("generator dimensions must be positive");
  }
  if (object_slots == 0) throw ConfigError("object_slots must be positive");
  if (max_gen_len == 0) throw ConfigError("max_gen_len must be positive");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"att_dim", att_dim},
          {"global_dim", global_dim},
          {"local_dim", local_dim},
          {"object_slots", object_slots},
          {"max_gen_len", max_gen_len},
          {"mode", to_string(mode)},
          {"embed_in_global_input", embed_in_global_input},
          {"local_uses_current_global", local_uses_current_global},
          {"lstm_candidate_activation", to_string(candidate)},
          {"init_scale", init_scale}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", c.vocab_size);
  get("embed_dim", c.embed_dim);
  get("hidden_dim", c.hidden_dim);
  get("att_dim", c.att_dim);
  get("global_dim", c.global_dim);
  get("local_dim", c.local_dim);
  get("object_slots", c.object_slots);
  get("max_gen_len", c.max_gen_len);
  if (j.contains("mode")) c.mode = parse_stream_mode(j.at("mode").get<std::string>());
  get("embed_in_global_input", c.embed_in_global_input);
  get("local_uses_current_global", c.local_uses_current_global);
  if (j.contains("lstm_candidate_activation")) {
    c.candidate = parse_candidate_activation(j.at("lstm_candidate_activation").get<std::string>());
  }
  get("init_scale", c.init_scale);
  c.validate();
  return c;
}

SceneBatch make_batch(const std::vector<const ToyScene*>& scenes, std::size_t object_slots) {
  if (scenes.empty()) throw ContractError("make_batch: no scenes");
  const std::size_t B = scenes.size();
  const std::size_t L = scenes[0]->grid.dim(0), Dg = scenes[0]->grid.dim(1);
  const std::size_t Dl = scenes[0]->objects.dim(1), K = object_slots;
  std::vector<double> grid, objects;
  grid.reserve(B * L * Dg);
  objects.reserve(B * K * Dl);
  Mask valid;
  valid.reserve(B * K);
  for (const ToyScene* s : scenes) {
    if (s->grid.dim(0) != L || s->grid.dim(1) != Dg || s->objects.dim(1) != Dl) {
      throw DimensionError("make_batch: scenes have differing feature shapes");
    }
    if (s->objects.dim(0) < K) {
      throw DimensionError("make_batch: scene " + s->id + " has fewer than " + std::to_string(K) + " object slots");
    }
    const auto g = s->grid.data();
    grid.insert(grid.end(), g.begin(), g.end());
    const auto o = s->objects.data();
    objects.insert(objects.end(), o.begin(), o.begin() + static_cast<std::ptrdiff_t>(K * Dl));
    bool any = false;
    for (std::size_t k = 0; k < K; ++k) {
      valid.push_back(s->valid[k]);
      any = any || s->valid[k];
    }
    if (!any) throw ContractError("make_batch: scene " + s->id + " has no valid object in the first K slots");
  }
  SceneBatch batch;
  batch.grid = Tensor::from({B, L, Dg}, std::move(grid));
  batch.objects = Tensor::from({B, K, Dl}, std::move(objects));
  batch.valid = std::move(valid);
  return batch;
}

SceneBatch make_batch(const std::vector<ToyScene>& scenes, std::size_t object_slots) {
  std::vector<const ToyScene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  return make_batch(ptrs, object_slots);
}

namespace {
Mask take_mask(const Mask& mask, std::size_t width, std::span<const std::size_t> rows) {
  if (mask.empty()) return {};
  Mask out;
  out.reserve(rows.size() * width);
  for (std::size_t r : rows) out.insert(out.end(), mask.begin() + r * width, mask.begin() + (r + 1) * width);
  return out;
}

LstmState take_lstm(const LstmState& s, std::span<const std::size_t> rows) {
  if (!s.h.defined()) return {};
  return {take_rows(s.h, rows), take_rows(s.c, rows)};
}

AttentionKeys take_keys(const AttentionKeys& k, std::span<const std::size_t> rows) {
  return {take_rows(k.feats, rows), take_rows(k.projected, rows), take_mask(k.mask, k.feats.dim(1), rows)};
}
}  // namespace

SceneBatch take_scenes(const SceneBatch& batch, std::span<const std::size_t> rows) {
  return {take_rows(batch.grid, rows), take_rows(batch.objects, rows), take_mask(batch.valid, batch.objects.dim(1), rows)};
}

GeneratorState take_state(const GeneratorState& state, std::span<const std::size_t> rows) {
  return {take_lstm(state.global, rows), take_lstm(state.local, rows)};
}

EncodedBatch take_encoded(const EncodedBatch& enc, std::span<const std::size_t> rows) {
  EncodedBatch out;
  out.size = rows.size();
  if (enc.global) out.global = take_keys(*enc.global, rows);
  if (enc.local) out.local = take_keys(*enc.local, rows);
  return out;
}

Generator::Generator(GeneratorConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const bool use_global = c.mode != StreamMode::local_only;
  const bool use_local = c.mode != StreamMode::global_only;
  embedding_ = Embedding::create(c.vocab_size, c.embed_dim, rng, c.init_scale);
  params_.emplace_back("gen.embed", embedding_.table);
  if (use_global) {
    const std::size_t in = c.global_dim + (c.embed_in_global_input ? c.embed_dim : 0);
    lstm_g_ = LstmCell::create(in, c.hidden_dim, rng, c.init_scale, c.candidate);
    att_g_ = AttentionParams::create(c.global_dim, c.hidden_dim, c.att_dim, rng, c.init_scale);
    lstm_g_->collect("gen.lstm_g.", params_);
    att_g_->collect("gen.att_g.", params_);
  }
  if (use_local) {
    // Without a global stream the previous word embedding takes the place of
    // the global hidden state in the local context.
    const std::size_t ctx = use_global ? c.hidden_dim : c.embed_dim;
    lstm_l_ = LstmCell::create(c.local_dim + ctx, c.hidden_dim, rng, c.init_scale, c.candidate);
    att_l_ = AttentionParams::create(c.local_dim, c.hidden_dim, c.att_dim, rng, c.init_scale);
    lstm_l_->collect("gen.lstm_l.", params_);
    att_l_->collect("gen.att_l.", params_);
  }
  const std::size_t out_dim = (use_global && use_local) ? 2 * c.hidden_dim : c.hidden_dim;
  w_p_ = uniform_param({out_dim, c.vocab_size}, c.init_scale, rng);
  params_.emplace_back("gen.W_p", w_p_);
  emittable_.assign(c.vocab_size, 1);
  emittable_[kNullId] = 0;
  emittable_[kStartId] = 0;
}

EncodedBatch Generator::encode(const SceneBatch& batch) const {
  EncodedBatch enc;
  enc.size = batch.size();
  if (att_g_) enc.global = prepare_keys(*att_g_, batch.grid);
  if (att_l_) enc.local = prepare_keys(*att_l_, batch.objects, batch.valid);
  return enc;
}

GeneratorState Generator::init_state(std::size_t batch) const {
  GeneratorState s;
  if (lstm_g_) s.global = LstmState::zeros(batch, config_.hidden_dim);
  if (lstm_l_) s.local = LstmState::zeros(batch, config_.hidden_dim);
  return s;
}

StepOutput Generator::step(const EncodedBatch& enc, const GeneratorState& state, std::span<const int> input) const {
  if (input.size() != enc.size) throw DimensionError("generator step: one input token per batch row required");
  for (int tok : input) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= config_.vocab_size) {
      throw VocabularyError("generator step: token id " + std::to_string(tok) + " out of range");
    }
  }
  StepOutput out;
  const Tensor e = embed(embedding_, input);
  if (lstm_g_) {
    AttentionWeights a = attend(*att_g_, *enc.global, state.global.h);
    const Tensor z = config_.embed_in_global_input ? concat(e, a.z, 1) : a.z;
    out.state.global = lstm_step(*lstm_g_, z, state.global);
    out.alpha_global = a.alpha;
  }
  if (lstm_l_) {
    AttentionWeights a = attend(*att_l_, *enc.local, state.local.h);
    const Tensor& ctx = !lstm_g_ ? e : (config_.local_uses_current_global ? out.state.global.h : state.global.h);
    out.state.local = lstm_step(*lstm_l_, concat(a.z, ctx, 1), state.local);
    out.alpha_local = a.alpha;
  }
  Tensor h_out;
  if (lstm_g_ && lstm_l_) {
    h_out = concat(out.state.global.h, out.state.local.h, 1);
  } else {
    h_out = lstm_g_ ? out.state.global.h : out.state.local.h;
  }
  out.logits = matmul(h_out, w_p_);
  return out;
}

Tensor Generator::sequence_nll(const SceneBatch& batch, const std::vector<TokenSeq>& sequences,
                               const std::vector<std::vector<double>>& weights) const {
  const std::size_t B = batch.size();
  if (sequences.size() != B || weights.size() != B) {
    throw DimensionError("sequence_nll: one sequence and weight row per scene required");
  }
  std::size_t T = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (sequences[b].empty()) throw ContractError("sequence_nll: empty caption");
    if (weights[b].size() != sequences[b].size()) throw DimensionError("sequence_nll: weights must align with tokens");
    T = std::max(T, sequences[b].size());
  }
  EncodedBatch enc = encode(batch);
  GeneratorState state = init_state(B);
  std::vector<std::size_t> rows(B);  // active row -> original row
  std::iota(rows.begin(), rows.end(), 0);
  Tensor total;
  for (std::size_t t = 0; t < T; ++t) {
    // Drop rows whose caption has ended.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (sequences[rows[i]].size() > t) keep.push_back(i);
    }
    if (keep.size() != rows.size()) {
      state = take_state(state, keep);
      enc = take_encoded(enc, keep);
      std::vector<std::size_t> next;
      for (std::size_t i : keep) next.push_back(rows[i]);
      rows = std::move(next);
    }
    std::vector<int> input, target;
    std::vector<double> w;
    for (std::size_t r : rows) {
      input.push_back(t == 0 ? kStartId : sequences[r][t - 1]);
      target.push_back(sequences[r][t]);
      w.push_back(weights[r][t]);
    }
    StepOutput so = step(enc, state, input);
    const Tensor nll = weighted_nll(so.logits, target, w, emittable_);
    total = total.defined() ? add(total, nll) : nll;
    state = std::move(so.state);
  }
  return total;
}

Tensor Generator::mle_loss(const SceneBatch& batch, const std::vector<TokenSeq>& references) const {
  std::vector<std::vector<double>> w;
  for (const auto& r : references) w.emplace_back(r.size(), 1.0);
  return sequence_nll(batch, references, w);
}

namespace {
int argmax_allowed(std::span<const double> row, const Mask& allowed) {
  int best = -1;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!allowed[j]) continue;
    if (best < 0 || row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}
}  // namespace

Generator::Accuracy Generator::teacher_forced_accuracy(const SceneBatch& batch,
                                                       const std::vector<TokenSeq>& references) const {
  const std::size_t B = batch.size();
  if (references.size() != B) throw DimensionError("teacher_forced_accuracy: one reference per scene required");
  std::size_t T = 0;
  for (const auto& r : references) T = std::max(T, r.size());
  const EncodedBatch enc = encode(batch);
  GeneratorState state = init_state(B);
  const std::size_t V = config_.vocab_size;
  Accuracy acc;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<int> input(B, kNullId);
    for (std::size_t b = 0; b < B; ++b) {
      if (t == 0) {
        input[b] = kStartId;
      } else if (t - 1 < references[b].size()) {
        input[b] = references[b][t - 1];
      }
    }
    StepOutput so = step(enc, state, input);
    const auto logits = so.logits.data();
    for (std::size_t b = 0; b < B; ++b) {
      if (t >= references[b].size()) continue;
      ++acc.total;
      if (argmax_allowed(logits.subspan(b * V, V), emittable_) == references[b][t]) ++acc.correct;
    }
    state = std::move(so.state);
  }
  return acc;
}

int Generator::select(std::span<const double> row, SampleMode mode, Rng& rng) const {
  if (row.size() != config_.vocab_size) throw DimensionError("select: logits row does not match the vocabulary");
  if (mode == SampleMode::greedy) return argmax_allowed(row, emittable_);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (emittable_[j]) mx = std::max(mx, row[j]);
  }
  std::vector<double> w(row.size(), 0.0);
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (emittable_[j]) w[j] = std::exp(row[j] - mx);
  }
  return static_cast<int>(rng.categorical(w));
}

namespace {

struct DecodeLoop {
  const Generator& gen;
  AttentionTrace* trace;
  std::size_t trace_offset;

  std::vector<TokenSeq> run(EncodedBatch enc, GeneratorState state, std::vector<int> input,
                            std::vector<std::size_t> emitted, SampleMode mode, Rng& rng) const {
    const std::size_t B = input.size();
    const std::size_t max_len = gen.config().max_gen_len;
    const std::size_t V = gen.config().vocab_size;
    std::vector<TokenSeq> out(B);
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < B; ++b) {
      if (emitted[b] < max_len) rows.push_back(b);
    }
    if (rows.size() != B) {
      if (rows.empty()) return out;
      state = take_state(state, rows);
      enc = take_encoded(enc, rows);
      std::vector<int> in2;
      for (std::size_t r : rows) in2.push_back(input[r]);
      input = std::move(in2);
    }
    for (std::size_t step = 0; !rows.empty(); ++step) {
      StepOutput so = gen.step(enc, state, input);
      const auto logits = so.logits.data();
      std::vector<std::size_t> keep;
      std::vector<int> next;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t b = rows[i];
        if (trace) {
          if (so.alpha_global.defined()) {
            const std::size_t L = so.alpha_global.dim(1);
            trace->write(trace_offset + b, step, "global", so.alpha_global.data().subspan(i * L, L));
          }
          if (so.alpha_local.defined()) {
            const std::size_t K = so.alpha_local.dim(1);
            trace->write(trace_offset + b, step, "local", so.alpha_local.data().subspan(i * K, K));
          }
        }
        const int tok = gen.select(logits.subspan(i * V, V), mode, rng);
        out[b].push_back(tok);
        if (tok != kEndId && ++emitted[b] < max_len) {
          keep.push_back(i);
          next.push_back(tok);
        }
      }
      if (keep.empty()) break;
      if (keep.size() != rows.size()) {
        state = take_state(so.state, keep);
        enc = take_encoded(enc, keep);
        std::vector<std::size_t> r2;
        for (std::size_t i : keep) r2.push_back(rows[i]);
        rows = std::move(r2);
      } else {
        state = std::move(so.state);
      }
      input = std::move(next);
    }
    return out;
  }
};

}  // namespace

std::vector<TokenSeq> Generator::generate(const SceneBatch& batch, SampleMode mode, Rng& rng, AttentionTrace* trace,
                                          std::size_t trace_offset) const {
  const std::size_t B = batch.size();
  return DecodeLoop{*this, trace, trace_offset}.run(encode(batch), init_state(B), std::vector<int>(B, kStartId),
                                                    std::vector<std::size_t>(B, 0), mode, rng);
}

std::vector<TokenSeq> Generator::continue_rows(const EncodedBatch& enc, GeneratorState state, std::vector<int> input,
                                               std::vector<std::size_t> emitted, SampleMode mode, Rng& rng) const {
  if (input.size() != enc.size || emitted.size() != enc.size) {
    throw DimensionError("continue_rows: one input and prefix length per row required");
  }
  return DecodeLoop{*this, nullptr, 0}.run(enc, std::move(state), std::move(input), std::move(emitted), mode, rng);
}

std::vector<GeneratorState> Generator::replay_states(const EncodedBatch& enc,
                                                     const std::vector<TokenSeq>& sequences) const {
  const std::size_t B = enc.size;
  if (sequences.size() != B) throw DimensionError("replay_states: one sequence per row required");
  std::size_t T = 0;
  for (const auto& s : sequences) T = std::max(T, s.size());
  std::vector<GeneratorState> states;
  GeneratorState state = init_state(B);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<int> input(B, kNullId);
    for (std::size_t b = 0; b < B; ++b) {
      if (t == 0) {
        input[b] = kStartId;
      } else if (t - 1 < sequences[b].size()) {
        input[b] = sequences[b][t - 1];
      }
    }
    state = step(enc, state, input).state;
    states.push_back(state);
  }
  return states;
}

}  // namespace hiercap
