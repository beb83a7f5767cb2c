#include "hiercap/toyscene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hiercap/vocab.hpp"

namespace hiercap {
namespace {

constexpr std::size_t kCoordChannels = 2;

// Fixed random prototypes shared by all scenes generated with one config.
struct FeatureBank {
  std::vector<std::vector<double>> obj_shape, obj_color, obj_size;
  std::vector<std::vector<double>> grid_shape, grid_color;
  std::vector<double> background;

  explicit FeatureBank(const ToySceneConfig& c) {
    Rng rng(c.feature_seed);
    auto vec = [&rng](std::size_t n, double sd) {
      std::vector<double> v(n);
      for (double& x : v) x = sd * rng.normal();
      return v;
    };
    const std::size_t content = c.global_dim - kCoordChannels;
    for (std::size_t i = 0; i < kShapes.size(); ++i) obj_shape.push_back(vec(c.local_dim, 0.5));
    for (std::size_t i = 0; i < kColors.size(); ++i) obj_color.push_back(vec(c.local_dim, 0.5));
    for (std::size_t i = 0; i < kSizes.size(); ++i) obj_size.push_back(vec(c.local_dim, 0.5));
    for (std::size_t i = 0; i < kShapes.size(); ++i) grid_shape.push_back(vec(content, 0.5));
    for (std::size_t i = 0; i < kColors.size(); ++i) grid_color.push_back(vec(content, 0.5));
    background = vec(content, 0.5);
  }

  std::vector<double> prototype(int shape, int color, int size) const {
    std::vector<double> v(obj_shape[0].size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = obj_shape[static_cast<std::size_t>(shape)][j] + obj_color[static_cast<std::size_t>(color)][j] +
             obj_size[static_cast<std::size_t>(size)][j];
    }
    return v;
  }
};

bool overlaps(const SceneObject& a, const SceneObject& b) {
  return a.row < b.row + b.extent() && b.row < a.row + a.extent() && a.col < b.col + b.extent() &&
         b.col < a.col + a.extent();
}

// Band membership for the subject / reference of each relation. Bands are
// disjoint, so the subject's position alone also determines the relation.
bool in_band(const SceneObject& o, int relation, bool subject, double side) {
  const double lo = 0.25 * (side - 1), hi = 0.75 * (side - 1);
  const double r = o.center_row(), c = o.center_col();
  const bool mid_r = r >= lo && r <= hi, mid_c = c >= lo && c <= hi;
  // For the reference object the band is the opposite one.
  const int rel = subject ? relation : (relation ^ 1);
  switch (rel) {
    case 0:  // left
      return c <= lo && mid_r;
    case 1:  // right
      return c >= hi && mid_r;
    case 2:  // top
      return r <= lo && mid_c;
    case 3:  // bottom
      return r >= hi && mid_c;
  }
  return false;
}

SceneObject random_placement(SceneObject o, Rng& rng, int side) {
  const int span = side - o.extent() + 1;
  o.row = static_cast<int>(rng.below(static_cast<std::size_t>(span)));
  o.col = static_cast<int>(rng.below(static_cast<std::size_t>(span)));
  return o;
}

std::string object_phrase(const SceneObject& o, bool with_size) {
  std::string s;
  if (with_size) s += std::string(kSizes[static_cast<std::size_t>(o.size)]) + " ";
  return s + kColors[static_cast<std::size_t>(o.color)] + " " + kShapes[static_cast<std::size_t>(o.shape)];
}

template <std::size_t N>
int index_of(const std::array<const char*, N>& names, const std::string& word) {
  for (std::size_t i = 0; i < N; ++i) {
    if (word == names[i]) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

void ToySceneConfig::validate() const {
  if (grid_side < 5) throw ConfigError("grid_side must be at least 5");
  if (global_dim <= kCoordChannels + 1) throw ConfigError("global_dim must exceed 3");
  if (local_dim < 2) throw ConfigError("local_dim must be at least 2");
  if (min_objects < 1 || max_objects < min_objects || max_objects > kShapes.size()) {
    throw ConfigError("object counts must satisfy 1 <= min_objects <= max_objects <= 8");
  }
  if (object_slots < max_objects) throw ConfigError("object_slots must hold every scene object");
  if (max_clutter < min_clutter) throw ConfigError("max_clutter must be >= min_clutter");
  if (noise < 0.0 || !std::isfinite(noise)) throw ConfigError("noise must be finite and non-negative");
  if (refs_per_scene < 1) throw ConfigError("refs_per_scene must be positive");
  if (variant_probability < 0.0 || variant_probability > 1.0) throw ConfigError("variant_probability must lie in [0,1]");
  if (max_train_len < 3) throw ConfigError("max_train_len too small for the grammar");
  if (!(coord_gain >= 0.0) || !std::isfinite(coord_gain)) throw ConfigError("coord_gain must be finite and non-negative");
  if (!(box_gain >= 0.0) || !std::isfinite(box_gain)) throw ConfigError("box_gain must be finite and non-negative");
  if (box_gain > 0.0 && local_dim < 3) throw ConfigError("box channels need local_dim of at least 3");
}

nlohmann::json ToySceneConfig::to_json() const {
  return {{"grid_side", grid_side},
          {"global_dim", global_dim},
          {"local_dim", local_dim},
          {"object_slots", object_slots},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"noise", noise},
          {"duplicate_probability", duplicate_probability},
          {"min_clutter", min_clutter},
          {"max_clutter", max_clutter},
          {"variant_probability", variant_probability},
          {"refs_per_scene", refs_per_scene},
          {"max_train_len", max_train_len},
          {"train_size", train_size},
          {"val_size", val_size},
          {"test_size", test_size},
          {"feature_seed", feature_seed},
          {"coord_gain", coord_gain},
          {"box_gain", box_gain}};
}

ToySceneConfig ToySceneConfig::from_json(const nlohmann::json& j) {
  ToySceneConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("grid_side", c.grid_side);
  get("global_dim", c.global_dim);
  get("local_dim", c.local_dim);
  get("object_slots", c.object_slots);
  get("min_objects", c.min_objects);
  get("max_objects", c.max_objects);
  get("noise", c.noise);
  get("duplicate_probability", c.duplicate_probability);
  get("min_clutter", c.min_clutter);
  get("max_clutter", c.max_clutter);
  get("variant_probability", c.variant_probability);
  get("refs_per_scene", c.refs_per_scene);
  get("max_train_len", c.max_train_len);
  get("train_size", c.train_size);
  get("val_size", c.val_size);
  get("test_size", c.test_size);
  get("feature_seed", c.feature_seed);
  get("coord_gain", c.coord_gain);
  get("box_gain", c.box_gain);
  c.validate();
  return c;
}

int spatial_relation(const SceneObject& a, const SceneObject& b) {
  const double dr = a.center_row() - b.center_row();
  const double dc = a.center_col() - b.center_col();
  if (std::abs(dc) >= std::abs(dr)) return dc < 0 ? 0 : 1;
  return dr < 0 ? 2 : 3;
}

std::string caption_for(const SceneGraph& graph, int variant) {
  const auto& objs = graph.objects;
  if (objs.empty()) throw ContractError("caption_grammar: scene has no objects");
  if (objs.size() == 1) return "a " + object_phrase(objs[0], false);
  const std::string rel = kRelations[static_cast<std::size_t>(graph.relation)];
  std::string s;
  switch (variant) {
    case 0:
      s = "a " + object_phrase(objs[0], true) + " is " + rel + " a " + object_phrase(objs[1], false);
      break;
    case 1:
      s = "there is a " + object_phrase(objs[0], true) + " " + rel + " a " + object_phrase(objs[1], false);
      break;
    case 2:
      s = "the " + object_phrase(objs[0], true) + " is " + rel + " the " + object_phrase(objs[1], false);
      break;
    default:
      throw ContractError("caption_grammar: unknown variant");
  }
  for (std::size_t k = 2; k < objs.size(); ++k) s += " and a " + object_phrase(objs[k], false);
  return s;
}

std::string caption_grammar(const SceneGraph& graph, Rng& rng, double variant_probability) {
  int variant = 0;
  if (graph.objects.size() > 1 && rng.bernoulli(variant_probability)) variant = 1 + static_cast<int>(rng.below(2));
  return caption_for(graph, variant);
}

std::optional<ParsedCaption> parse_caption(const std::string& caption) {
  const std::vector<std::string> w = tokenize(caption);
  std::size_t pos = 0;
  auto at = [&w](std::size_t i) -> std::string { return i < w.size() ? w[i] : std::string(); };
  auto object = [&](bool allow_size, ParsedCaption& out, bool record_size) -> bool {
    if (allow_size) {
      const int size = index_of(kSizes, at(pos));
      if (size >= 0) {
        if (record_size) out.subject_size = size;
        ++pos;
      }
    }
    const int color = index_of(kColors, at(pos));
    const int shape = index_of(kShapes, at(pos + 1));
    if (color < 0 || shape < 0) return false;
    out.mentions.emplace_back(color, shape);
    pos += 2;
    return true;
  };
  ParsedCaption out;
  const bool there = at(0) == "there";
  if (there) {
    if (at(1) != "is") return std::nullopt;
    pos = 2;
  }
  const std::string det = at(pos);
  if (det != "a" && det != "the") return std::nullopt;
  ++pos;
  if (!object(true, out, true)) return std::nullopt;
  if (pos == w.size()) return out.subject_size ? std::nullopt : std::optional(out);
  if (!out.subject_size) return std::nullopt;
  if (!there) {
    if (at(pos) != "is") return std::nullopt;
    ++pos;
  }
  for (std::size_t r = 0; r < kRelations.size(); ++r) {
    const std::vector<std::string> rw = tokenize(kRelations[r]);
    bool match = true;
    for (std::size_t k = 0; k < rw.size(); ++k) match = match && at(pos + k) == rw[k];
    if (match) {
      out.relation = static_cast<int>(r);
      pos += rw.size();
      break;
    }
  }
  if (out.relation < 0) return std::nullopt;
  if (at(pos) != "a" && at(pos) != "the") return std::nullopt;
  ++pos;
  if (!object(false, out, false)) return std::nullopt;
  while (pos < w.size()) {
    if (at(pos) != "and" || at(pos + 1) != "a") return std::nullopt;
    pos += 2;
    if (!object(false, out, false)) return std::nullopt;
  }
  return out;
}

bool caption_matches(const ParsedCaption& parsed, const SceneGraph& graph) {
  if (parsed.mentions.size() != graph.objects.size()) return false;
  for (std::size_t k = 0; k < graph.objects.size(); ++k) {
    if (parsed.mentions[k].first != graph.objects[k].color || parsed.mentions[k].second != graph.objects[k].shape) {
      return false;
    }
  }
  if (graph.objects.size() == 1) return parsed.relation < 0;
  return parsed.relation == graph.relation && parsed.subject_size == graph.objects[0].size;
}

std::vector<double> object_prototype(const ToySceneConfig& config, int shape, int color, int size) {
  return FeatureBank(config).prototype(shape, color, size);
}

namespace {

ToyScene build_scene(const ToySceneConfig& c, const FeatureBank& bank, std::uint64_t seed, const std::string& id) {
  Rng rng(seed);
  const int side = static_cast<int>(c.grid_side);
  const std::size_t n = c.min_objects + rng.below(c.max_objects - c.min_objects + 1);

  std::vector<int> shapes(kShapes.size());
  std::iota(shapes.begin(), shapes.end(), 0);
  for (std::size_t i = 0; i < n; ++i) std::swap(shapes[i], shapes[i + rng.below(shapes.size() - i)]);
  shapes.resize(n);
  std::sort(shapes.begin(), shapes.end());

  ToyScene scene;
  scene.id = id;
  SceneGraph& g = scene.graph;
  for (int shape : shapes) {
    SceneObject o;
    o.shape = shape;
    o.color = static_cast<int>(rng.below(kColors.size()));
    o.size = static_cast<int>(rng.below(kSizes.size()));
    g.objects.push_back(o);
  }

  // Placement by rejection; the first two objects carry the relation.
  if (n >= 2) g.relation = static_cast<int>(rng.below(kRelations.size()));
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw ConfigError("scene placement failed; grid too small for the object count");
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      g.objects[i] = random_placement(g.objects[i], rng, side);
      for (std::size_t j = 0; j < i && ok; ++j) ok = !overlaps(g.objects[i], g.objects[j]);
    }
    if (!ok) continue;
    if (n >= 2) {
      const SceneObject& s = g.objects[0];
      const SceneObject& r = g.objects[1];
      if (!in_band(s, g.relation, true, side) || !in_band(r, g.relation, false, side)) continue;
      if (spatial_relation(s, r) != g.relation) continue;
      const double dr = std::abs(s.center_row() - r.center_row());
      const double dc = std::abs(s.center_col() - r.center_col());
      if (std::abs(dr - dc) < 1.0) continue;
    }
    break;
  }

  // Global grid: two coordinate channels, then content (objects or background).
  const std::size_t L = c.cells(), D = c.global_dim, content = D - kCoordChannels;
  std::vector<double> grid(L * D, 0.0);
  for (int r = 0; r < side; ++r) {
    for (int col = 0; col < side; ++col) {
      double* cell = grid.data() + static_cast<std::size_t>(r * side + col) * D;
      cell[0] = c.coord_gain * (2.0 * r / (side - 1) - 1.0);
      cell[1] = c.coord_gain * (2.0 * col / (side - 1) - 1.0);
      bool occupied = false;
      for (const auto& o : g.objects) {
        if (r < o.row || r >= o.row + o.extent() || col < o.col || col >= o.col + o.extent()) continue;
        occupied = true;
        const double amp = o.size == 1 ? 1.0 : 0.8;
        for (std::size_t j = 0; j < content; ++j) {
          cell[kCoordChannels + j] += amp * (bank.grid_shape[static_cast<std::size_t>(o.shape)][j] +
                                             bank.grid_color[static_cast<std::size_t>(o.color)][j]);
        }
      }
      if (!occupied) {
        for (std::size_t j = 0; j < content; ++j) cell[kCoordChannels + j] = bank.background[j];
      }
      for (std::size_t j = 0; j < D; ++j) cell[j] += c.noise * rng.normal();
    }
  }
  scene.grid = Tensor::from({L, D}, std::move(grid));

  // Detections: primary boxes, occasional weaker duplicates, background clutter.
  struct Detection {
    double confidence;
    std::vector<double> feature;
  };
  std::vector<Detection> dets;
  const std::size_t Dl = c.local_dim;
  auto noisy = [&](std::vector<double> v, double gain, double sd) {
    for (double& x : v) x = gain * x + sd * rng.normal();
    return v;
  };
  // Box centre in [-1, 1] written over the last two channels.
  auto boxed = [&](std::vector<double> v, double row, double col) {
    if (c.box_gain > 0.0) {
      v[Dl - 2] = c.box_gain * (2.0 * row / (side - 1) - 1.0) + c.noise * rng.normal();
      v[Dl - 1] = c.box_gain * (2.0 * col / (side - 1) - 1.0) + c.noise * rng.normal();
    }
    return v;
  };
  for (const auto& o : g.objects) {
    const auto proto = bank.prototype(o.shape, o.color, o.size);
    dets.push_back({(o.size == 1 ? 0.85 : 0.7) + 0.1 * rng.normal(),
                    boxed(noisy(proto, 1.0, c.noise), o.center_row(), o.center_col())});
    if (rng.bernoulli(c.duplicate_probability)) {
      dets.push_back({0.45 + 0.15 * rng.normal(), boxed(noisy(proto, 0.6, 4 * c.noise), o.center_row(), o.center_col())});
    }
  }
  const std::size_t clutter = c.min_clutter + rng.below(c.max_clutter - c.min_clutter + 1);
  for (std::size_t k = 0; k < clutter; ++k) {
    std::vector<double> f(Dl);
    for (double& x : f) x = 0.6 * rng.normal();
    if (c.box_gain > 0.0) f = boxed(std::move(f), rng.uniform(0, side - 1), rng.uniform(0, side - 1));
    dets.push_back({rng.uniform(0.05, 0.75), std::move(f)});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  const std::size_t K = c.object_slots;
  std::vector<double> objects(K * Dl, 0.0);
  scene.valid.assign(K, 0);
  for (std::size_t k = 0; k < std::min(K, dets.size()); ++k) {
    std::copy(dets[k].feature.begin(), dets[k].feature.end(), objects.begin() + static_cast<std::ptrdiff_t>(k * Dl));
    scene.valid[k] = 1;
  }
  scene.objects = Tensor::from({K, Dl}, std::move(objects));

  for (std::size_t k = 0; k < c.refs_per_scene; ++k) {
    std::string ref = caption_grammar(g, rng, c.variant_probability);
    if (tokenize(ref).size() > c.max_train_len) throw ConfigError("grammar produced a caption over max_train_len");
    scene.refs.push_back(std::move(ref));
  }
  return scene;
}

std::vector<ToyScene> build_split(const ToySceneConfig& c, const FeatureBank& bank, std::uint64_t seed,
                                  std::uint64_t stream, std::size_t count, const std::string& name) {
  std::vector<ToyScene> out;
  out.reserve(count);
  const std::uint64_t split_seed = Rng::derive(seed, stream).next();
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05zu", name.c_str(), i);
    out.push_back(build_scene(c, bank, Rng::derive(split_seed, i).next(), id));
  }
  return out;
}

}  // namespace

ToyScene generate_scene(const ToySceneConfig& config, std::uint64_t seed, const std::string& id) {
  config.validate();
  return build_scene(config, FeatureBank(config), seed, id);
}

DatasetSplit generate_dataset(const ToySceneConfig& config, std::uint64_t seed) {
  config.validate();
  const FeatureBank bank(config);
  DatasetSplit split;
  split.train = build_split(config, bank, seed, 1, config.train_size, "train");
  split.val = build_split(config, bank, seed, 2, config.val_size, "val");
  split.test = build_split(config, bank, seed, 3, config.test_size, "test");
  return split;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * sizeof(double));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out.push_back(kB64[(triple >> 18) & 63]);
    out.push_back(kB64[(triple >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kB64[(triple >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kB64[triple & 63] : '=');
  }
  return out;
}

std::vector<double> base64_decode(const std::string& text) {
  auto value = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw DataError("base64 payload length is not a multiple of 4");
  std::vector<unsigned char> bytes;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      if (text[i + k] == '=') {
        v[k] = 0;
        ++pad;
      } else if ((v[k] = value(text[i + k])) < 0) {
        throw DataError("invalid base64 character");
      }
    }
    const std::uint32_t triple = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    bytes.push_back(static_cast<unsigned char>(triple >> 16));
    if (pad < 2) bytes.push_back(static_cast<unsigned char>(triple >> 8));
    if (pad < 1) bytes.push_back(static_cast<unsigned char>(triple));
  }
  if (bytes.size() % sizeof(double) != 0) throw DataError("base64 payload is not a float64 array");
  std::vector<double> values(bytes.size() / sizeof(double));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

nlohmann::json scene_to_json(const ToyScene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.graph.objects) {
    objects.push_back({{"shape", kShapes[static_cast<std::size_t>(o.shape)]},
                       {"color", kColors[static_cast<std::size_t>(o.color)]},
                       {"size", kSizes[static_cast<std::size_t>(o.size)]},
                       {"row", o.row},
                       {"col", o.col}});
  }
  nlohmann::json graph = {{"objects", objects}};
  graph["relation"] = scene.graph.relation >= 0 ? nlohmann::json(kRelations[static_cast<std::size_t>(scene.graph.relation)])
                                                : nlohmann::json(nullptr);
  nlohmann::json j;
  j["id"] = scene.id;
  j["grid_b64"] = base64_encode(scene.grid.data());
  j["objects_b64"] = base64_encode(scene.objects.data());
  j["valid_mask"] = std::vector<int>(scene.valid.begin(), scene.valid.end());
  j["refs"] = scene.refs;
  j["graph"] = graph;
  return j;
}

ToyScene scene_from_json(const nlohmann::json& j, const ToySceneConfig& config) {
  try {
    ToyScene s;
    s.id = j.at("id").get<std::string>();
    s.grid = Tensor::from({config.cells(), config.global_dim}, base64_decode(j.at("grid_b64").get<std::string>()));
    const auto mask = j.at("valid_mask").get<std::vector<int>>();
    s.valid.assign(mask.begin(), mask.end());
    s.objects = Tensor::from({s.valid.size(), config.local_dim}, base64_decode(j.at("objects_b64").get<std::string>()));
    s.refs = j.at("refs").get<std::vector<std::string>>();
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      for (const auto& o : g.at("objects")) {
        SceneObject obj;
        obj.shape = index_of(kShapes, o.at("shape").get<std::string>());
        obj.color = index_of(kColors, o.at("color").get<std::string>());
        obj.size = index_of(kSizes, o.at("size").get<std::string>());
        obj.row = o.at("row").get<int>();
        obj.col = o.at("col").get<int>();
        s.graph.objects.push_back(obj);
      }
      s.graph.relation = g.at("relation").is_null() ? -1 : index_of(kRelations, g.at("relation").get<std::string>());
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scene record: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("scene feature block has the wrong size: ") + e.what());
  }
}

void write_scenes(const std::filesystem::path& path, const std::vector<ToyScene>& scenes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

std::vector<ToyScene> read_scenes(const std::filesystem::path& path, const ToySceneConfig& config) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ToyScene> scenes;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    scenes.push_back(scene_from_json(j, config));
  }
  return scenes;
}

std::vector<std::string> all_references(const std::vector<ToyScene>& scenes) {
  std::vector<std::string> refs;
  for (const auto& s : scenes) refs.insert(refs.end(), s.refs.begin(), s.refs.end());
  return refs;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const ToySceneConfig& config,
                   int min_count) {
  std::filesystem::create_directories(dir);
  write_scenes(dir / "scenes.train.jsonl", split.train);
  write_scenes(dir / "scenes.val.jsonl", split.val);
  write_scenes(dir / "scenes.test.jsonl", split.test);
  const Vocabulary vocab = Vocabulary::build(all_references(split.train), min_count);
  std::ofstream(dir / "vocab.json") << vocab.to_json().dump(1) << '\n';
  std::ofstream(dir / "dataset.json") << config.to_json().dump(1) << '\n';
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DataError("dataset directory " + dir.string() + " has no dataset.json");
  LoadedDataset d;
  try {
    d.config = ToySceneConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset.json: ") + e.what());
  }
  d.split.train = read_scenes(dir / "scenes.train.jsonl", d.config);
  d.split.val = read_scenes(dir / "scenes.val.jsonl", d.config);
  d.split.test = read_scenes(dir / "scenes.test.jsonl", d.config);
  return d;
}

}  // namespace hiercap
