#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiercap/ops.hpp"
#include "hiercap/rng.hpp"

namespace hiercap {

inline constexpr std::array<const char*, 8> kShapes = {"circle", "square",  "triangle", "star",
                                                        "heart",  "diamond", "cross",    "hexagon"};
inline constexpr std::array<const char*, 6> kColors = {"red", "green", "blue", "yellow", "purple", "orange"};
inline constexpr std::array<const char*, 2> kSizes = {"small", "big"};
inline constexpr std::array<const char*, 4> kRelations = {"left of", "right of", "above", "below"};

struct ToySceneConfig {
  std::size_t grid_side = 7;  // L = grid_side^2 cells
  std::size_t global_dim = 32;
  std::size_t local_dim = 48;
  std::size_t object_slots = 30;  // K
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  double noise = 0.05;
  double duplicate_probability = 0.5;
  std::size_t min_clutter = 4;
  std::size_t max_clutter = 14;
  double variant_probability = 0.25;  // chance a reference uses a non-canonical phrasing
  std::size_t refs_per_scene = 3;
  std::size_t max_train_len = 20;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  std::uint64_t feature_seed = 20240611;  // prototypes shared by every split
  double coord_gain = 1.0;  // amplitude of the grid's two coordinate channels
  double box_gain = 2.0;    // > 0: the last two detection channels hold the box centre times this

  std::size_t cells() const { return grid_side * grid_side; }
  void validate() const;
  nlohmann::json to_json() const;
  static ToySceneConfig from_json(const nlohmann::json& j);
};

struct SceneObject {
  int shape = 0;
  int color = 0;
  int size = 0;  // 0 small (one cell), 1 big (2x2 cells)
  int row = 0;   // top-left cell
  int col = 0;

  int extent() const { return size == 1 ? 2 : 1; }
  double center_row() const { return row + (extent() - 1) / 2.0; }
  double center_col() const { return col + (extent() - 1) / 2.0; }
};

// Scene graph: objects listed in canonical (ascending shape) order; the
// relation holds between objects[0] and objects[1].
struct SceneGraph {
  std::vector<SceneObject> objects;
  int relation = -1;  // index into kRelations, -1 for single-object scenes
};

struct ToyScene {
  std::string id;
  SceneGraph graph;
  Tensor grid;     // [L, D_g]
  Tensor objects;  // [K, D_l], detections sorted by confidence
  Mask valid;      // K flags
  std::vector<std::string> refs;
};

struct DatasetSplit {
  std::vector<ToyScene> train, val, test;
};

// Relation of a to b from their centers along the dominant axis.
int spatial_relation(const SceneObject& a, const SceneObject& b);

// Caption sampled from the scene grammar; `variant` selects the phrasing
// (0 canonical, 1 "there is ...", 2 "the ...").
std::string caption_for(const SceneGraph& graph, int variant);
std::string caption_grammar(const SceneGraph& graph, Rng& rng, double variant_probability = 0.25);

struct ParsedCaption {
  std::vector<std::pair<int, int>> mentions;  // (color, shape) in caption order
  std::optional<int> subject_size;
  int relation = -1;
};
// Inverse of the grammar; nullopt when the caption is not a grammar sentence.
std::optional<ParsedCaption> parse_caption(const std::string& caption);
// True when a parsed caption agrees with the scene graph.
bool caption_matches(const ParsedCaption& parsed, const SceneGraph& graph);

ToyScene generate_scene(const ToySceneConfig& config, std::uint64_t seed, const std::string& id);
DatasetSplit generate_dataset(const ToySceneConfig& config, std::uint64_t seed);

// Deterministic feature prototype of an object (noise free), D_l channels.
std::vector<double> object_prototype(const ToySceneConfig& config, int shape, int color, int size);

std::string base64_encode(std::span<const double> values);
std::vector<double> base64_decode(const std::string& text);

nlohmann::json scene_to_json(const ToyScene& scene);
ToyScene scene_from_json(const nlohmann::json& j, const ToySceneConfig& config);

void write_scenes(const std::filesystem::path& path, const std::vector<ToyScene>& scenes);
std::vector<ToyScene> read_scenes(const std::filesystem::path& path, const ToySceneConfig& config);

// Writes scenes.{train,val,test}.jsonl, vocab.json and dataset.json into dir.
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const ToySceneConfig& config,
                   int min_count = 5);
struct LoadedDataset {
  ToySceneConfig config;
  DatasetSplit split;
};
LoadedDataset read_dataset(const std::filesystem::path& dir);

std::vector<std::string> all_references(const std::vector<ToyScene>& scenes);

}  // namespace hiercap
