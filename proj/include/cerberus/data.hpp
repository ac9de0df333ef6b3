#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cerberus/image.hpp"
#include "cerberus/raster.hpp"
#include "cerberus/tasks.hpp"

namespace cerberus::data {

// Label sets for the three tasks plus the semantic-class derivation rules
// that stamp affordance/attribute bits onto every pixel.
struct TaskSchema {
  std::vector<std::string> semantic;
  std::vector<std::string> affordance;
  std::vector<std::string> attribute;
  std::vector<std::vector<int>> affordance_rules;  // semantic idx -> affordance indices
  std::vector<std::vector<int>> attribute_rules;   // semantic idx -> attribute indices

  int class_count(Task t) const;
  const std::vector<std::string>& names(Task t) const;
  void validate() const;

  // 8 semantic classes, 5 affordances, 6 attributes; every multi-label
  // class is granted by exactly one semantic class.
  static TaskSchema default_schema();
};

struct GeneratorConfig {
  int height = 64;
  int width = 64;
  int count = 250;
  int train_count = 200;
  int max_shift = 2;  // per-task viewport shift bound, pixels
  // Label raster extent per task (attribute, affordance, semantic order).
  std::array<int, 3> raster_sizes = {56, 48, 64};
  double noise = 0.06;
  std::uint64_t seed = 7;

  void validate() const;
};

// One task's rendering of the scene together with its aligned annotation.
struct TaskView {
  RgbImage image;       // height x width
  ByteRaster semantic;  // semantic task only: class indices at raster extent
  BinaryStack planes;   // multi-label tasks: k bit planes at raster extent
  int shift_y = 0;
  int shift_x = 0;

  bool operator==(const TaskView& o) const {
    return image == o.image && semantic == o.semantic && planes == o.planes &&
           shift_y == o.shift_y && shift_x == o.shift_x;
  }
};

struct WeakSample {
  int id = 0;
  std::array<TaskView, 3> views;  // indexed by Task
  ByteRaster canon_semantic;      // height x width, unshifted
  BinaryStack canon_affordance;
  BinaryStack canon_attribute;

  bool operator==(const WeakSample& o) const {
    return id == o.id && views == o.views && canon_semantic == o.canon_semantic &&
           canon_affordance == o.canon_affordance && canon_attribute == o.canon_attribute;
  }
};

struct Dataset {
  TaskSchema schema;
  int height = 64;
  int width = 64;
  std::vector<WeakSample> samples;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  const WeakSample& by_id(int id) const;
};

// Pure in (seed, index): repeated calls return identical samples.
WeakSample generate_sample(std::uint64_t seed, const GeneratorConfig& cfg,
                           const TaskSchema& schema, int index);

Dataset generate_dataset(const GeneratorConfig& cfg, const TaskSchema& schema, int threads = 1);

void save_dataset(const Dataset& dataset, const std::string& dir);

// Reads a dataset directory written by save_dataset (manifest.json plus
// per-sample per-task subfolders).
Dataset load_dataset(const std::string& dir);

// Derives the k bit planes of a semantic raster under the schema rules.
BinaryStack derive_planes(const ByteRaster& semantic, const TaskSchema& schema, Task task);

}  // namespace cerberus::data
