#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cerberus/data.hpp"
#include "cerberus/metrics.hpp"
#include "cerberus/mgda.hpp"
#include "cerberus/model.hpp"
#include "cerberus/rng.hpp"
#include "cerberus/tasks.hpp"

namespace cerberus::train {

enum class Mode { Optimal, Uniform, Single };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct TrainConfig {
  Mode mode = Mode::Optimal;
  Task single_task = Task::Semantic;  // used by Mode::Single
  // Per-task supervision rate r_t in (0, 1], order (attribute, affordance,
  // semantic).
  std::array<double, 3> supervision = {1.0, 1.0, 1.0};
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 5;
  int batch_size = 2;
  int steps_per_epoch = 0;  // 0 derives ceil(train size / batch_size)
  std::uint64_t seed = 1;
  // Replaces the re-forward of steps 3-4 with the directly combined
  // per-task gradients; provably equivalent for deterministic forwards.
  bool fast_combine = false;
  int eval_every = 1;  // epochs between evaluations (the last always runs)

  void validate() const;
};

// One task's independently drawn mini-batch, already resampled to the
// model's input extent.
struct TaskBatch {
  Task task = Task::Semantic;
  std::vector<int> sample_ids;
  std::vector<Tensor> images;
  std::vector<ByteRaster> labels;       // semantic class indices (semantic task)
  std::vector<BinaryStack> targets;     // bit planes (multi-label tasks)
  std::vector<ByteRaster> masks;        // supervision masks
  std::vector<char> usable;             // mask selects at least one pixel
  std::vector<int> present_classes;     // classes present in the batch rasters

  int usable_count() const;
};

struct StepTrace {
  int step = 0;
  std::array<double, 3> losses = {0.0, 0.0, 0.0};  // L_at, L_af, L_sem
  std::array<double, 3> alphas = {0.0, 0.0, 0.0};
  double norm_w = 0.0;
  std::string case_taken;
  std::array<std::vector<int>, 3> present;  // per-task batch class presence
};

struct EpochMetrics {
  int epoch = 0;
  std::array<metrics::IouReport, 3> tasks;  // indexed by Task

  double miou(Task t) const { return tasks[static_cast<std::size_t>(t)].miou; }
  double mean_miou() const;
};

struct RunResult {
  std::vector<StepTrace> trace;
  std::vector<EpochMetrics> metrics;
  EpochMetrics final_metrics;
};

// Bernoulli(rate) pixel mask from a counter-based generator keyed by
// (seed, image id, task id); identical across epochs by construction.
ByteRaster apply_weak_mask(int h, int w, double rate, std::uint64_t seed, int image_id,
                           Task task);

// Plain SGD with momentum over the registered parameters.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double learning_rate, double momentum);
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::ArrayXd> velocity_;
  double lr_;
  double momentum_;
};

class Trainer {
 public:
  Trainer(CerberusModel& model, const data::Dataset& dataset, TrainConfig cfg);

  // Draws the next mini-batch for a task from its independent stream.
  TaskBatch next_batch(Task t);

  // Zero grads, forward on the batch, masked loss, backward, then the trunk
  // gradient flattened in canonical parameter order. Empty-supervision
  // batches yield nullopt (skipped with a warning).
  std::optional<std::pair<double, mgda::GradientVector>> collect_task_gradient(
      const TaskBatch& batch);

  StepTrace training_step(const std::array<TaskBatch, 3>& batches);

  // Dataset-level per-task evaluation over the test split.
  std::array<metrics::IouReport, 3> evaluate(int threads = 1) const;

  // Full loop; writes weights.csv, trace.jsonl, metrics.json and
  // checkpoint.ckpt under out_dir (skipped when out_dir is empty).
  RunResult run(const std::string& out_dir, int threads = 1);

  int steps_per_epoch() const;
  const TrainConfig& config() const { return cfg_; }

 private:
  Tensor batch_loss(const TaskBatch& batch) const;
  void apply_fast_combine(const std::array<double, 3>& alphas,
                          const std::array<std::vector<Eigen::ArrayXd>, 3>& saved_grads);

  CerberusModel& model_;
  const data::Dataset& dataset_;
  TrainConfig cfg_;
  Sgd optimizer_;
  std::array<Rng, 3> batch_streams_;
  int step_counter_ = 0;
};

void write_weight_log(const std::string& path, const std::vector<StepTrace>& trace);
void write_trace_jsonl(const std::string& path, const std::vector<StepTrace>& trace);
std::vector<StepTrace> load_trace_jsonl(const std::string& path);
void write_metrics_json(const std::string& path, const std::vector<EpochMetrics>& metrics,
                        const data::TaskSchema& schema);

}  // namespace cerberus::train
