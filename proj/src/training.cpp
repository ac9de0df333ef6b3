#include "cerberus/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "cerberus/log.hpp"
#include "cerberus/ops.hpp"
#include "cerberus/parallel.hpp"
#include "cerberus/rng.hpp"

namespace cerberus::train {

namespace fs = std::filesystem;
using nlohmann::json;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Optimal:
      return "optimal";
    case Mode::Uniform:
      return "uniform";
    case Mode::Single:
      return "single";
  }
  return "?";
}

Mode mode_from_name(const std::string& name) {
  if (name == "optimal") return Mode::Optimal;
  if (name == "uniform") return Mode::Uniform;
  if (name == "single") return Mode::Single;
  throw ConfigError("unknown training mode: " + name);
}

void TrainConfig::validate() const {
  for (double r : supervision) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("train: supervision rates must lie in (0, 1]");
  }
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
  if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch size must be >= 1");
  if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be >= 0");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
}

int TaskBatch::usable_count() const {
  int n = 0;
  for (char u : usable) n += u ? 1 : 0;
  return n;
}

double EpochMetrics::mean_miou() const {
  return (tasks[0].miou + tasks[1].miou + tasks[2].miou) / 3.0;
}

ByteRaster apply_weak_mask(int h, int w, double rate, std::uint64_t seed, int image_id,
                           Task task) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("apply_weak_mask: rate must lie in (0, 1]");
  ByteRaster mask(h, w);
  const std::uint64_t key =
      mix_keys(mix_keys(seed, static_cast<std::uint64_t>(image_id) + 1),
               static_cast<std::uint64_t>(task) + 0x10u);
  for (std::size_t p = 0; p < mask.v.size(); ++p) {
    const double u = u64_to_unit(splitmix64(key + p * 0x9e3779b97f4a7c15ULL));
    mask.v[p] = u < rate ? 1 : 0;
  }
  return mask;
}

Sgd::Sgd(std::vector<Tensor> params, double learning_rate, double momentum)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.push_back(Eigen::ArrayXd::Zero(p.size()));
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    velocity_[i] = momentum_ * velocity_[i] + p.grad();
    p.array() -= lr_ * velocity_[i];
  }
}

namespace {

std::vector<Tensor> all_param_tensors(CerberusModel& model) {
  std::vector<Tensor> out;
  for (const NamedParam& p : model.parameters()) out.push_back(p.value);
  return out;
}

}  // namespace

Trainer::Trainer(CerberusModel& model, const data::Dataset& dataset, TrainConfig cfg)
    : model_(model),
      dataset_(dataset),
      cfg_(cfg),
      optimizer_(all_param_tensors(model), cfg.learning_rate, cfg.momentum),
      batch_streams_{Rng(mix_keys(cfg.seed, 0xa1)), Rng(mix_keys(cfg.seed, 0xa2)),
                     Rng(mix_keys(cfg.seed, 0xa3))} {
  cfg_.validate();
  if (dataset_.train_ids.empty() || dataset_.test_ids.empty()) {
    throw ConfigError("trainer: dataset needs non-empty train and test splits");
  }
  if (dataset_.height != model_.config().height || dataset_.width != model_.config().width) {
    throw ConfigError("trainer: dataset extent does not match the model input extent");
  }
  if (dataset_.schema.class_count(Task::Semantic) != model_.config().semantic_classes ||
      dataset_.schema.class_count(Task::Affordance) != model_.config().affordance_classes ||
      dataset_.schema.class_count(Task::Attribute) != model_.config().attribute_classes) {
    throw ConfigError("trainer: schema class counts do not match the model heads");
  }
}

int Trainer::steps_per_epoch() const {
  if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
  const int n = static_cast<int>(dataset_.train_ids.size());
  return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

TaskBatch Trainer::next_batch(Task t) {
  TaskBatch batch;
  batch.task = t;
  const double rate = cfg_.supervision[static_cast<std::size_t>(t)];
  Rng& stream = batch_streams_[static_cast<std::size_t>(t)];
  const int h = model_.config().height;
  const int w = model_.config().width;
  std::set<int> classes;

  for (int k = 0; k < cfg_.batch_size; ++k) {
    const int pick = stream.uniform_int(static_cast<int>(dataset_.train_ids.size()));
    const int id = dataset_.train_ids[static_cast<std::size_t>(pick)];
    const data::WeakSample& sample = dataset_.by_id(id);
    const data::TaskView& view = sample.views[static_cast<std::size_t>(t)];

    batch.sample_ids.push_back(id);
    batch.images.push_back(image_to_tensor(view.image));

    const int rh = t == Task::Semantic ? view.semantic.h : view.planes.h;
    const int rw = t == Task::Semantic ? view.semantic.w : view.planes.w;
    ByteRaster mask = apply_weak_mask(rh, rw, rate, cfg_.seed, id, t);
    ByteRaster mask_full = resize_nearest(mask, h, w);
    bool usable = false;
    for (std::uint8_t v : mask_full.v) {
      if (v) {
        usable = true;
        break;
      }
    }
    batch.masks.push_back(std::move(mask_full));
    batch.usable.push_back(usable ? 1 : 0);

    if (t == Task::Semantic) {
      batch.labels.push_back(resize_nearest(view.semantic, h, w));
      batch.targets.emplace_back();
      for (std::uint8_t v : view.semantic.v) classes.insert(v);
    } else {
      batch.labels.emplace_back();
      batch.targets.push_back(resize_nearest(view.planes, h, w));
      for (int c = 0; c < view.planes.k; ++c) {
        bool any = false;
        for (int i = 0; i < view.planes.h && !any; ++i) {
          for (int j = 0; j < view.planes.w; ++j) {
            if (view.planes.at(c, i, j)) {
              any = true;
              break;
            }
          }
        }
        if (any) classes.insert(c);
      }
    }
  }
  batch.present_classes.assign(classes.begin(), classes.end());
  return batch;
}

Tensor Trainer::batch_loss(const TaskBatch& batch) const {
  Tensor total;
  int used = 0;
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    if (!batch.usable[i]) continue;
    ForwardResult fr = model_.forward_full(batch.images[i], false);
    Tensor loss;
    if (batch.task == Task::Semantic) {
      loss = cross_entropy_masked(fr.maps.semantic, batch.labels[i], batch.masks[i]);
    } else if (batch.task == Task::Affordance) {
      loss = bce_masked(fr.maps.affordance, batch.targets[i], batch.masks[i]);
    } else {
      loss = bce_masked(fr.maps.attribute, batch.targets[i], batch.masks[i]);
    }
    total = used == 0 ? loss : add(total, loss);
    ++used;
  }
  if (used == 0) {
    throw EmptySupervisionError("batch for task " + std::string(task_name(batch.task)) +
                                " has no usable supervision");
  }
  return used > 1 ? scale(total, 1.0 / used) : total;
}

std::optional<std::pair<double, mgda::GradientVector>> Trainer::collect_task_gradient(
    const TaskBatch& batch) {
  if (batch.usable_count() == 0) {
    log_info("skipping task " + std::string(task_name(batch.task)) +
             ": supervision mask selected no pixels in this batch");
    return std::nullopt;
  }
  model_.zero_grad();
  double loss_value = 0.0;
  {
    GradientTape tape;
    Tensor loss = batch_loss(batch);
    loss_value = loss.item();
    tape.backward(loss);
  }
  mgda::GradientVector g(model_.trunk_parameter_count());
  long off = 0;
  for (const NamedParam& p : model_.parameters()) {
    if (!p.trunk) continue;
    const long n = p.value.size();
    Tensor handle = p.value;
    g.segment(off, n) = handle.grad().matrix();
    off += n;
  }
  return std::make_pair(loss_value, std::move(g));
}

void Trainer::apply_fast_combine(const std::array<double, 3>& alphas,
                                 const std::array<std::vector<Eigen::ArrayXd>, 3>& saved_grads) {
  model_.zero_grad();
  std::array<std::size_t, 3> head_cursor = {0, 0, 0};
  // saved_grads[t] holds the trunk vector at slot 0 followed by that task's
  // head gradients in registration order.
  for (const NamedParam& p : model_.parameters()) {
    Tensor handle = p.value;
    if (p.trunk) continue;
    const std::size_t t = static_cast<std::size_t>(p.head);
    if (saved_grads[t].empty()) continue;
    const Eigen::ArrayXd& g = saved_grads[t][1 + head_cursor[t]];
    handle.accumulate_grad(alphas[t] * g);
    ++head_cursor[t];
  }
  long off = 0;
  for (const NamedParam& p : model_.parameters()) {
    if (!p.trunk) continue;
    const long n = p.value.size();
    Eigen::ArrayXd combined = Eigen::ArrayXd::Zero(n);
    for (std::size_t t = 0; t < 3; ++t) {
      if (saved_grads[t].empty() || alphas[t] == 0.0) continue;
      combined += alphas[t] * saved_grads[t][0].segment(off, n);
    }
    Tensor handle = p.value;
    handle.accumulate_grad(combined);
    off += n;
  }
}

StepTrace Trainer::training_step(const std::array<TaskBatch, 3>& batches) {
  StepTrace trace;
  trace.step = step_counter_++;
  for (std::size_t t = 0; t < 3; ++t) trace.present[t] = batches[t].present_classes;

  if (cfg_.mode == Mode::Single) {
    const std::size_t t = static_cast<std::size_t>(cfg_.single_task);
    trace.case_taken = "single";
    trace.alphas[t] = 1.0;
    if (batches[t].usable_count() == 0) {
      log_info("single-task step skipped: empty supervision");
      return trace;
    }
    model_.zero_grad();
    {
      GradientTape tape;
      Tensor loss = batch_loss(batches[t]);
      trace.losses[t] = loss.item();
      tape.backward(loss);
    }
    optimizer_.step();
    return trace;
  }

  if (cfg_.mode == Mode::Uniform) {
    trace.case_taken = "uniform";
    trace.alphas = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    model_.zero_grad();
    bool any = false;
    {
      GradientTape tape;
      Tensor joint;
      for (Task t : kAllTasks) {
        const std::size_t ti = static_cast<std::size_t>(t);
        if (batches[ti].usable_count() == 0) continue;
        Tensor loss = batch_loss(batches[ti]);
        trace.losses[ti] = loss.item();
        Tensor weighted = scale(loss, 1.0 / 3.0);
        joint = any ? add(joint, weighted) : weighted;
        any = true;
      }
      if (any) tape.backward(joint);
    }
    if (any) optimizer_.step();
    return trace;
  }

  // Optimal weights: per-task gradients, min-norm solve, joint update.
  std::array<std::vector<Eigen::ArrayXd>, 3> saved;
  std::vector<int> active;
  std::vector<mgda::GradientVector> gradients;
  for (Task t : kAllTasks) {
    const std::size_t ti = static_cast<std::size_t>(t);
    auto collected = collect_task_gradient(batches[ti]);
    if (!collected.has_value()) continue;
    trace.losses[ti] = collected->first;
    saved[ti].push_back(collected->second.array());
    for (const NamedParam& p : model_.parameters()) {
      if (!p.trunk && p.head == t) {
        Tensor handle = p.value;
        saved[ti].push_back(handle.grad());
      }
    }
    active.push_back(static_cast<int>(ti));
    gradients.push_back(std::move(collected->second));
  }

  if (active.empty()) {
    trace.case_taken = "skipped";
    log_info("training step skipped: no task had usable supervision");
    return trace;
  }

  if (active.size() == 3) {
    mgda::MinNormResult r = mgda::min_norm_three(gradients[0], gradients[1], gradients[2]);
    for (int k = 0; k < 3; ++k) trace.alphas[static_cast<std::size_t>(k)] = r.weights.alphas[static_cast<std::size_t>(k)];
    trace.norm_w = r.norm;
    trace.case_taken = r.case_taken.to_string();
  } else if (active.size() == 2) {
    mgda::MinNormResult r = mgda::min_norm_two(gradients[0], gradients[1]);
    trace.alphas[static_cast<std::size_t>(active[0])] = r.weights.alphas[0];
    trace.alphas[static_cast<std::size_t>(active[1])] = r.weights.alphas[1];
    trace.norm_w = r.norm;
    trace.case_taken = r.case_taken.to_string();
  } else {
    trace.alphas[static_cast<std::size_t>(active[0])] = 1.0;
    trace.norm_w = gradients[0].norm();
    trace.case_taken = "vertex(" + std::to_string(active[0]) + ")";
  }

  if (cfg_.fast_combine) {
    apply_fast_combine(trace.alphas, saved);
  } else {
    model_.zero_grad();
    GradientTape tape;
    Tensor joint;
    bool first = true;
    for (int ti : active) {
      Tensor loss = batch_loss(batches[static_cast<std::size_t>(ti)]);
      Tensor weighted = scale(loss, trace.alphas[static_cast<std::size_t>(ti)]);
      joint = first ? weighted : add(joint, weighted);
      first = false;
    }
    tape.backward(joint);
  }
  optimizer_.step();

  for (double l : trace.losses) {
    if (!std::isfinite(l)) throw NumericError("non-finite loss at step " + std::to_string(trace.step));
  }
  return trace;
}

std::array<metrics::IouReport, 3> Trainer::evaluate(int threads) const {
  const int h = model_.config().height;
  const int w = model_.config().width;
  const int n = static_cast<int>(dataset_.test_ids.size());

  struct PerImage {
    std::array<std::vector<long>, 3> inter;
    std::array<std::vector<long>, 3> uni;
  };

  std::array<metrics::IouAccumulator, 3> acc = {
      metrics::IouAccumulator(dataset_.schema.class_count(Task::Attribute)),
      metrics::IouAccumulator(dataset_.schema.class_count(Task::Affordance)),
      metrics::IouAccumulator(dataset_.schema.class_count(Task::Semantic))};
  std::vector<std::array<std::optional<metrics::IouAccumulator>, 3>> partial(
      static_cast<std::size_t>(n));

  parallel_for(n, threads, [&](int i) {
    const int id = dataset_.test_ids[static_cast<std::size_t>(i)];
    const data::WeakSample& sample = dataset_.by_id(id);
    for (Task t : kAllTasks) {
      const std::size_t ti = static_cast<std::size_t>(t);
      const data::TaskView& view = sample.views[ti];
      ForwardResult fr = model_.forward_full(image_to_tensor(view.image), false);
      metrics::IouAccumulator local(dataset_.schema.class_count(t));
      if (t == Task::Semantic) {
        const ByteRaster gt = resize_nearest(view.semantic, h, w);
        local.add_semantic(metrics::argmax_classes(fr.maps.semantic), gt);
      } else {
        const BinaryStack gt = resize_nearest(view.planes, h, w);
        const Tensor& logits = t == Task::Affordance ? fr.maps.affordance : fr.maps.attribute;
        BinaryStack pred = metrics::threshold_multilabel(logits, 0.5);
        for (int c = 0; c < gt.k; ++c) {
          ByteRaster pb(h, w), gb(h, w);
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              pb.at(y, x) = pred.at(c, y, x);
              gb.at(y, x) = gt.at(c, y, x);
            }
          }
          local.add_plane(c, pb, gb);
        }
      }
      partial[static_cast<std::size_t>(i)][ti] = std::move(local);
    }
  });

  for (int i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < 3; ++t) acc[t].merge(*partial[static_cast<std::size_t>(i)][t]);
  }
  return {acc[0].report(), acc[1].report(), acc[2].report()};
}

RunResult Trainer::run(const std::string& out_dir, int threads) {
  RunResult result;
  const int spe = steps_per_epoch();
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    for (int s = 0; s < spe; ++s) {
      std::array<TaskBatch, 3> batches;
      if (cfg_.mode == Mode::Single) {
        const std::size_t t = static_cast<std::size_t>(cfg_.single_task);
        batches[t] = next_batch(cfg_.single_task);
      } else {
        for (Task t : kAllTasks) batches[static_cast<std::size_t>(t)] = next_batch(t);
      }
      result.trace.push_back(training_step(batches));
    }
    if (epoch % cfg_.eval_every == 0 || epoch == cfg_.epochs) {
      EpochMetrics em;
      em.epoch = epoch;
      em.tasks = evaluate(threads);
      result.metrics.push_back(em);
      log_info("epoch " + std::to_string(epoch) + " mIoU at/af/sem = " +
               std::to_string(em.miou(Task::Attribute)) + "/" +
               std::to_string(em.miou(Task::Affordance)) + "/" +
               std::to_string(em.miou(Task::Semantic)));
    }
  }
  result.final_metrics = result.metrics.back();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_weight_log(out_dir + "/weights.csv", result.trace);
    write_trace_jsonl(out_dir + "/trace.jsonl", result.trace);
    write_metrics_json(out_dir + "/metrics.json", result.metrics, dataset_.schema);
    model_.save_checkpoint(out_dir + "/checkpoint.ckpt");
  }
  return result;
}

void write_weight_log(const std::string& path, const std::vector<StepTrace>& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "step,L_at,L_af,L_sem,alpha1,alpha2,alpha3,norm_w,case\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const StepTrace& t : trace) {
    os << t.step << "," << fmt(t.losses[0]) << "," << fmt(t.losses[1]) << "," << fmt(t.losses[2])
       << "," << fmt(t.alphas[0]) << "," << fmt(t.alphas[1]) << "," << fmt(t.alphas[2]) << ","
       << fmt(t.norm_w) << "," << t.case_taken << "\n";
  }
}

void write_trace_jsonl(const std::string& path, const std::vector<StepTrace>& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (const StepTrace& t : trace) {
    json j;
    j["step"] = t.step;
    j["losses"] = t.losses;
    j["alphas"] = t.alphas;
    j["norm_w"] = t.norm_w;
    j["case"] = t.case_taken;
    j["present"] = {{"attribute", t.present[0]},
                    {"affordance", t.present[1]},
                    {"semantic", t.present[2]}};
    os << j.dump() << "\n";
  }
}

std::vector<StepTrace> load_trace_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<StepTrace> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      StepTrace t;
      t.step = j.at("step").get<int>();
      t.losses = j.at("losses").get<std::array<double, 3>>();
      t.alphas = j.at("alphas").get<std::array<double, 3>>();
      t.norm_w = j.at("norm_w").get<double>();
      t.case_taken = j.at("case").get<std::string>();
      t.present[0] = j.at("present").at("attribute").get<std::vector<int>>();
      t.present[1] = j.at("present").at("affordance").get<std::vector<int>>();
      t.present[2] = j.at("present").at("semantic").get<std::vector<int>>();
      trace.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

void write_metrics_json(const std::string& path, const std::vector<EpochMetrics>& metrics,
                        const data::TaskSchema& schema) {
  auto task_json = [&](const EpochMetrics& em) {
    json tasks;
    for (Task t : kAllTasks) {
      const metrics::IouReport& rep = em.tasks[static_cast<std::size_t>(t)];
      json entry;
      entry["miou"] = rep.miou;
      json per_class = json::object();
      const auto& names = schema.names(t);
      for (std::size_t c = 0; c < names.size(); ++c) {
        if (rep.present[c]) {
          per_class[names[c]] = rep.per_class[c];
        } else {
          per_class[names[c]] = nullptr;
        }
      }
      entry["per_class"] = per_class;
      tasks[task_name(t)] = entry;
    }
    return tasks;
  };

  json doc;
  doc["epochs"] = json::array();
  for (const EpochMetrics& em : metrics) {
    doc["epochs"].push_back({{"epoch", em.epoch}, {"tasks", task_json(em)}});
  }
  if (!metrics.empty()) {
    doc["final"] = {{"epoch", metrics.back().epoch}, {"tasks", task_json(metrics.back())}};
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << doc.dump(2) << "\n";
}

}  // namespace cerberus::train
