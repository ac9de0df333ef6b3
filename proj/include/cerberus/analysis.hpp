#pragma once

#include <string>
#include <vector>

#include "cerberus/data.hpp"
#include "cerberus/model.hpp"
#include "cerberus/training.hpp"

namespace cerberus::analysis {

// |a ∧ b| / |a ∨ b| over nonzero entries; 0 when both masks are empty.
double pair_iou(const ByteRaster& a, const ByteRaster& b);

struct AffinityMatrix {
  Task row_task = Task::Semantic;
  Task col_task = Task::Affordance;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> values;  // row-major; mean IoU over contributing images
  std::vector<long> counts;    // images where the pair's union was nonempty

  double at(int i, int j) const {
    return values[static_cast<std::size_t>(i) * col_labels.size() + j];
  }
};

// Mean IoU between predicted class masks of two tasks over the test split.
// Every sample contributes the predictions of one forward pass on a single
// rendering, so the compared masks are aligned by construction.
AffinityMatrix affinity_matrix(const CerberusModel& model, const data::Dataset& dataset,
                               Task row_task, Task col_task, int threads = 1);

void write_affinity_csv(const std::string& path, const AffinityMatrix& m);

struct DensityCurve {
  bool empty = false;
  int sample_count = 0;
  double bandwidth = 0.0;
  std::vector<double> grid;  // 256 points spanning [0, 1]
  std::vector<double> density;
};

// Gaussian kernel density (Silverman bandwidth, 1e-3 floor) of the logged
// task weight over the steps whose batch contained the class.
DensityCurve weight_density(const std::vector<train::StepTrace>& trace, Task task, int cls);

void write_density_csv(const std::string& path, const DensityCurve& curve);

// Writes <prefix>_attention.png (readout attention upsampled to the input
// extent, min-max rescaled) and <prefix>_overlay.png (the head's predicted
// mask for the chosen class).
void export_attention(const CerberusModel& model, const Tensor& image, int layer, int head,
                      Task overlay_task, int overlay_class, const std::string& prefix);

}  // namespace cerberus::analysis
