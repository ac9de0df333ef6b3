#pragma once

#include <vector>

#include "cerberus/raster.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus::metrics {

// Convention for classes absent from both prediction and ground truth:
// either excluded from the mean (presence-based averaging) or counted as 0.
enum class AbsentClassPolicy { Exclude, CountAsZero };

struct IouReport {
  std::vector<double> per_class;  // 0 for absent classes; see `present`
  std::vector<bool> present;
  double miou = 0.0;
};

// Dataset-level intersection/union accumulation per class.
class IouAccumulator {
 public:
  explicit IouAccumulator(int classes);

  void add_semantic(const ByteRaster& pred, const ByteRaster& gt);
  void add_plane(int cls, const ByteRaster& pred_bits, const ByteRaster& gt_bits);
  void merge(const IouAccumulator& other);

  IouReport report(AbsentClassPolicy policy = AbsentClassPolicy::Exclude) const;

 private:
  std::vector<long> intersection_;
  std::vector<long> union_;
};

IouReport miou_semantic(const ByteRaster& pred, const ByteRaster& gt, int classes,
                        AbsentClassPolicy policy = AbsentClassPolicy::Exclude);

// Thresholds sigmoid(logits) with a strict > comparison (probability exactly
// at the threshold counts as negative).
IouReport miou_multilabel(const Tensor& logits, const BinaryStack& gt, double threshold,
                          AbsentClassPolicy policy = AbsentClassPolicy::Exclude);

// argmax over the class axis of an [x×h×w] logit map.
ByteRaster argmax_classes(const Tensor& logits);

// Per-class binary masks from multi-label logits.
BinaryStack threshold_multilabel(const Tensor& logits, double threshold);

}  // namespace cerberus::metrics
