#include "cerberus/metrics.hpp"

#include <cmath>

namespace cerberus::metrics {

IouAccumulator::IouAccumulator(int classes)
    : intersection_(static_cast<std::size_t>(classes), 0),
      union_(static_cast<std::size_t>(classes), 0) {}

void IouAccumulator::add_semantic(const ByteRaster& pred, const ByteRaster& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw DimensionError("miou: prediction and ground truth extents differ");
  }
  const int classes = static_cast<int>(intersection_.size());
  for (std::size_t p = 0; p < pred.v.size(); ++p) {
    const int a = pred.v[p];
    const int b = gt.v[p];
    if (a < classes && a == b) {
      ++intersection_[static_cast<std::size_t>(a)];
      ++union_[static_cast<std::size_t>(a)];
    } else {
      if (a < classes) ++union_[static_cast<std::size_t>(a)];
      if (b < classes) ++union_[static_cast<std::size_t>(b)];
    }
  }
}

void IouAccumulator::add_plane(int cls, const ByteRaster& pred_bits, const ByteRaster& gt_bits) {
  if (pred_bits.h != gt_bits.h || pred_bits.w != gt_bits.w) {
    throw DimensionError("miou: prediction and ground truth extents differ");
  }
  for (std::size_t p = 0; p < pred_bits.v.size(); ++p) {
    const bool a = pred_bits.v[p] != 0;
    const bool b = gt_bits.v[p] != 0;
    if (a && b) ++intersection_[static_cast<std::size_t>(cls)];
    if (a || b) ++union_[static_cast<std::size_t>(cls)];
  }
}

void IouAccumulator::merge(const IouAccumulator& other) {
  for (std::size_t c = 0; c < intersection_.size(); ++c) {
    intersection_[c] += other.intersection_[c];
    union_[c] += other.union_[c];
  }
}

IouReport IouAccumulator::report(AbsentClassPolicy policy) const {
  IouReport rep;
  rep.per_class.resize(intersection_.size(), 0.0);
  rep.present.resize(intersection_.size(), false);
  double total = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < intersection_.size(); ++c) {
    if (union_[c] > 0) {
      rep.present[c] = true;
      rep.per_class[c] = static_cast<double>(intersection_[c]) / static_cast<double>(union_[c]);
      total += rep.per_class[c];
      ++counted;
    } else if (policy == AbsentClassPolicy::CountAsZero) {
      ++counted;
    }
  }
  rep.miou = counted > 0 ? total / counted : 0.0;
  return rep;
}

IouReport miou_semantic(const ByteRaster& pred, const ByteRaster& gt, int classes,
                        AbsentClassPolicy policy) {
  IouAccumulator acc(classes);
  acc.add_semantic(pred, gt);
  return acc.report(policy);
}

IouReport miou_multilabel(const Tensor& logits, const BinaryStack& gt, double threshold,
                          AbsentClassPolicy policy) {
  if (logits.rank() != 3 || logits.dim(0) != gt.k || logits.dim(1) != gt.h ||
      logits.dim(2) != gt.w) {
    throw DimensionError("miou_multilabel: logit map " + shape_to_string(logits.shape()) +
                         " does not match targets");
  }
  BinaryStack pred = threshold_multilabel(logits, threshold);
  IouAccumulator acc(gt.k);
  for (int c = 0; c < gt.k; ++c) {
    ByteRaster pb(gt.h, gt.w), gb(gt.h, gt.w);
    for (int i = 0; i < gt.h; ++i) {
      for (int j = 0; j < gt.w; ++j) {
        pb.at(i, j) = pred.at(c, i, j);
        gb.at(i, j) = gt.at(c, i, j);
      }
    }
    acc.add_plane(c, pb, gb);
  }
  return acc.report(policy);
}

ByteRaster argmax_classes(const Tensor& logits) {
  if (logits.rank() != 3) {
    throw DimensionError("argmax_classes expects [classes×h×w], got " +
                         shape_to_string(logits.shape()));
  }
  const int classes = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const long plane = static_cast<long>(h) * w;
  ByteRaster out(h, w);
  for (long p = 0; p < plane; ++p) {
    int best = 0;
    double best_v = logits.array()[p];
    for (int c = 1; c < classes; ++c) {
      const double v = logits.array()[c * plane + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.v[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

BinaryStack threshold_multilabel(const Tensor& logits, double threshold) {
  if (logits.rank() != 3) {
    throw DimensionError("threshold_multilabel expects [k×h×w], got " +
                         shape_to_string(logits.shape()));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold_multilabel: threshold must lie in (0, 1)");
  }
  // sigmoid(z) > t  <=>  z > logit(t); strict comparison on the logit.
  const double cut = std::log(threshold / (1.0 - threshold));
  BinaryStack out(logits.dim(0), logits.dim(1), logits.dim(2));
  for (long i = 0; i < logits.size(); ++i) {
    out.v[static_cast<std::size_t>(i)] = logits.array()[i] > cut ? 1 : 0;
  }
  return out;
}

}  // namespace cerberus::metrics
