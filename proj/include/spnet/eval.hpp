#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

/// Pixel counts over roi=1 pixels (whole image when roi is null).
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt,
                          const BinaryMask* roi = nullptr);

/// Ratios from counts; a zero denominator leaves the value unset rather than
/// silently zero.
struct SenSpeAcc {
  std::optional<double> sen, spe, acc;
};
SenSpeAcc sen_spe_acc(const ConfusionCounts& c);

struct RocPoint {
  double threshold, fpr, tpr;
};
struct PrPoint {
  double threshold, recall, precision;
};
struct RocResult {
  std::vector<RocPoint> points;
  std::optional<double> auc;  // unset when gt is all one class
};

/// ROC over thresholds at every distinct score plus {0,1} (positive when
/// score >= threshold), anchored at (0,0), trapezoid-integrated.  The result
/// equals the tie-aware Mann-Whitney statistic.
RocResult roc_from_scores(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& labels);
/// Precision-recall points over the same threshold set; thresholds that
/// select nothing (undefined precision) are skipped.
std::vector<PrPoint> pr_from_scores(const std::vector<double>& scores,
                                    const std::vector<std::uint8_t>& labels);

RocResult roc_curve(const Tensor<float>& prob, const BinaryMask& gt,
                    const BinaryMask* roi = nullptr);
std::vector<PrPoint> pr_curve(const Tensor<float>& prob, const BinaryMask& gt,
                              const BinaryMask* roi = nullptr);

enum class MorphOp { erode, dilate, open, close };

/// Binary morphology with a disk element {(dy,dx): dy^2+dx^2 <= r^2}; pixels
/// outside the image count as background for both erosion and dilation.
BinaryMask morphology(const BinaryMask& m, MorphOp op, int radius);

struct Components {
  Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> labels;
  int count = 0;  // labels run 1..count; 0 is background
};
Components label_components(const BinaryMask& m, int connectivity);
BinaryMask remove_small_components(const BinaryMask& m, int min_size = 100,
                                   int connectivity = 4);

/// Challenging-set split of a vessel mask: cs = contours (1-px erosion
/// residue) plus small vessels (components the open/close/size pipeline
/// drops); non_cs is the vessel remainder.  The two partition gt exactly.
struct CsMasks {
  BinaryMask cs, non_cs;
};
CsMasks extract_cs_mask(const BinaryMask& gt);

/// Zhang-Suen thinning to a 1-px skeleton; output is a subset of the input
/// and preserves 8-connectivity.
BinaryMask skeletonize(const BinaryMask& m);

/// Connectivity/area/length structure metric with dilation radius 2.
struct CalResult {
  double c = 0, a = 0, l = 0, cal = 0;
};
CalResult cal_metric(const BinaryMask& pred, const BinaryMask& gt);

struct RegionReport {
  std::string region;
  ConfusionCounts counts;
  std::optional<double> sen, spe, acc, auc;
  std::optional<CalResult> cal;
};

/// Full protocol for one probability map: binarize at strict p > threshold,
/// then per requested region ("all", "cs", "non_cs") report confusion ratios,
/// AUC, and CAL.  Vessel regions are evaluated together with the background
/// so specificity stays defined; everything is intersected with the fov when
/// given.
std::vector<RegionReport> evaluate(const Tensor<float>& prob, const BinaryMask& gt,
                                   const BinaryMask* fov = nullptr, double threshold = 0.5,
                                   const std::vector<std::string>& regions = {"all"});

}  // namespace spnet
