#include "spnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spnet/errors.hpp"

namespace spnet {

namespace {

void check_same_dims(const BinaryMask& a, const BinaryMask& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(who) + ": mask size mismatch");
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask* roi) {
  check_same_dims(pred, gt, "confusion");
  if (roi) check_same_dims(pred, *roi, "confusion");
  ConfusionCounts c;
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) {
      if (roi && !(*roi)(y, x)) continue;
      if (pred(y, x)) {
        (gt(y, x) ? c.tp : c.fp) += 1;
      } else {
        (gt(y, x) ? c.fn : c.tn) += 1;
      }
    }
  return c;
}

SenSpeAcc sen_spe_acc(const ConfusionCounts& c) {
  SenSpeAcc r;
  if (c.tp + c.fn > 0) r.sen = double(c.tp) / double(c.tp + c.fn);
  if (c.tn + c.fp > 0) r.spe = double(c.tn) / double(c.tn + c.fp);
  if (c.total() > 0) r.acc = double(c.tp + c.tn) / double(c.total());
  return r;
}

namespace {

// Descending threshold sweep shared by the ROC and PR constructions:
// yields (threshold, tp, fp) with "score >= threshold" as the positive rule.
struct SweepPoint {
  double threshold;
  std::int64_t tp, fp;
};

std::vector<SweepPoint> threshold_sweep(const std::vector<double>& scores,
                                        const std::vector<std::uint8_t>& labels) {
  std::vector<double> th = scores;
  th.push_back(0.0);
  th.push_back(1.0);
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<SweepPoint> out;
  out.reserve(th.size());
  std::size_t i = 0;
  std::int64_t tp = 0, fp = 0;
  for (double t : th) {
    while (i < order.size() && scores[order[i]] >= t) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    out.push_back({t, tp, fp});
  }
  return out;
}

}  // namespace

RocResult roc_from_scores(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_from_scores: score/label count mismatch");
  const std::int64_t pos = std::count(labels.begin(), labels.end(), std::uint8_t(1));
  const std::int64_t neg = std::int64_t(labels.size()) - pos;
  RocResult res;
  if (pos == 0 || neg == 0) return res;  // AUC undefined

  const auto sweep = threshold_sweep(scores, labels);
  res.points.reserve(sweep.size() + 1);
  if (sweep.front().tp != 0 || sweep.front().fp != 0)
    res.points.push_back({sweep.front().threshold, 0.0, 0.0});
  for (const auto& s : sweep)
    res.points.push_back({s.threshold, double(s.fp) / double(neg), double(s.tp) / double(pos)});

  double auc = 0.0;
  for (std::size_t i = 1; i < res.points.size(); ++i)
    auc += (res.points[i].fpr - res.points[i - 1].fpr) *
           (res.points[i].tpr + res.points[i - 1].tpr) * 0.5;
  res.auc = auc;
  return res;
}

std::vector<PrPoint> pr_from_scores(const std::vector<double>& scores,
                                    const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("pr_from_scores: score/label count mismatch");
  const std::int64_t pos = std::count(labels.begin(), labels.end(), std::uint8_t(1));
  std::vector<PrPoint> out;
  if (pos == 0) return out;
  for (const auto& s : threshold_sweep(scores, labels)) {
    if (s.tp + s.fp == 0) continue;  // precision undefined at this threshold
    out.push_back({s.threshold, double(s.tp) / double(pos),
                   double(s.tp) / double(s.tp + s.fp)});
  }
  return out;
}

namespace {

void collect_scores(const Tensor<float>& prob, const BinaryMask& gt, const BinaryMask* roi,
                    std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
  if (prob.batch() != 1 || prob.channels() != 1 || prob.height() != gt.rows() ||
      prob.width() != gt.cols())
    throw std::invalid_argument("roc/pr: probability map and gt size mismatch");
  if (roi) check_same_dims(gt, *roi, "roc/pr");
  const auto p = prob.plane(0, 0);
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) {
      if (roi && !(*roi)(y, x)) continue;
      scores.push_back(double(p(y, x)));
      labels.push_back(gt(y, x));
    }
}

}  // namespace

RocResult roc_curve(const Tensor<float>& prob, const BinaryMask& gt, const BinaryMask* roi) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  collect_scores(prob, gt, roi, scores, labels);
  return roc_from_scores(scores, labels);
}

std::vector<PrPoint> pr_curve(const Tensor<float>& prob, const BinaryMask& gt,
                              const BinaryMask* roi) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  collect_scores(prob, gt, roi, scores, labels);
  return pr_from_scores(scores, labels);
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
  return offs;
}

BinaryMask erode_disk(const BinaryMask& m, const std::vector<std::pair<int, int>>& offs) {
  BinaryMask out(m.rows(), m.cols());
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) {
      std::uint8_t v = 1;
      for (const auto& [dy, dx] : offs) {
        const Index ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= m.rows() || nx < 0 || nx >= m.cols() || !m(ny, nx)) {
          v = 0;
          break;
        }
      }
      out(y, x) = v;
    }
  return out;
}

BinaryMask dilate_disk(const BinaryMask& m, const std::vector<std::pair<int, int>>& offs) {
  BinaryMask out = BinaryMask::Zero(m.rows(), m.cols());
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) {
      for (const auto& [dy, dx] : offs) {
        const Index ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < m.rows() && nx >= 0 && nx < m.cols() && m(ny, nx)) {
          out(y, x) = 1;
          break;
        }
      }
    }
  return out;
}

}  // namespace

BinaryMask morphology(const BinaryMask& m, MorphOp op, int radius) {
  if (radius < 1) throw std::invalid_argument("morphology: radius must be >= 1");
  const auto offs = disk_offsets(radius);
  switch (op) {
    case MorphOp::erode:
      return erode_disk(m, offs);
    case MorphOp::dilate:
      return dilate_disk(m, offs);
    case MorphOp::open:
      return dilate_disk(erode_disk(m, offs), offs);
    case MorphOp::close:
      return erode_disk(dilate_disk(m, offs), offs);
  }
  throw std::invalid_argument("morphology: unknown op");
}

Components label_components(const BinaryMask& m, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("label_components: connectivity must be 4 or 8");
  static const std::pair<int, int> n8[] = {{-1, 0}, {1, 0},  {0, -1}, {0, 1},
                                           {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
  const int nn = connectivity == 4 ? 4 : 8;

  Components comp;
  comp.labels = decltype(comp.labels)::Zero(m.rows(), m.cols());
  std::vector<std::pair<Index, Index>> stack;
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) {
      if (!m(y, x) || comp.labels(y, x)) continue;
      const int id = ++comp.count;
      stack.assign(1, {y, x});
      comp.labels(y, x) = id;
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int k = 0; k < nn; ++k) {
          const Index ny = cy + n8[k].first, nx = cx + n8[k].second;
          if (ny < 0 || ny >= m.rows() || nx < 0 || nx >= m.cols()) continue;
          if (!m(ny, nx) || comp.labels(ny, nx)) continue;
          comp.labels(ny, nx) = id;
          stack.emplace_back(ny, nx);
        }
      }
    }
  return comp;
}

BinaryMask remove_small_components(const BinaryMask& m, int min_size, int connectivity) {
  const Components comp = label_components(m, connectivity);
  std::vector<std::int64_t> sizes(std::size_t(comp.count) + 1, 0);
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) sizes[std::size_t(comp.labels(y, x))] += m(y, x);
  BinaryMask out = BinaryMask::Zero(m.rows(), m.cols());
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x)
      out(y, x) = m(y, x) && sizes[std::size_t(comp.labels(y, x))] >= min_size ? 1 : 0;
  return out;
}

CsMasks extract_cs_mask(const BinaryMask& gt) {
  if (!is_binary(gt)) throw std::invalid_argument("extract_cs_mask: non-binary mask");
  const BinaryMask eroded = morphology(gt, MorphOp::erode, 1);
  const BinaryMask opened = morphology(gt, MorphOp::open, 1);
  const BinaryMask closed = morphology(opened, MorphOp::close, 8);

  CsMasks out;
  out.cs = BinaryMask::Zero(gt.rows(), gt.cols());
  BinaryMask big_in = BinaryMask::Zero(gt.rows(), gt.cols());
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) big_in(y, x) = closed(y, x) & gt(y, x);
  const BinaryMask big = remove_small_components(big_in, 100, 4);

  out.non_cs = BinaryMask::Zero(gt.rows(), gt.cols());
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) {
      const bool contour = gt(y, x) && !eroded(y, x);
      const bool small = gt(y, x) && !big(y, x);
      out.cs(y, x) = contour || small ? 1 : 0;
      out.non_cs(y, x) = gt(y, x) && !out.cs(y, x) ? 1 : 0;
    }
  return out;
}

BinaryMask skeletonize(const BinaryMask& m) {
  if (!is_binary(m)) throw std::invalid_argument("skeletonize: non-binary mask");
  BinaryMask s = m;
  const Index h = m.rows(), w = m.cols();
  auto at = [&](Index y, Index x) -> int {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0 : int(s(y, x));
  };

  // Deletions take effect immediately within each scan.  This keeps every
  // removal a safe single-pixel operation: the rule requires 2-6 live
  // neighbours forming one contiguous arc, so a component can neither split
  // nor vanish (the batched variant erases free-standing 2x2 squares).
  bool changed = true;
  while (changed) {
    changed = false;
    for (int phase = 0; phase < 2; ++phase)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          if (!s(y, x)) continue;
          const int p[8] = {at(y - 1, x),     at(y - 1, x + 1), at(y, x + 1),
                            at(y + 1, x + 1), at(y + 1, x),     at(y + 1, x - 1),
                            at(y, x - 1),     at(y - 1, x - 1)};
          const int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
          if (b < 2 || b > 6) continue;
          int a = 0;
          for (int k = 0; k < 8; ++k) a += p[k] == 0 && p[(k + 1) % 8] == 1;
          if (a != 1) continue;
          // p[0]=N, p[2]=E, p[4]=S, p[6]=W
          if (phase == 0) {
            if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
          } else {
            if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
          }
          s(y, x) = 0;
          changed = true;
        }
  }
  return s;
}

CalResult cal_metric(const BinaryMask& pred, const BinaryMask& gt) {
  check_same_dims(pred, gt, "cal_metric");
  if (!is_binary(pred) || !is_binary(gt))
    throw std::invalid_argument("cal_metric: non-binary mask");
  const std::int64_t card = std::int64_t(gt.template cast<std::int64_t>().sum());
  if (card == 0) throw DataError("cal_metric: empty ground truth");

  const int cc_gt = label_components(gt, 8).count;
  const int cc_pred = label_components(pred, 8).count;
  CalResult r;
  r.c = 1.0 - std::min(1.0, std::abs(cc_gt - cc_pred) / double(card));

  auto count_if = [&](auto f) {
    std::int64_t n = 0;
    for (Index y = 0; y < gt.rows(); ++y)
      for (Index x = 0; x < gt.cols(); ++x) n += f(y, x) ? 1 : 0;
    return n;
  };

  const BinaryMask dp = morphology(pred, MorphOp::dilate, 2);
  const BinaryMask dg = morphology(gt, MorphOp::dilate, 2);
  const std::int64_t a_num =
      count_if([&](Index y, Index x) { return (dp(y, x) && gt(y, x)) || (pred(y, x) && dg(y, x)); });
  const std::int64_t a_den = count_if([&](Index y, Index x) { return pred(y, x) || gt(y, x); });
  r.a = double(a_num) / double(a_den);  // a_den >= card > 0

  const BinaryMask sp = skeletonize(pred);
  const BinaryMask sg = skeletonize(gt);
  const BinaryMask dsp = morphology(sp, MorphOp::dilate, 2);
  const BinaryMask dsg = morphology(sg, MorphOp::dilate, 2);
  const std::int64_t l_num =
      count_if([&](Index y, Index x) { return (dsp(y, x) && sg(y, x)) || (sp(y, x) && dsg(y, x)); });
  const std::int64_t l_den = count_if([&](Index y, Index x) { return sp(y, x) || sg(y, x); });
  r.l = l_den == 0 ? 0.0 : double(l_num) / double(l_den);

  r.cal = r.c * r.a * r.l;
  return r;
}

std::vector<RegionReport> evaluate(const Tensor<float>& prob, const BinaryMask& gt,
                                   const BinaryMask* fov, double threshold,
                                   const std::vector<std::string>& regions) {
  if (prob.batch() != 1 || prob.channels() != 1 || prob.height() != gt.rows() ||
      prob.width() != gt.cols())
    throw std::invalid_argument("evaluate: probability map and gt size mismatch");
  if (fov) check_same_dims(gt, *fov, "evaluate");
  if (!is_binary(gt)) throw std::invalid_argument("evaluate: non-binary gt");

  const auto p = prob.plane(0, 0);
  BinaryMask pred(gt.rows(), gt.cols());
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) pred(y, x) = double(p(y, x)) > threshold ? 1 : 0;

  const bool need_cs = std::any_of(regions.begin(), regions.end(), [](const std::string& r) {
    return r == "cs" || r == "non_cs";
  });
  CsMasks cs;
  if (need_cs) cs = extract_cs_mask(gt);

  std::vector<RegionReport> reports;
  for (const std::string& name : regions) {
    BinaryMask domain(gt.rows(), gt.cols());
    for (Index y = 0; y < gt.rows(); ++y)
      for (Index x = 0; x < gt.cols(); ++x) {
        bool in;
        if (name == "all") {
          in = true;
        } else if (name == "cs") {
          in = cs.cs(y, x) || !gt(y, x);  // region vessels plus all background
        } else if (name == "non_cs") {
          in = cs.non_cs(y, x) || !gt(y, x);
        } else {
          throw std::invalid_argument("evaluate: unknown region '" + name + "'");
        }
        domain(y, x) = (in && (!fov || (*fov)(y, x))) ? 1 : 0;
      }

    RegionReport rep;
    rep.region = name;
    rep.counts = confusion(pred, gt, &domain);
    const SenSpeAcc ssa = sen_spe_acc(rep.counts);
    rep.sen = ssa.sen;
    rep.spe = ssa.spe;
    rep.acc = ssa.acc;
    rep.auc = roc_curve(prob, gt, &domain).auc;

    BinaryMask gt_r(gt.rows(), gt.cols()), pred_r(gt.rows(), gt.cols());
    std::int64_t gt_card = 0;
    for (Index y = 0; y < gt.rows(); ++y)
      for (Index x = 0; x < gt.cols(); ++x) {
        gt_r(y, x) = gt(y, x) & domain(y, x);
        pred_r(y, x) = pred(y, x) & domain(y, x);
        gt_card += gt_r(y, x);
      }
    if (gt_card > 0) rep.cal = cal_metric(pred_r, gt_r);
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace spnet
