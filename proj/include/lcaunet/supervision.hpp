#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcaunet/ops.hpp"

namespace lcaunet {

inline constexpr double kProbEps = 1e-7;  // clamp before every log

struct EdgeLossParams {
  double eta = 0.3;     // soft labels in (0, eta) are ignored
  double lambda = 1.1;  // negative-class balance factor: alpha = lambda*(1-beta)
  double beta_override = -1.0;  // >=0 fixes beta instead of the per-batch count
  bool sum_mode = false;        // true: plain sums; false: mean per map
};

namespace detail {

template <typename T>
void check_probabilities(const Array<T>& p, const char* who) {
  for (T v : p.data)
    LCAUNET_CHECK_DOMAIN(std::isfinite(static_cast<double>(v)) && v >= T(0) && v <= T(1),
                         who, ": predictions must lie in [0,1], got ", v);
}

template <typename T>
void check_binary(const Array<T>& m, const char* who) {
  for (T v : m.data)
    LCAUNET_CHECK_DOMAIN(v == T(0) || v == T(1), who,
                         ": expected a binary mask, got value ", v);
}

}  // namespace detail

// Annotator-robust edge loss over the four side maps. Per pixel with soft
// label g and prediction y: g == 0 contributes alpha * -log(1-y); g >= eta
// contributes beta * -log(y); labels in (0, eta) are ignored. beta is the
// negative-pixel fraction among the considered pixels of this batch (shared
// by all four maps), alpha = lambda * (1 - beta).
template <typename T>
ag::Var<T> edge_loss(const std::vector<ag::Var<T>>& pred_maps,
                     const ag::Var<T>& edge_gt, const EdgeLossParams& p = {}) {
  LCAUNET_CHECK_SHAPE(!pred_maps.empty(), "edge_loss: no prediction maps");
  LCAUNET_CHECK_DOMAIN(p.eta >= 0.0 && p.eta <= 1.0, "edge_loss: eta must be in [0,1]");
  const Array<T>& gt = edge_gt.value();
  std::int64_t n_neg = 0, n_pos = 0;
  for (T g : gt.data) {
    LCAUNET_CHECK_DOMAIN(g >= T(0) && g <= T(1),
                         "edge_loss: ground truth must lie in [0,1], got ", g);
    if (g == T(0))
      ++n_neg;
    else if (static_cast<double>(g) >= p.eta)
      ++n_pos;
  }
  double beta = p.beta_override >= 0.0
                    ? p.beta_override
                    : (n_neg + n_pos > 0
                           ? static_cast<double>(n_neg) / static_cast<double>(n_neg + n_pos)
                           : 0.5);
  const double alpha = p.lambda * (1.0 - beta);

  // Constant per-pixel weight maps select the class term.
  Array<T> w_neg(gt.shape, T(0)), w_pos(gt.shape, T(0));
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == T(0))
      w_neg[i] = static_cast<T>(alpha);
    else if (static_cast<double>(gt[i]) >= p.eta)
      w_pos[i] = static_cast<T>(beta);
  }
  auto wn = ag::Var<T>::constant(std::move(w_neg));
  auto wp = ag::Var<T>::constant(std::move(w_pos));

  ag::Var<T> total;
  for (const auto& pred : pred_maps) {
    LCAUNET_CHECK_SHAPE(pred.shape() == edge_gt.shape(),
                        "edge_loss: map shape ", shape_str(pred.shape()),
                        " != gt shape ", shape_str(edge_gt.shape()));
    detail::check_probabilities(pred.value(), "edge_loss");
    auto y = ag::clamp(pred, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps));
    auto one_minus = ag::add_const(ag::neg(y), T(1));
    auto term = ag::neg(ag::add(ag::mul(wn, ag::log_op(one_minus)),
                                ag::mul(wp, ag::log_op(y))));
    auto map_loss = ag::sum_all(term);
    if (!p.sum_mode) map_loss = ag::scale(map_loss, T(1) / static_cast<T>(pred.size()));
    total = total.defined() ? ag::add(total, map_loss) : map_loss;
  }
  return total;
}

// Mean over pixels of -[(1-g) log(1-y) + g log(y)], probabilities clamped.
template <typename T>
ag::Var<T> bce_loss(const ag::Var<T>& pred_prob, const ag::Var<T>& gt) {
  LCAUNET_CHECK_SHAPE(pred_prob.shape() == gt.shape(), "bce_loss: shape mismatch ",
                      shape_str(pred_prob.shape()), " vs ", shape_str(gt.shape()));
  detail::check_probabilities(pred_prob.value(), "bce_loss");
  detail::check_binary(gt.value(), "bce_loss");
  auto y = ag::clamp(pred_prob, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps));
  auto g = gt;
  auto one_minus_g = ag::add_const(ag::neg(g), T(1));
  auto one_minus_y = ag::add_const(ag::neg(y), T(1));
  auto ll = ag::add(ag::mul(one_minus_g, ag::log_op(one_minus_y)),
                    ag::mul(g, ag::log_op(y)));
  return ag::neg(ag::mean_all(ll));
}

// Soft Dice: 1 - (2*sum(y*g) + eps) / (sum(y) + sum(g) + eps).
template <typename T>
ag::Var<T> dice_loss(const ag::Var<T>& pred_prob, const ag::Var<T>& gt,
                     double eps = 1.0) {
  LCAUNET_CHECK_SHAPE(pred_prob.shape() == gt.shape(), "dice_loss: shape mismatch ",
                      shape_str(pred_prob.shape()), " vs ", shape_str(gt.shape()));
  detail::check_probabilities(pred_prob.value(), "dice_loss");
  detail::check_binary(gt.value(), "dice_loss");
  auto inter = ag::sum_all(ag::mul(pred_prob, gt));
  auto sums = ag::add(ag::sum_all(pred_prob), ag::sum_all(gt));
  auto ratio = ag::div(ag::add_const(ag::scale(inter, T(2)), static_cast<T>(eps)),
                       ag::add_const(sums, static_cast<T>(eps)));
  return ag::add_const(ag::neg(ratio), T(1));
}

struct BodyLossWeights {
  double lambda1 = 0.6;  // BCE
  double lambda2 = 0.4;  // Dice
  double gamma = 0.2;    // edge supervision
  double dice_eps = 1.0;
  EdgeLossParams edge;
};

template <typename T>
struct LossReport {
  ag::Var<T> total;  // differentiable
  double bce = 0.0, dice = 0.0, edge = 0.0;
};

// L = lambda1 * BCE + lambda2 * Dice + gamma * EdgeLoss. Segmentation head
// emits logits; the sigmoid lives here.
template <typename T>
LossReport<T> total_loss(const ag::Var<T>& seg_logits,
                         const std::vector<ag::Var<T>>& edge_maps,
                         const ag::Var<T>& mask_gt, const ag::Var<T>& edge_gt,
                         const BodyLossWeights& w = {}) {
  auto prob = ag::sigmoid(seg_logits);
  auto l_bce = bce_loss(prob, mask_gt);
  auto l_dice = dice_loss(prob, mask_gt, w.dice_eps);
  LossReport<T> rep;
  rep.bce = static_cast<double>(l_bce.item());
  rep.dice = static_cast<double>(l_dice.item());
  rep.total = ag::add(ag::scale(l_bce, static_cast<T>(w.lambda1)),
                      ag::scale(l_dice, static_cast<T>(w.lambda2)));
  if (w.gamma != 0.0) {
    auto l_edge = edge_loss(edge_maps, edge_gt, w.edge);
    rep.edge = static_cast<double>(l_edge.item());
    rep.total = ag::add(rep.total, ag::scale(l_edge, static_cast<T>(w.gamma)));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Metrics

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

template <typename T>
Array<T> binarize(const Array<T>& prob, double threshold = 0.5) {
  Array<T> out(prob.shape);
  for (std::int64_t i = 0; i < prob.size(); ++i)
    out[i] = static_cast<double>(prob[i]) >= threshold ? T(1) : T(0);
  return out;
}

template <typename T>
ConfusionCounts confusion(const Array<T>& pred, const Array<T>& gt) {
  LCAUNET_CHECK_SHAPE(pred.shape == gt.shape, "confusion: shape mismatch");
  detail::check_binary(pred, "confusion");
  detail::check_binary(gt, "confusion");
  ConfusionCounts c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == T(1), g = gt[i] == T(1);
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct Metrics {
  double acc = 0, dice = 0, iou = 0, se = 0, sp = 0;
};

// Zero denominators resolve to 1.0 when the corresponding error count is also
// zero (nothing to get wrong) and 0.0 otherwise.
inline Metrics metrics_from_counts(const ConfusionCounts& c) {
  auto ratio = [](std::int64_t num, std::int64_t den, std::int64_t errors) {
    if (den == 0) return errors == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.acc = ratio(c.tp + c.tn, c.total(), c.fp + c.fn);
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn);
  m.se = ratio(c.tp, c.tp + c.fn, c.fn);
  m.sp = ratio(c.tn, c.tn + c.fp, c.fp);
  return m;
}

// ---------------------------------------------------------------------------
// Reports

struct ImageMetrics {
  std::string id;
  Metrics m;
};

inline Metrics aggregate_metrics(const std::vector<ImageMetrics>& rows) {
  Metrics a;
  if (rows.empty()) return a;
  for (const auto& r : rows) {
    a.acc += r.m.acc;
    a.dice += r.m.dice;
    a.iou += r.m.iou;
    a.se += r.m.se;
    a.sp += r.m.sp;
  }
  const double n = static_cast<double>(rows.size());
  a.acc /= n; a.dice /= n; a.iou /= n; a.se /= n; a.sp /= n;
  return a;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<ImageMetrics>& rows) {
  std::ofstream f(path);
  LCAUNET_CHECK_CONFIG(f.good(), "cannot open ", path, " for writing");
  f << "image_id,acc,dice,iou,se,sp\n";
  f.precision(10);
  for (const auto& r : rows)
    f << r.id << ',' << r.m.acc << ',' << r.m.dice << ',' << r.m.iou << ','
      << r.m.se << ',' << r.m.sp << '\n';
  const Metrics a = aggregate_metrics(rows);
  f << "aggregate," << a.acc << ',' << a.dice << ',' << a.iou << ',' << a.se << ','
    << a.sp << '\n';
}

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"acc", m.acc}, {"dice", m.dice}, {"iou", m.iou}, {"se", m.se}, {"sp", m.sp}};
}

inline void write_metrics_jsonl(const std::string& path,
                                const std::vector<ImageMetrics>& rows) {
  std::ofstream f(path);
  LCAUNET_CHECK_CONFIG(f.good(), "cannot open ", path, " for writing");
  for (const auto& r : rows) {
    nlohmann::json j = metrics_json(r.m);
    j["image_id"] = r.id;
    f << j.dump() << '\n';
  }
  nlohmann::json agg = metrics_json(aggregate_metrics(rows));
  agg["image_id"] = "aggregate";
  f << agg.dump() << '\n';
}

}  // namespace lcaunet
