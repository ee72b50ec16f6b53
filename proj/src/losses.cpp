// Copyright 2026 The CMFT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cmft/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmft/ops.hpp"

namespace cmft {

TargetAssignment assign_targets(const std::vector<GroundTruth>& gts,
                                const std::array<std::size_t, kNumScales>& grid_sizes, double image_size) {
  for (const auto& gt : gts) {
    if (!gt.box.valid()) throw ContractError("assign_targets: degenerate ground-truth box");
    if (gt.box.x1 < 0 || gt.box.y1 < 0 || gt.box.x2 > image_size || gt.box.y2 > image_size) {
      throw ContractError("assign_targets: ground-truth box leaves the image");
    }
  }
  TargetAssignment ta;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    ScaleTargets& st = ta.scales[s];
    st.grid = grid_sizes[s];
    st.stride = static_cast<std::size_t>(image_size) / st.grid;
    st.obj_mask.assign(st.grid * st.grid, 0);
    std::vector<int> owner(st.grid * st.grid, -1);
    const double cell_size = image_size / static_cast<double>(st.grid);
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const auto gx = std::min(st.grid - 1, static_cast<std::size_t>(gts[i].box.center_x() / cell_size));
      const auto gy = std::min(st.grid - 1, static_cast<std::size_t>(gts[i].box.center_y() / cell_size));
      const std::size_t cell = gy * st.grid + gx;
      if (owner[cell] < 0) owner[cell] = static_cast<int>(i);
    }
    for (std::size_t cell = 0; cell < owner.size(); ++cell) {
      if (owner[cell] < 0) continue;
      st.obj_mask[cell] = 1;
      st.cells.push_back(cell);
      st.class_ids.push_back(gts[owner[cell]].class_id);
      st.boxes.push_back(gts[owner[cell]].box);
    }
  }
  return ta;
}

template <class S>
Tensor<S> classification_loss(const Tensor<S>& probs, const std::vector<int>& targets,
                              const std::vector<std::uint8_t>& obj_mask) {
  if (probs.rank() != 2 || probs.dim(0) != targets.size() || obj_mask.size() != targets.size()) {
    throw DimensionError("classification_loss: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<S> onehot(n * k, S(0));
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!obj_mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw ContractError("classification_loss: class id out of range");
    }
    onehot[i * k + static_cast<std::size_t>(targets[i])] = S(1);
    any = true;
  }
  if (!any) return Tensor<S>::scalar(S(0));
  const auto eps = static_cast<S>(kProbEpsilon);
  const Tensor<S> logp = log(clamp(probs, eps, S(1) - eps));
  return scale(sum(mul(logp, Tensor<S>::from(probs.shape(), std::move(onehot)))), S(-1));
}

template <class S>
std::array<Tensor<S>, 2> confidence_losses(const Tensor<S>& conf, const std::vector<std::uint8_t>& obj_mask) {
  if (conf.numel() != obj_mask.size()) throw DimensionError("confidence_losses: mask length mismatch");
  const std::size_t n = conf.numel();
  std::vector<S> pos(n), neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = obj_mask[i] ? S(1) : S(0);
    neg[i] = S(1) - pos[i];
  }
  const Tensor<S> flat = reshape(conf, {n});
  const Tensor<S> pos_t = Tensor<S>::from({n}, pos);
  const Tensor<S> neg_t = Tensor<S>::from({n}, std::move(neg));
  // Target is 1 on obj cells and 0 elsewhere, i.e. the obj mask itself.
  const Tensor<S> sq = square(sub(flat, pos_t));
  return {sum(mul(sq, pos_t)), sum(mul(sq, neg_t))};
}

template <class S>
Tensor<S> giou_loss(const Tensor<S>& pred, const std::vector<Box>& targets) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.dim(0) != targets.size()) {
    throw DimensionError("giou_loss: expected [n x 4] with n = " + std::to_string(targets.size()) + ", got " +
                         shape_str(pred.shape()));
  }
  const std::size_t n = targets.size();
  const auto p = pred.data();
  std::vector<S> grad_local(n * 4);
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Box& g = targets[i];
    if (!g.valid()) throw ContractError("giou_loss: degenerate target box");
    const S px1 = p[4 * i], py1 = p[4 * i + 1], px2 = p[4 * i + 2], py2 = p[4 * i + 3];
    if (!(px1 < px2 && py1 < py2)) throw ContractError("giou_loss: degenerate predicted box");
    const S gx1 = static_cast<S>(g.x1), gy1 = static_cast<S>(g.y1);
    const S gx2 = static_cast<S>(g.x2), gy2 = static_cast<S>(g.y2);

    const S iw_raw = std::min(px2, gx2) - std::max(px1, gx1);
    const S ih_raw = std::min(py2, gy2) - std::max(py1, gy1);
    const bool overlap = iw_raw > 0 && ih_raw > 0;
    const S iw = overlap ? iw_raw : S(0);
    const S ih = overlap ? ih_raw : S(0);
    const S inter = iw * ih;
    const S pw = px2 - px1, ph = py2 - py1;
    const S uni = pw * ph + (gx2 - gx1) * (gy2 - gy1) - inter;
    const S cw = std::max(px2, gx2) - std::min(px1, gx1);
    const S ch = std::max(py2, gy2) - std::min(py1, gy1);
    const S hull = cw * ch;
    // loss = 1 - (I/U - (C - U)/C) = 2 - I/U - U/C
    total += S(2) - inter / uni - uni / hull;

    // Partials with respect to (x1, y1, x2, y2).
    S d_inter[4] = {0, 0, 0, 0};
    if (overlap) {
      d_inter[0] = px1 > gx1 ? -ih : S(0);
      d_inter[2] = px2 < gx2 ? ih : S(0);
      d_inter[1] = py1 > gy1 ? -iw : S(0);
      d_inter[3] = py2 < gy2 ? iw : S(0);
    }
    const S d_area[4] = {-ph, -pw, ph, pw};
    const S d_hull[4] = {px1 < gx1 ? -ch : S(0), py1 < gy1 ? -cw : S(0), px2 > gx2 ? ch : S(0),
                         py2 > gy2 ? cw : S(0)};
    for (int j = 0; j < 4; ++j) {
      const S d_uni = d_area[j] - d_inter[j];
      const S d_iou = (d_inter[j] * uni - inter * d_uni) / (uni * uni);
      const S d_ratio = (d_uni * hull - uni * d_hull[j]) / (hull * hull);
      grad_local[4 * i + j] = -d_iou - d_ratio;
    }
  }
  if (!std::isfinite(total)) throw NumericError("giou_loss produced a non-finite value");
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = {};
  node->data = {total};
  if (grad_enabled() && pred.requires_grad()) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.push_back(pred.node_ptr());
    node->backward = [grad_local = std::move(grad_local)](detail::Node<S>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad_local[i];
    };
  }
  return Tensor<S>(std::move(node));
}

template <class S>
Tensor<S> decode_box_tensor(const Tensor<S>& raw, const std::vector<std::size_t>& cells, std::size_t grid,
                            std::size_t stride) {
  if (raw.rank() != 2 || raw.dim(1) != 4 || raw.dim(0) != cells.size()) {
    throw DimensionError("decode_box_tensor: expected [n x 4] raw offsets");
  }
  const std::size_t n = cells.size();
  std::vector<S> gx(n), gy(n);
  for (std::size_t i = 0; i < n; ++i) {
    gx[i] = static_cast<S>(cells[i] % grid);
    gy[i] = static_cast<S>(cells[i] / grid);
  }
  const auto st = static_cast<S>(stride);
  const Tensor<S> cx = scale(add(sigmoid(slice_cols(raw, 0, 1)), Tensor<S>::from({n, 1}, std::move(gx))), st);
  const Tensor<S> cy = scale(add(sigmoid(slice_cols(raw, 1, 2)), Tensor<S>::from({n, 1}, std::move(gy))), st);
  const Tensor<S> half_w = scale(exp(clamp(slice_cols(raw, 2, 3), S(-10), S(10))), st * S(0.5));
  const Tensor<S> half_h = scale(exp(clamp(slice_cols(raw, 3, 4), S(-10), S(10))), st * S(0.5));
  return concat_cols<S>({sub(cx, half_w), sub(cy, half_h), add(cx, half_w), add(cy, half_h)});
}

template <class S>
LossBreakdown<S> total_loss(const std::array<Tensor<S>, kNumScales>& heads, const TargetAssignment& targets,
                            const LossGains& gains) {
  Tensor<S> box = Tensor<S>::scalar(S(0));
  Tensor<S> cls = Tensor<S>::scalar(S(0));
  Tensor<S> obj = Tensor<S>::scalar(S(0));
  Tensor<S> noobj = Tensor<S>::scalar(S(0));
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const ScaleTargets& st = targets.scales[s];
    const Tensor<S>& head = heads[s];
    if (head.rank() != 3 || head.dim(1) != st.grid || head.dim(2) != st.grid ||
        head.dim(0) <= kHeadBoxChannels) {
      throw DimensionError("total_loss: head " + shape_str(head.shape()) + " does not match grid " +
                           std::to_string(st.grid));
    }
    const std::size_t channels = head.dim(0), cells = st.grid * st.grid;
    const Tensor<S> rows = transpose(reshape(head, {channels, cells}));
    const auto conf_terms = confidence_losses(sigmoid(slice_cols(rows, 4, 5)), st.obj_mask);
    obj = add(obj, conf_terms[0]);
    noobj = add(noobj, conf_terms[1]);
    if (st.cells.empty()) continue;
    const Tensor<S> pos = gather_rows(rows, st.cells);
    box = add(box, giou_loss(decode_box_tensor(slice_cols(pos, 0, 4), st.cells, st.grid, st.stride), st.boxes));
    const Tensor<S> probs = softmax(slice_cols(pos, kHeadBoxChannels, channels), 1);
    cls = add(cls, classification_loss(probs, st.class_ids, std::vector<std::uint8_t>(st.cells.size(), 1)));
  }
  LossBreakdown<S> out;
  out.box = scale(box, static_cast<S>(gains.box));
  out.cls = scale(cls, static_cast<S>(gains.cls));
  out.obj = scale(obj, static_cast<S>(gains.obj));
  out.noobj = scale(noobj, static_cast<S>(gains.noobj));
  out.total = add(add(add(out.box, out.cls), out.obj), out.noobj);
  return out;
}

#define CMFT_INSTANTIATE_LOSSES(S)                                                                    \
  template Tensor<S> classification_loss(const Tensor<S>&, const std::vector<int>&,                   \
                                         const std::vector<std::uint8_t>&);                           \
  template std::array<Tensor<S>, 2> confidence_losses(const Tensor<S>&, const std::vector<std::uint8_t>&); \
  template Tensor<S> giou_loss(const Tensor<S>&, const std::vector<Box>&);                            \
  template Tensor<S> decode_box_tensor(const Tensor<S>&, const std::vector<std::size_t>&, std::size_t, \
                                       std::size_t);                                                  \
  template LossBreakdown<S> total_loss(const std::array<Tensor<S>, kNumScales>&,                      \
                                       const TargetAssignment&, const LossGains&);

CMFT_INSTANTIATE_LOSSES(float)
CMFT_INSTANTIATE_LOSSES(double)

}  // namespace cmft
