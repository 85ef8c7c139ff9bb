/* Copyright 2026 The partlang Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "partlang/losses.hpp"

#include <algorithm>
#include <cmath>

#include "partlang/error.hpp"

namespace partlang {

namespace {

constexpr double kEps = 1e-7;

double LogSumExp(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

}  // namespace

LabelAssignment LabelAssignment::FromMatches(const Matrix& matches) {
  if ((matches.array() < 0).any()) throw ValidationError("label matches must be non-negative");
  LabelAssignment out{Matrix::Zero(matches.rows(), matches.cols()),
                      Matrix::Zero(matches.rows(), matches.cols())};
  for (Eigen::Index i = 0; i < matches.rows(); ++i) {
    const double s = matches.row(i).sum();
    if (s > 0) out.row_targets.row(i) = matches.row(i) / s;
  }
  for (Eigen::Index j = 0; j < matches.cols(); ++j) {
    const double s = matches.col(j).sum();
    if (s > 0) out.col_targets.col(j) = matches.col(j) / s;
  }
  return out;
}

void LabelAssignment::Validate(Eigen::Index rows, Eigen::Index cols) const {
  if (row_targets.rows() != rows || row_targets.cols() != cols || col_targets.rows() != rows ||
      col_targets.cols() != cols) {
    throw ShapeError("label shapes do not match the similarity matrix");
  }
  if ((row_targets.array() < 0).any() || (col_targets.array() < 0).any()) {
    throw ValidationError("label targets must be non-negative");
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double s = row_targets.row(i).sum();
    if (s != 0 && std::abs(s - 1) > 1e-9) throw ValidationError("row target is not a distribution");
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double s = col_targets.col(j).sum();
    if (s != 0 && std::abs(s - 1) > 1e-9) throw ValidationError("column target is not a distribution");
  }
}

double SceLoss(const Matrix& similarity, const LabelAssignment& labels, Matrix* grad) {
  RequireFinite(similarity, "similarity matrix");
  labels.Validate(similarity.rows(), similarity.cols());

  std::vector<Eigen::Index> rows, cols;
  for (Eigen::Index i = 0; i < similarity.rows(); ++i) {
    if (labels.row_targets.row(i).sum() > 0) rows.push_back(i);
  }
  for (Eigen::Index j = 0; j < similarity.cols(); ++j) {
    if (labels.col_targets.col(j).sum() > 0) cols.push_back(j);
  }
  if (rows.empty() || cols.empty()) throw ValidationError("SCE needs at least one positive pair");

  if (grad) grad->setZero(similarity.rows(), similarity.cols());
  double row_term = 0, col_term = 0;
  const double row_w = 0.5 / rows.size(), col_w = 0.5 / cols.size();
  for (Eigen::Index i : rows) {
    const Eigen::RowVectorXd s = similarity.row(i);
    const double lse = LogSumExp(s);
    row_term += lse - labels.row_targets.row(i).dot(s);
    if (grad) {
      grad->row(i) += row_w * ((s.array() - lse).exp().matrix() - labels.row_targets.row(i));
    }
  }
  for (Eigen::Index j : cols) {
    const Eigen::RowVectorXd s = similarity.col(j).transpose();
    const double lse = LogSumExp(s);
    col_term += lse - labels.col_targets.col(j).transpose().dot(s);
    if (grad) {
      grad->col(j) += col_w * ((s.array() - lse).exp().matrix() - labels.col_targets.col(j).transpose()).transpose();
    }
  }
  return 0.5 * (row_term / rows.size() + col_term / cols.size());
}

Vector Softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

double CeLoss(const Vector& logits, int target, Vector* grad) {
  if (target < 0 || target >= logits.size()) {
    throw ValidationError("CE target " + std::to_string(target) + " out of range for " +
                          std::to_string(logits.size()) + " classes");
  }
  if (!logits.allFinite()) throw NumericError("CE logits contain non-finite values");
  const double lse = LogSumExp(logits.transpose());
  if (grad) {
    *grad = (logits.array() - lse).exp();
    (*grad)[target] -= 1.0;
  }
  return lse - logits[target];
}

GiouResult Giou(const BoundingBox& a_box, const BoundingBox& b_box, BoundingBox* d_giou) {
  if (d_giou) *d_giou = {0, 0, 0, 0};
  if (a_box == b_box) return {1.0, 1.0};
  const CornerBox a = a_box.ToCorners();
  const CornerBox b = b_box.ToCorners();

  const double iw_raw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih_raw = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double area_a = a.area(), area_b = b.area();
  const double uni = area_a + area_b - inter;
  const bool degenerate = area_a <= 0 || area_b <= 0;
  const double uni_d = std::max(uni, kEps);
  const double iou = degenerate ? 0.0 : inter / uni_d;

  const double cw = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
  const double ch = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
  const double enclose = cw * ch;
  const double enclose_d = std::max(enclose, kEps);
  const double giou = iou - (enclose - uni) / enclose_d;

  if (d_giou) {
    // Partials of GIoU with respect to inter, area_a and enclose.
    double dg_dinter = 0, dg_darea = 0, dg_denclose = 0;
    if (!degenerate && uni > kEps) {
      dg_dinter += (uni + inter) / (uni * uni);
      dg_darea += -inter / (uni * uni);
    }
    if (enclose > kEps) {
      // -(enclose - uni)/enclose = uni/enclose - 1
      dg_dinter += -1.0 / enclose;
      dg_darea += 1.0 / enclose;
      dg_denclose += -uni / (enclose * enclose);
    }
    const double aw = a.width(), ah = a.height();
    // d/d(x0, y0, x1, y1) of a.
    double g[4] = {0, 0, 0, 0};
    if (aw > 0 && ah > 0) {
      g[0] += dg_darea * -ah;
      g[2] += dg_darea * ah;
      g[1] += dg_darea * -aw;
      g[3] += dg_darea * aw;
    }
    if (iw_raw > 0 && ih_raw > 0) {
      if (a.x0 >= b.x0) g[0] += dg_dinter * -ih;
      if (a.x1 <= b.x1) g[2] += dg_dinter * ih;
      if (a.y0 >= b.y0) g[1] += dg_dinter * -iw;
      if (a.y1 <= b.y1) g[3] += dg_dinter * iw;
    }
    if (a.x0 <= b.x0) g[0] += dg_denclose * -ch;
    if (a.x1 >= b.x1) g[2] += dg_denclose * ch;
    if (a.y0 <= b.y0) g[1] += dg_denclose * -cw;
    if (a.y1 >= b.y1) g[3] += dg_denclose * cw;
    d_giou->cx = g[0] + g[2];
    d_giou->cy = g[1] + g[3];
    d_giou->w = (g[2] - g[0]) / 2;
    d_giou->h = (g[3] - g[1]) / 2;
  }
  return {iou, giou};
}

BoxLossTerms BoxLoss(std::span<const BoundingBox> pred, std::span<const BoundingBox> gt, Matrix* grad,
                     BoxLossWeights weights) {
  if (pred.size() != gt.size()) {
    throw ShapeError("box_loss: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " targets");
  }
  if (pred.empty()) throw ShapeError("box_loss: no boxes");
  const double n = static_cast<double>(pred.size());
  if (grad) grad->setZero(pred.size(), 4);

  BoxLossTerms terms;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const CornerBox p = pred[k].ToCorners();
    const CornerBox t = gt[k].ToCorners();
    const double d[4] = {p.x0 - t.x0, p.y0 - t.y0, p.x1 - t.x1, p.y1 - t.y1};
    for (double v : d) terms.l1 += std::abs(v);

    BoundingBox dg;
    const GiouResult r = Giou(pred[k], gt[k], grad ? &dg : nullptr);
    terms.giou += 1.0 - r.giou;

    if (grad) {
      auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
      const double s[4] = {sgn(d[0]), sgn(d[1]), sgn(d[2]), sgn(d[3])};
      const double l1_scale = weights.l1 / (2 * n);
      const double giou_scale = -weights.giou / (2 * n);
      auto row = grad->row(static_cast<Eigen::Index>(k));
      row(0) += l1_scale * (s[0] + s[2]) + giou_scale * dg.cx;
      row(1) += l1_scale * (s[1] + s[3]) + giou_scale * dg.cy;
      row(2) += l1_scale * (s[2] - s[0]) / 2 + giou_scale * dg.w;
      row(3) += l1_scale * (s[3] - s[1]) / 2 + giou_scale * dg.h;
    }
  }
  terms.l1 /= n;
  terms.giou /= n;
  terms.total = (weights.l1 * terms.l1 + weights.giou * terms.giou) / 2;
  return terms;
}

Matrix BinarizeTeacher(const Matrix& teacher_similarity) {
  RequireFinite(teacher_similarity, "teacher similarity");
  Matrix out = Matrix::Zero(teacher_similarity.rows(), teacher_similarity.cols());
  for (Eigen::Index j = 0; j < teacher_similarity.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < teacher_similarity.rows(); ++i) {
      if (teacher_similarity(i, j) > teacher_similarity(best, j)) best = i;
    }
    if (teacher_similarity.rows() > 0) out(best, j) = 1.0;
  }
  return out;
}

Matrix SelectionOneHot(const PartSelection& selection, Eigen::Index num_patches) {
  Matrix out = Matrix::Zero(num_patches, static_cast<Eigen::Index>(selection.indices.size()));
  for (std::size_t j = 0; j < selection.indices.size(); ++j) {
    const int idx = selection.indices[j];
    if (idx < 0 || idx >= num_patches) throw ShapeError("selection index out of range");
    out(idx, static_cast<Eigen::Index>(j)) = 1.0;
  }
  return out;
}

}  // namespace partlang
