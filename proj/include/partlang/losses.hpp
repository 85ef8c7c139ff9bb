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

#ifndef PARTLANG_LOSSES_HPP_
#define PARTLANG_LOSSES_HPP_

#include <span>
#include <vector>

#include "partlang/types.hpp"

namespace partlang {

// Row-direction and column-direction target distributions for a similarity
// matrix. A row (column) of zeros is excluded from that direction.
struct LabelAssignment {
  Matrix row_targets;  // n x m; each non-zero row sums to 1
  Matrix col_targets;  // n x m; each non-zero column sums to 1

  // Builds both directions from a non-negative match matrix by normalizing
  // its rows and columns.
  static LabelAssignment FromMatches(const Matrix& matches);
  // Throws ValidationError when a target is not a distribution.
  void Validate(Eigen::Index rows, Eigen::Index cols) const;
};

// Symmetric cross-entropy: the mean of the row-softmax cross-entropy over
// active rows and the column-softmax cross-entropy over active columns,
// averaged over the two directions. This is per-pair normalized; multiply
// by the number of rows to get the summed form. `grad`, when given,
// receives dL/dS.
double SceLoss(const Matrix& similarity, const LabelAssignment& labels, Matrix* grad = nullptr);

// -log softmax(logits)[target]. `grad` receives softmax - onehot.
double CeLoss(const Vector& logits, int target, Vector* grad = nullptr);

// Numerically stable softmax.
Vector Softmax(const Vector& logits);

struct GiouResult {
  double iou = 0;
  double giou = 0;
};

// Axis-aligned GIoU. Zero-area boxes get IoU 0 against anything but an
// identical box; denominators are floored at 1e-7. `d_giou`, when given,
// receives dGIoU/d(cx, cy, w, h) of `a`.
GiouResult Giou(const BoundingBox& a, const BoundingBox& b, BoundingBox* d_giou = nullptr);

struct BoxLossWeights {
  double l1 = 1.0;
  double giou = 1.0;
  bool operator==(const BoxLossWeights&) const = default;
};

struct BoxLossTerms {
  double l1 = 0;    // mean over parts of the corner-to-corner L1 distance
  double giou = 0;  // mean over parts of 1 - GIoU
  double total = 0; // (w_l1 * l1 + w_giou * giou) / 2
};

// Parts are matched by index. `grad` (m x 4, columns cx, cy, w, h)
// receives d total / d pred.
BoxLossTerms BoxLoss(std::span<const BoundingBox> pred, std::span<const BoundingBox> gt,
                     Matrix* grad = nullptr, BoxLossWeights weights = {});

// One-hot per column at the argmax row; lowest row wins ties.
Matrix BinarizeTeacher(const Matrix& teacher_similarity);

// n x P one-hot matrix with a 1 at (selection[j], j).
Matrix SelectionOneHot(const PartSelection& selection, Eigen::Index num_patches);

}  // namespace partlang

#endif  // PARTLANG_LOSSES_HPP_
