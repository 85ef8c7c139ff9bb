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

#ifndef PARTLANG_TYPES_HPP_
#define PARTLANG_TYPES_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace partlang {

// All numerics run in double; on-disk embeddings are float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// n x d_i image-encoder output, one row per patch / query token.
using PatchEmbeddingMatrix = Matrix;
// m x d_t text-encoder output, one row per input string.
using TextEmbeddingMatrix = Matrix;

// Axis-aligned box given by its corners, in any coordinate frame.
struct CornerBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const;
  bool operator==(const CornerBox&) const = default;
};

// Center-format box [cx, cy, w, h]. Boxes emitted by the model are
// normalized to the image (see IsNormalized); the loss functions accept
// boxes in any frame.
struct BoundingBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  static BoundingBox FromCorners(const CornerBox& c);
  CornerBox ToCorners() const;

  bool IsNormalized() const;
  // Clamps into 0 <= cx,cy <= 1 and 0 < w,h <= 1.
  BoundingBox ClampedToUnit() const;

  bool Contains(double x, double y) const;  // closed box
  bool operator==(const BoundingBox&) const = default;
};

// Annotated keypoint in pixel coordinates.
struct Keypoint {
  std::string part;
  double x = 0, y = 0;
  bool visible = true;
  bool operator==(const Keypoint&) const = default;
};

// Patch index chosen for each vocabulary part; duplicates allowed.
struct PartSelection {
  std::vector<int> indices;
  bool operator==(const PartSelection&) const = default;
};

std::uint64_t Fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string HexDigest(std::uint64_t value);

bool AllFinite(const Matrix& m);
// Throws NumericError naming `what` when any entry is NaN or infinite.
void RequireFinite(const Matrix& m, const std::string& what);

}  // namespace partlang

#endif  // PARTLANG_TYPES_HPP_
