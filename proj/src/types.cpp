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

#include "partlang/types.hpp"

#include <algorithm>
#include <cstdio>

#include "partlang/error.hpp"

namespace partlang {

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kProvider: return "provider";
  }
  return "unknown";
}

double CornerBox::area() const {
  return std::max(0.0, width()) * std::max(0.0, height());
}

BoundingBox BoundingBox::FromCorners(const CornerBox& c) {
  return {(c.x0 + c.x1) / 2, (c.y0 + c.y1) / 2, c.x1 - c.x0, c.y1 - c.y0};
}

CornerBox BoundingBox::ToCorners() const {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

bool BoundingBox::IsNormalized() const {
  return cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1 && w > 0 && w <= 1 && h > 0 && h <= 1;
}

BoundingBox BoundingBox::ClampedToUnit() const {
  constexpr double kMinSide = 1e-6;
  return {std::clamp(cx, 0.0, 1.0), std::clamp(cy, 0.0, 1.0),
          std::clamp(w, kMinSide, 1.0), std::clamp(h, kMinSide, 1.0)};
}

bool BoundingBox::Contains(double x, double y) const {
  const CornerBox c = ToCorners();
  return x >= c.x0 && x <= c.x1 && y >= c.y0 && y <= c.y1;
}

std::uint64_t Fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string HexDigest(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

bool AllFinite(const Matrix& m) { return m.allFinite(); }

void RequireFinite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + " contains non-finite values");
}

}  // namespace partlang
