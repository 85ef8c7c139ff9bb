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

#ifndef PARTLANG_BACKEND_HPP_
#define PARTLANG_BACKEND_HPP_

#include <cstdint>
#include <memory>
#include <string>

#include "partlang/encoders.hpp"
#include "partlang/synthetic.hpp"

namespace partlang {

// Encoder bundle shared by the CLI and the service.
//   stub:      hash text encoder + raster stub image encoder
//   synthetic: the synthetic world's text table, image ids and teacher
struct BackendOptions {
  std::string kind = "stub";
  std::size_t text_dim = 32;
  std::size_t image_dim = 32;
  std::size_t grid = 4;
  std::uint64_t seed = 0;
  std::size_t synthetic_classes = 8;
  DescriptorTemplate descriptor_template = DescriptorTemplate::kPartColonPhrase;
};

struct Backend {
  std::shared_ptr<const TextEncoder> text;
  std::shared_ptr<const ImageEncoder> image;
  std::shared_ptr<const TeacherProvider> teacher;  // null for the stub backend
  std::shared_ptr<const SyntheticWorld> world;     // synthetic backend only
};

Backend MakeBackend(const BackendOptions& options);

}  // namespace partlang

#endif  // PARTLANG_BACKEND_HPP_
