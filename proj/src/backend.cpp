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

#include "partlang/backend.hpp"

#include "partlang/error.hpp"

namespace partlang {

Backend MakeBackend(const BackendOptions& o) {
  Backend b;
  if (o.kind == "stub") {
    b.text = std::make_shared<HashTextEncoder>(o.text_dim, o.seed);
    b.image = std::make_shared<RasterStubEncoder>(o.grid, o.image_dim, o.seed);
    return b;
  }
  if (o.kind == "synthetic") {
    SyntheticConfig sc;
    sc.num_classes = o.synthetic_classes;
    sc.image_dim = o.image_dim;
    sc.text_dim = o.text_dim;
    sc.seed = o.seed;
    auto world = std::make_shared<const SyntheticWorld>(sc);
    b.text = world->MakeTextEncoder(o.descriptor_template);
    b.image = std::make_shared<SyntheticImageEncoder>(world);
    b.teacher = std::make_shared<SyntheticTeacher>(world);
    b.world = world;
    return b;
  }
  throw ConfigError("unknown backend '" + o.kind + "' (expected stub or synthetic)");
}

}  // namespace partlang
