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

#include "partlang/optim.hpp"

#include <algorithm>
#include <cmath>

namespace partlang {

AdamW::AdamW(const ModelParams& params, std::vector<ParamGroup> trainable, AdamWOptions options)
    : trainable_(std::move(trainable)), options_(options) {
  for (const ConstTensorRef& t : Tensors(params)) {
    m_.push_back(Matrix::Zero(t.value->rows(), t.value->cols()));
    v_.push_back(Matrix::Zero(t.value->rows(), t.value->cols()));
  }
}

bool AdamW::Trainable(ParamGroup g) const {
  return std::find(trainable_.begin(), trainable_.end(), g) != trainable_.end();
}

void AdamW::Step(ModelParams& params, const ModelParams& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, double(t_));
  auto ps = Tensors(params);
  auto gs = Tensors(grads);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!Trainable(ps[i].group)) continue;
    Matrix& p = *ps[i].value;
    const Matrix& g = *gs[i].value;
    m_[i] = options_.beta1 * m_[i] + (1 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1 - options_.beta2) * g.cwiseProduct(g);
    p *= 1.0 - options_.learning_rate * options_.weight_decay;
    p.array() -= options_.learning_rate * (m_[i].array() / bc1) /
                 ((v_[i].array() / bc2).sqrt() + options_.eps);
  }
}

double PlateauScheduler::Step(double metric, double current_lr) {
  if (metric < best_) {
    best_ = metric;
    bad_ = 0;
    return current_lr;
  }
  if (++bad_ > patience_) {
    bad_ = 0;
    return std::max(min_lr_, current_lr * factor_);
  }
  return current_lr;
}

}  // namespace partlang
