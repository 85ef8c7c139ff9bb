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

#ifndef PARTLANG_OPTIM_HPP_
#define PARTLANG_OPTIM_HPP_

#include <limits>
#include <vector>

#include "partlang/model.hpp"

namespace partlang {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam over the tensors of the selected groups.
// Tensors outside those groups are never touched.
class AdamW {
 public:
  AdamW(const ModelParams& params, std::vector<ParamGroup> trainable, AdamWOptions options);

  void Step(ModelParams& params, const ModelParams& grads);

  double learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  long steps() const { return t_; }

 private:
  bool Trainable(ParamGroup g) const;

  std::vector<ParamGroup> trainable_;
  AdamWOptions options_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

// Reduce-on-plateau on a minimized metric.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double min_lr = 0.0)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}

  // Returns the learning rate to use from now on.
  double Step(double metric, double current_lr);

 private:
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace partlang

#endif  // PARTLANG_OPTIM_HPP_
