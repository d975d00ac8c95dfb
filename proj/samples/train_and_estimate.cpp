// Copyright 2026 The msecnet Authors.
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


// Trains the tiny configuration for a few epochs on synthetic creases, then
// estimates normals of a held-out shape with patch coverage and compares to PCA.

#include <cstdio>
#include <vector>

#include "msecnet/msecnet.hpp"

int main() {
  namespace data = msecnet::data;
  namespace train = msecnet::train;
  std::vector<msecnet::geom::PointCloud> shapes;
  for (double angle : {60.0, 90.0, 120.0})
    shapes.push_back(data::synth_shape({data::ShapeKind::kDihedral, angle}, 1500, static_cast<std::uint64_t>(angle)));
  shapes.push_back(data::synth_shape({data::ShapeKind::kCube, 90.0}, 1500, 4));

  const msecnet::model::ModelConfig cfg = msecnet::model::tiny_config();
  msecnet::model::Network net(cfg, 0);
  train::TrainConfig tc = train::desk_train_config();
  tc.n = 32;
  tc.epochs = 6;
  tc.batch_patches = 8;
  tc.patches_per_shape_per_epoch = 64;
  train::TrainOutputs out;
  out.on_epoch = [](const train::EpochRecord& r) { std::printf("%s\n", train::format_epoch(r).c_str()); };
  train::train(net, shapes, tc, out);

  const msecnet::geom::PointCloud held = data::synth_shape({data::ShapeKind::kDihedral, 75.0}, 1500, 9);
  msecnet::infer::InferenceOptions io;
  io.n = tc.n;
  const msecnet::infer::MsecEstimator est(net, io);
  const msecnet::infer::PcaEstimator pca(18);
  std::printf("held-out rmse: network %.2f deg, pca %.2f deg\n",
              msecnet::infer::rmse_angle(est.estimate(held), *held.normals),
              msecnet::infer::rmse_angle(pca.estimate(held), *held.normals));
  return 0;
}
