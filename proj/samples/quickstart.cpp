#include <cstdio>

#include "hyperkan/pipeline.hpp"

using namespace hyperkan;

int main() {
  SyntheticSpec scene_spec;
  auto scene = gen_synthetic(scene_spec);
  auto split = stratified_split(scene.labels, Fraction{1, 10}, 7);
  auto cube = standardize_apply(scene.cube, standardize_fit(scene.cube, split.train));

  BuildOptions opt;
  opt.mlp.hidden = {16, 16};
  opt.mlp.batch_norm = true;
  const std::size_t classes = scene.labels.class_count();

  TrainConfig tc;
  tc.batch_size = 32;
  tc.seed = 7;
  for (const char* plan : {"vanilla", "full-kan"}) {
    auto spec = build_architecture("mlp", cube.bands, classes, 1, parse_plan(plan), opt);
    auto model = instantiate<float>(spec, tc.seed);
    const auto x = gather_inputs<float>(cube, split.train, spec.input);
    const auto y = gather_targets(scene.labels, split.train);
    Adam<float> adam(model.parameters());
    for (std::size_t e = 0; e < tc.epochs; ++e) train_epoch(model, x, y, adam, tc, e);
    const auto m = evaluate(model, cube, scene.labels, split);
    std::printf("%-9s params %5zu  OA %6.2f  weighted F1 %.4f\n", plan, param_count(spec), m.overall_accuracy,
                m.weighted_f1);
  }
}
