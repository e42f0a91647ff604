// Trains a small victim on synthetic desk images, crafts a range-prior
// perturbation without touching the training data, and reports how often it
// flips the victim's predictions.
//
//   craft_demo [iterations] [out.uapf]

#include <cstdlib>
#include <iostream>

#include "gduap/crafting.hpp"
#include "gduap/runtime.hpp"
#include "gduap/training.hpp"

int main(int argc, char** argv) {
  using namespace gduap;
  tune_allocator();
  const long iterations = argc > 1 ? std::atol(argv[1]) : 2000;
  const std::string out = argc > 2 ? argv[2] : "range.uapf";

  const auto train = synth::desk10(2000, 1);
  const auto test = synth::desk10(300, 2);
  const auto substitute = synth::substitute(100, 3);

  const auto victim = train_victim(VictimSpec{Architecture::small_conv_a, 10, "", 7}, train);
  std::cout << "victim top-1: " << metrics::top1(victim.classify(test.images()), test.labels()) << "\n";

  // Only the per-channel mean of the training distribution is used.
  CraftConfig cfg;
  cfg.prior_mode = PriorMode::range;
  cfg.max_iterations = iterations;
  cfg.seed = 11;
  auto prior = PriorSource::range(channel_mean(train), victim.input_shape(), cfg.seed);

  CraftObserver obs;
  obs.on_rescale = [](long t, const Image&, const Image&) { std::cout << "  rescale at iteration " << t << "\n"; };
  const auto result = craft(victim, cfg, prior, substitute, obs);

  const auto clean = victim.forward(test.images());
  const auto baseline = random_baseline(victim.input_shape(), cfg.xi, cfg.seed);
  std::cout << "iterations: " << result.best.meta.iterations_run << (result.truncated ? " (budget reached)" : "")
            << "\nfooling rate, crafted: " << evaluate_fooling(victim, test.images(), clean, result.best.delta)
            << "\nfooling rate, random:  " << evaluate_fooling(victim, test.images(), clean, baseline.delta) << "\n";
  save_perturbation(result.best, out);
  std::cout << "wrote " << out << "\n";
}
