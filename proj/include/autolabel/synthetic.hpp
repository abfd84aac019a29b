#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autolabel/dataset.hpp"

namespace autolabel {

/// Parameters for generated ground truth used by simulations and demos.
struct SynthSpec {
  std::size_t images = 100;
  int width = 640;
  int height = 480;
  double mean_instances = 8.0;  // Poisson mean, at least one instance per image
  double box_mean = 40.0;       // px, side length
  double box_sd = 8.0;
  double max_pair_iou = 0.3;    // rejection bound between generated boxes
  std::string prefix = "img";
};

/// Labeled records `<prefix>NNNNN` holding human instances. Pairwise IoU
/// between generated boxes stays below max_pair_iou, so NMS at 0.5 never
/// removes ground truth.
std::vector<ImageRecord> synthesize_images(const SynthSpec& spec, const ClassTable& classes,
                                           std::uint64_t seed);

/// Builds a dataset from generated images: the first `labeled` images are
/// split by `ratios`, the rest form the unlabeled pool with their instances
/// moved into the returned hidden ground-truth map.
struct SyntheticDataset {
  Dataset dataset;
  std::map<std::string, std::vector<Instance>, std::less<>> hidden_truth;
};

SyntheticDataset synthesize_dataset(const SynthSpec& spec, const ClassTable& classes,
                                    std::size_t labeled, SplitRatios ratios, std::uint64_t seed);

}  // namespace autolabel
