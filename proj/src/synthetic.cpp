#include "autolabel/synthetic.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "autolabel/error.hpp"

namespace autolabel {

std::vector<ImageRecord> synthesize_images(const SynthSpec& spec, const ClassTable& classes,
                                           std::uint64_t seed) {
  if (classes.size() == 0) throw ValidationError("synthesis needs at least one class");
  if (spec.width <= 0 || spec.height <= 0) throw ValidationError("bad synthetic image size");
  std::mt19937_64 rng(seed);
  std::poisson_distribution<int> count(spec.mean_instances);
  std::normal_distribution<double> side(spec.box_mean, spec.box_sd);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(classes.size()) - 1);

  std::vector<ImageRecord> out;
  out.reserve(spec.images);
  for (std::size_t i = 0; i < spec.images; ++i) {
    ImageRecord rec;
    rec.image_id = fmt::format("{}{:05d}", spec.prefix, i);
    rec.path = rec.image_id + ".jpg";
    rec.width = spec.width;
    rec.height = spec.height;
    rec.labeled = true;
    const int n = std::max(1, count(rng));
    for (int k = 0; k < n; ++k) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double w = std::clamp(side(rng), 4.0, spec.width * 0.5);
        const double h = std::clamp(side(rng), 4.0, spec.height * 0.5);
        const double x = unit(rng) * (spec.width - w);
        const double y = unit(rng) * (spec.height - h);
        const BoundingBox box(x, y, x + w, y + h);
        const bool clash = std::any_of(rec.instances.begin(), rec.instances.end(),
                                       [&](const Instance& o) {
                                         return iou(o.box, box) > spec.max_pair_iou;
                                       });
        if (!clash) {
          rec.instances.emplace_back(box, cls(rng));
          break;
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

SyntheticDataset synthesize_dataset(const SynthSpec& spec, const ClassTable& classes,
                                    std::size_t labeled, SplitRatios ratios,
                                    std::uint64_t seed) {
  auto images = synthesize_images(spec, classes, seed);
  if (labeled > images.size()) throw ValidationError("more labeled images than generated");
  SyntheticDataset out;
  out.dataset.classes = classes;
  for (std::size_t i = labeled; i < images.size(); ++i) {
    out.hidden_truth[images[i].image_id] = std::move(images[i].instances);
    images[i].instances.clear();
    images[i].labeled = false;
  }
  if (labeled >= 3) {
    out.dataset.split = split(images, ratios, seed);
    for (auto& rec : images) {
      const std::string id = rec.image_id;
      out.dataset.images.emplace(id, std::move(rec));
    }
  } else {
    for (auto& rec : images) {
      const Subset s = rec.labeled ? Subset::train : Subset::unlabeled;
      out.dataset.add(std::move(rec), s);
    }
  }
  out.dataset.validate();
  return out;
}

}  // namespace autolabel
