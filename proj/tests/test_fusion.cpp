#include <random>

#include "doctest.h"

#include "autolabel/error.hpp"
#include "autolabel/fusion.hpp"
#include "suites.hpp"
#include "support.hpp"

using namespace autolabel;

namespace {

EmbeddingVector vec(std::initializer_list<double> v,
                    EmbeddingSource s = EmbeddingSource::image_region) {
  EmbeddingVector e;
  e.values = Eigen::VectorXd(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) e.values[i++] = x;
  e.source = s;
  return e;
}

Detection det(double x, double conf, int c = 0) {
  return Detection(BoundingBox(x, 0, x + 10, 10), c, conf);
}

}  // namespace

TEST_CASE("cosine similarity") {
  const long double dot = 32.0L, na = std::sqrt(14.0L), nb = std::sqrt(77.0L);
  CHECK(cosine_similarity(vec({1, 2, 3}).values, vec({4, 5, 6}).values) ==
        doctest::Approx(double(dot / (na * nb))).epsilon(1e-15));
  CHECK(cosine_similarity(vec({1, 0}).values, vec({0, 1}).values) == 0.0);
  CHECK(cosine_similarity(vec({1, 1}).values, vec({-2, -2}).values) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine_similarity(vec({1, 2}).values, vec({1, 2, 3}).values), ValidationError);
  CHECK_THROWS_AS(cosine_similarity(vec({0, 0}).values, vec({1, 2}).values), ValidationError);
  CHECK(suites::cosine(300, 5).ok());
}

TEST_CASE("class assignment picks the most similar prompt") {
  const std::vector<Detection> d = {det(0, 0.8, 1), det(20, 0.6, 0)};
  const std::vector<EmbeddingVector> regions = {vec({0.9, 0.1}), vec({0.2, 0.8})};
  const PromptSet prompts{{{0, "broiler"}, {1, "hen"}}};
  const std::vector<EmbeddingVector> pe = {vec({1, 0}, EmbeddingSource::text_prompt),
                                           vec({0, 1}, EmbeddingSource::text_prompt)};
  const auto out = assign_classes(d, regions, prompts, pe, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0].detection.class_id() == 0);
  CHECK(out[0].detection.confidence() == 0.8);  // confidence is kept
  CHECK(out[1].detection.class_id() == 1);
  CHECK(out[0].similarity == doctest::Approx(0.9 / std::hypot(0.9, 0.1)));

  // Exact tie goes to the lower class id.
  const std::vector<EmbeddingVector> tie = {vec({1, 1}), vec({1, 1})};
  const auto t = assign_classes(d, tie, prompts, pe, 2);
  CHECK(t[0].detection.class_id() == 0);
  CHECK(t[1].detection.class_id() == 0);

  // Several prompts per class: the best one counts.
  const PromptSet multi{{{0, "broiler"}, {1, "hen"}, {1, "laying hen"}}};
  const std::vector<EmbeddingVector> pe3 = {vec({1, 0}), vec({0, 1}), vec({0.85, 0.15})};
  CHECK(assign_classes(d, regions, multi, pe3, 2)[0].detection.class_id() == 1);

  CHECK_THROWS_AS(assign_classes(d, std::vector<EmbeddingVector>{regions[0]}, prompts, pe, 2),
                  ValidationError);
  const PromptSet missing{{{0, "broiler"}}};
  CHECK_THROWS_AS(assign_classes(d, regions, missing, std::vector<EmbeddingVector>{pe[0]}, 2),
                  ValidationError);
}

TEST_CASE("class assignment is an argmax and scale invariant") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> s(0.01, 100);
  for (int t = 0; t < 50; ++t) {
    const int k = 4, dim = 6;
    PromptSet prompts;
    std::vector<EmbeddingVector> pe;
    for (int c = 0; c < k; ++c) {
      prompts.prompts.push_back({c, "p" + std::to_string(c)});
      EmbeddingVector e;
      e.values = Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); });
      pe.push_back(e);
    }
    std::vector<Detection> d;
    std::vector<EmbeddingVector> regions, scaled;
    for (int i = 0; i < 20; ++i) {
      d.push_back(det(i * 12.0, 0.5));
      EmbeddingVector e;
      e.values = Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); });
      regions.push_back(e);
      e.values *= s(rng);
      scaled.push_back(e);
    }
    const auto a = assign_classes(d, regions, prompts, pe, k);
    const auto b = assign_classes(d, scaled, prompts, pe, k);
    for (int i = 0; i < 20; ++i) {
      int best = 0;
      long double best_v = -2;
      for (int c = 0; c < k; ++c) {
        std::vector<double> x(regions[i].values.data(), regions[i].values.data() + dim);
        std::vector<double> y(pe[c].values.data(), pe[c].values.data() + dim);
        const long double v = oracle::cosine(x, y);
        if (v > best_v) best_v = v, best = c;
      }
      CHECK(a[i].detection.class_id() == best);
      CHECK(b[i].detection.class_id() == best);
    }
  }
}

TEST_CASE("backend merge") {
  const std::vector<Detection> p = {det(0, 0.8), det(50, 0.4)};
  const std::vector<Detection> s = {det(1, 0.9), det(100, 0.5), det(51, 0.4)};
  const auto m = merge_backends(p, s, 0.5, "yolo", "gdino");
  REQUIRE(m.size() == 3);
  CHECK(m[0].source == "gdino");  // 0.9 beats the primary's overlapping 0.8
  CHECK(m[1].source == "gdino");
  CHECK(m[2].source == "yolo");   // equal confidence: primary wins
  CHECK(m[2].detection == p[1]);

  CHECK(merge_backends(p, {}, 0.5).size() == 2);
  CHECK(merge_backends({}, {}, 0.5).empty());
}

TEST_CASE("backend merge agrees with union plus quadratic suppression") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 300; ++t) {
    std::vector<Detection> p, s;
    for (int k = int(rng() % 10); k > 0; --k) {
      p.emplace_back(oracle::random_box(rng, 60), int(rng() % 2), oracle::random_confidence(rng, 5));
    }
    for (int k = int(rng() % 10); k > 0; --k) {
      const auto b = !p.empty() && rng() % 2 ? oracle::perturb(rng, p[rng() % p.size()].box(), 2)
                                             : oracle::random_box(rng, 60);
      s.emplace_back(b, int(rng() % 2), oracle::random_confidence(rng, 5));
    }
    std::vector<Detection> all = p;
    all.insert(all.end(), s.begin(), s.end());
    const auto want = oracle::nms(all, 0.5);
    const auto got = merge_backends(p, s, 0.5);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].detection == all[want[k]]);
      CHECK(got[k].source == (want[k] < p.size() ? "primary" : "secondary"));
    }
  }
}

TEST_CASE("synthetic embeddings reproduce truth classes") {
  const auto sd = testing_support::small_dataset(30, 10, 5);
  SyntheticEmbeddingProvider provider(2, sd.hidden_truth, 0.0, 1);
  const auto prompts = PromptSet::from_class_names(sd.dataset.classes);
  DetectionMap d;
  std::vector<ImageRecord> images;
  for (const auto& [id, v] : sd.hidden_truth) {
    images.push_back(sd.dataset.at(id));
    for (const auto& i : v) d[id].emplace_back(i.box, 1 - i.class_id, 0.7);  // wrong classes
  }
  const auto fused = to_detection_map(hybrid_assign(d, images, provider, prompts, 2));
  for (const auto& [id, v] : fused) {
    const auto& truth = sd.hidden_truth.at(id);
    REQUIRE(v.size() == truth.size());
    for (std::size_t k = 0; k < v.size(); ++k) CHECK(v[k].class_id() == truth[k].class_id);
  }

  SyntheticEmbeddingProvider noisy(2, sd.hidden_truth, 0.3, 9);
  const auto& rec = images.front();
  const auto& boxes = d.at(rec.image_id);
  CHECK(noisy.embed_regions(rec, boxes)[0].values ==
        SyntheticEmbeddingProvider(2, sd.hidden_truth, 0.3, 9).embed_regions(rec, boxes)[0].values);
}

TEST_CASE("external embedding provider") {
  testing_support::TempDir tmp;
  const auto script = tmp / "embed.sh";
  // Every request line gets the vector (1, 0) for prompts and (0, 1) for regions.
  std::ofstream(script) << "#!/bin/sh\n"
                           "echo dim=2 > \"$2\"\n"
                           "awk -F'\\t' '$1==\"prompt\" {print $2 \"\\t1,0\"} $1==\"region\" {print $2 \"\\t0,1\"}' \"$1\" >> \"$2\"\n";
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  ExternalEmbeddingProvider provider(shell_quote(script.string()), tmp.path(), 2);
  ImageRecord rec;
  rec.image_id = "a";
  rec.path = "a.jpg";
  rec.width = rec.height = 50;
  const std::vector<Detection> boxes = {det(0, 0.5), det(20, 0.5)};
  const auto r = provider.embed_regions(rec, boxes);
  REQUIRE(r.size() == 2);
  CHECK(r[1].values[1] == 1.0);
  const auto p = provider.embed_prompts(PromptSet{{{0, "broiler"}}});
  CHECK(p[0].values[0] == 1.0);

  ExternalEmbeddingProvider wrong_dim(shell_quote(script.string()), tmp.path(), 3);
  CHECK_THROWS_AS(wrong_dim.embed_regions(rec, boxes), Error);
}
