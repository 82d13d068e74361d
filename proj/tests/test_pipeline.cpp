#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "eggloc/pipeline.hpp"
#include "eggloc/predictions.hpp"
#include "eggloc/process_backend.hpp"
#include "test_support.hpp"

using eggloc::BoundingBox;
using eggloc::Dataset;
using eggloc::StubBackend;
using eggloc::TrainConfig;
using testkit::TempDir;

namespace {

// n equal square images with one annotation each.
Dataset synthetic_dataset(int n, int width = 640, int height = 480) {
  Dataset ds;
  ds.categories = eggloc::canonical_categories();
  for (int i = 0; i < n; ++i) {
    const std::string id = "img_" + std::to_string(i);
    ds.images.push_back({id, id + ".ppm", width, height});
    ds.annotations.push_back(
        {id, ds.categories[static_cast<std::size_t>(i) % 11], {10, 10, 100, 100}});
  }
  return ds;
}

std::vector<std::string> ids_of(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& img : ds.images) ids.push_back(img.image_id);
  return ids;
}

std::vector<double> constant_losses(std::size_t n, double value = 0.5) {
  return std::vector<double>(n, value);
}

// Backend that records every batch it sees; losses are all 1.0.
class RecordingBackend : public eggloc::Backend {
 public:
  std::string name() const override { return "recording"; }
  eggloc::BackendCapabilities capabilities() const override {
    return {.trainable = true, .generative = false, .concurrent_generate = false};
  }
  double train_step(const std::vector<eggloc::TrainSample>& batch) override {
    batches.push_back(batch);
    return 1.0;
  }
  std::string generate(const eggloc::GenerateRequest&) override {
    throw eggloc::CapabilityError("recording backend cannot generate");
  }
  void save_adapter(const std::filesystem::path&) override {}
  void load_adapter(const std::filesystem::path&) override {}

  std::vector<std::vector<eggloc::TrainSample>> batches;
};

}  // namespace

TEST_CASE("training config defaults and serialization round trip", "[pipeline]") {
  const TrainConfig config;
  CHECK(config.epochs == 3);
  CHECK(config.learning_rate == 5e-5);
  CHECK(config.per_device_batch == 1);
  CHECK(config.grad_accum_steps == 8);
  CHECK(config.adapter_rank == 8);
  CHECK(config.image_size == 768);
  CHECK(config.effective_batch() == 8);

  const nlohmann::json j = config;
  CHECK(j.get<TrainConfig>() == config);

  TrainConfig custom;
  custom.epochs = 7;
  custom.learning_rate = 1e-3;
  custom.seed = 99;
  CHECK(nlohmann::json(custom).get<TrainConfig>() == custom);
}

TEST_CASE("training config validation", "[pipeline]") {
  TrainConfig config;
  config.epochs = 0;
  CHECK_THROWS_AS(config.validate(), eggloc::ValidationError);
  config = TrainConfig{};
  config.learning_rate = 0.0;
  CHECK_THROWS_AS(config.validate(), eggloc::ValidationError);
  config = TrainConfig{};
  config.grad_accum_steps = -1;
  CHECK_THROWS_AS(config.validate(), eggloc::ValidationError);
}

TEST_CASE("config hash is stable and sensitive to every field", "[pipeline]") {
  const TrainConfig a;
  CHECK(eggloc::config_hash(a).size() == 16);
  CHECK(eggloc::config_hash(a) == eggloc::config_hash(TrainConfig{}));
  TrainConfig b;
  b.epochs = 4;
  CHECK(eggloc::config_hash(a) != eggloc::config_hash(b));
}

TEST_CASE("16 samples with accumulation 8 over 3 epochs yield 6 optimizer steps",
          "[pipeline]") {
  const auto ds = synthetic_dataset(16);
  StubBackend backend({}, constant_losses(16 * 3));
  TrainConfig config;  // epochs 3, batch 1, accum 8
  const auto log = eggloc::run_training(config, ids_of(ds), ds, backend);
  CHECK(log.total_optimizer_steps == 6);
  REQUIRE(log.steps.size() == 6);
  CHECK(log.steps.front().epoch == 0);
  CHECK(log.steps.back().epoch == 2);
  CHECK(log.steps.back().step_index == 5);
}

TEST_CASE("optimizer steps equal epochs times ceil(n / accum)",
          "[pipeline][property]") {
  std::mt19937_64 gen(31337);
  std::uniform_int_distribution<int> n_dist(1, 40);
  std::uniform_int_distribution<int> accum_dist(1, 10);
  std::uniform_int_distribution<int> epoch_dist(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = n_dist(gen);
    const int accum = accum_dist(gen);
    const int epochs = epoch_dist(gen);
    const auto ds = synthetic_dataset(n);
    StubBackend backend({}, constant_losses(static_cast<std::size_t>(n) * epochs));
    TrainConfig config;
    config.epochs = epochs;
    config.grad_accum_steps = accum;
    const auto log = eggloc::run_training(config, ids_of(ds), ds, backend);
    const long long expected =
        static_cast<long long>(epochs) * ((n + accum - 1) / accum);
    INFO("n=" << n << " accum=" << accum << " epochs=" << epochs);
    REQUIRE(log.total_optimizer_steps == expected);
  }
}

TEST_CASE("scripted decreasing losses appear decreasing in the log", "[pipeline]") {
  const auto ds = synthetic_dataset(1);
  StubBackend backend({}, {3.0, 2.0, 1.0});
  TrainConfig config;
  config.grad_accum_steps = 1;
  const auto log = eggloc::run_training(config, ids_of(ds), ds, backend);
  REQUIRE(log.steps.size() == 3);
  CHECK(log.steps[0].loss == 3.0);
  CHECK(log.steps[1].loss == 2.0);
  CHECK(log.steps[2].loss == 1.0);
  for (std::size_t i = 1; i < log.steps.size(); ++i) {
    CHECK(log.steps[i].loss < log.steps[i - 1].loss);
  }
}

TEST_CASE("window loss is the mean of its micro-batch losses", "[pipeline]") {
  const auto ds = synthetic_dataset(4);
  StubBackend backend({}, {1.0, 2.0, 3.0, 4.0});
  TrainConfig config;
  config.epochs = 1;
  config.grad_accum_steps = 4;
  const auto log = eggloc::run_training(config, ids_of(ds), ds, backend);
  REQUIRE(log.steps.size() == 1);
  CHECK(log.steps[0].loss == Catch::Approx(2.5));
}

TEST_CASE("run_training validates its inputs", "[pipeline]") {
  const auto ds = synthetic_dataset(4);
  StubBackend backend({}, constant_losses(64));

  SECTION("empty training set") {
    CHECK_THROWS_AS(eggloc::run_training(TrainConfig{}, {}, ds, backend),
                    eggloc::ValidationError);
  }
  SECTION("unknown image id") {
    CHECK_THROWS_AS(eggloc::run_training(TrainConfig{}, {"nope"}, ds, backend),
                    eggloc::ValidationError);
  }
  SECTION("bad config") {
    TrainConfig config;
    config.epochs = 0;
    CHECK_THROWS_AS(eggloc::run_training(config, ids_of(ds), ds, backend),
                    eggloc::ValidationError);
  }
  SECTION("exhausted loss script") {
    StubBackend short_backend({}, {1.0});
    TrainConfig config;
    config.epochs = 2;
    CHECK_THROWS_AS(eggloc::run_training(config, ids_of(ds), ds, short_backend),
                    eggloc::HarnessError);
  }
}

TEST_CASE("training targets encode the projected annotations", "[pipeline]") {
  // One 640x480 image, box (10,10,100,100), target canvas 768:
  // scale = 768/640 = 1.2, pad_top = (768 - 576)/2 = 96.
  const auto ds = synthetic_dataset(1);
  RecordingBackend backend;
  TrainConfig config;
  config.epochs = 1;
  const auto log = eggloc::run_training(config, ids_of(ds), ds, backend);
  CHECK(log.total_optimizer_steps == 1);
  REQUIRE(backend.batches.size() == 1);
  REQUIRE(backend.batches[0].size() == 1);
  const auto& sample = backend.batches[0][0];
  CHECK(sample.image_id == "img_0");
  CHECK(sample.prompt == "<OD>");
  CHECK(sample.image.empty());  // no decoder configured
  // x: 10*1.2 = 12 -> bin floor(12/768*1000) = 15; y: 10*1.2+96 = 108 -> 140
  // x_max: 100*1.2 = 120 -> 156; y_max: 100*1.2+96 = 216 -> 281
  CHECK(sample.target ==
        ds.annotations[0].category.name + "<loc_15><loc_140><loc_156><loc_281>");
}

TEST_CASE("a generic label replaces category names when configured", "[pipeline]") {
  const auto ds = synthetic_dataset(1);
  RecordingBackend backend;
  TrainConfig config;
  config.epochs = 1;
  eggloc::TrainOptions options;
  options.generic_label = "parasitic egg";
  eggloc::run_training(config, ids_of(ds), ds, backend, options);
  REQUIRE(backend.batches.size() == 1);
  CHECK(backend.batches[0][0].target.rfind("parasitic egg<loc_", 0) == 0);
}

TEST_CASE("sample order reshuffles per epoch but is seed-deterministic",
          "[pipeline]") {
  const auto ds = synthetic_dataset(12);
  const auto run = [&](std::uint64_t seed) {
    RecordingBackend backend;
    TrainConfig config;
    config.epochs = 2;
    config.seed = seed;
    eggloc::run_training(config, ids_of(ds), ds, backend);
    std::vector<std::string> order;
    for (const auto& batch : backend.batches) {
      for (const auto& sample : batch) order.push_back(sample.image_id);
    }
    return order;
  };
  const auto a = run(42);
  CHECK(a == run(42));
  CHECK(a != run(43));
  // Epoch halves differ from each other (12 ids, same set, new permutation).
  const std::vector<std::string> first(a.begin(), a.begin() + 12);
  const std::vector<std::string> second(a.begin() + 12, a.end());
  CHECK(first != second);
}

TEST_CASE("non-trainable backends are refused", "[pipeline]") {
  class GenerateOnly : public StubBackend {
   public:
    using StubBackend::StubBackend;
    eggloc::BackendCapabilities capabilities() const override {
      return {.trainable = false, .generative = true, .concurrent_generate = false};
    }
  };
  GenerateOnly backend({}, {});
  const auto ds = synthetic_dataset(1);
  CHECK_THROWS_AS(eggloc::run_training(TrainConfig{}, ids_of(ds), ds, backend),
                  eggloc::CapabilityError);
}

TEST_CASE("stub adapter state round-trips the consumed-loss cursor", "[pipeline]") {
  TempDir tmp("stub_adapter");
  StubBackend backend({}, {1.0, 2.0, 3.0});
  backend.train_step({eggloc::TrainSample{"x", {}, "p", "t"}});
  backend.save_adapter(tmp / "adapter.json");

  StubBackend fresh({}, {1.0, 2.0, 3.0});
  fresh.load_adapter(tmp / "adapter.json");
  CHECK(fresh.train_step({eggloc::TrainSample{"x", {}, "p", "t"}}) == 2.0);

  CHECK_THROWS_AS(fresh.load_adapter(tmp / "absent.json"), eggloc::IoError);
}

TEST_CASE("stub generate replays its script and rejects unknown ids",
          "[pipeline]") {
  StubBackend backend({{"img1", "Hookworm<loc_0><loc_0><loc_999><loc_999>"}}, {});
  CHECK(backend.generate({"img1", {}, "<OD>"}) ==
        "Hookworm<loc_0><loc_0><loc_999><loc_999>");
  CHECK_THROWS_AS(backend.generate({"img2", {}, "<OD>"}), eggloc::HarnessError);
}

TEST_CASE("inference maps detections back to original pixels", "[pipeline]") {
  TempDir tmp("infer_map");
  const auto img = testkit::gradient_image(1280, 720);
  eggloc::save_image(tmp / "wide.ppm", img);

  StubBackend backend({{"wide", "Hookworm<loc_0><loc_0><loc_999><loc_999>"}}, {});
  eggloc::PreprocessConfig preprocess;  // target 768
  const auto results = eggloc::run_inference({{"wide", tmp / "wide.ppm"}}, backend,
                                             preprocess, eggloc::build_prompt());
  REQUIRE(results.size() == 1);
  const auto& res = results[0];
  REQUIRE_FALSE(res.error.has_value());
  REQUIRE(res.boxes_original.size() == 1);
  REQUIRE(res.phrases.size() == 1);
  CHECK(res.boxes_original[0].first == "Hookworm");
  // A full-canvas detection unprojects to (almost) the full original frame.
  const auto& box = res.boxes_original[0].second;
  CHECK(box.x_min == Catch::Approx(0.0).margin(1.0));
  CHECK(box.y_min == Catch::Approx(0.0).margin(1.0));
  CHECK(box.x_max == Catch::Approx(1280.0).margin(1.0));
  CHECK(box.y_max == Catch::Approx(720.0).margin(1.0));
}

TEST_CASE("inference keeps batch order across failures", "[pipeline]") {
  TempDir tmp("infer_partial");
  eggloc::save_image(tmp / "a.ppm", testkit::gradient_image(64, 64));
  testkit::write_text(tmp / "b.ppm", "this is not an image");
  eggloc::save_image(tmp / "c.ppm", testkit::gradient_image(64, 64));

  StubBackend backend({{"a", ""}, {"c", "Hookworm<loc_100><loc_100><loc_400><loc_400>"}},
                      {});
  const auto results = eggloc::run_inference(
      {{"a", tmp / "a.ppm"}, {"b", tmp / "b.ppm"}, {"c", tmp / "c.ppm"}}, backend,
      eggloc::PreprocessConfig{}, eggloc::build_prompt());
  REQUIRE(results.size() == 3);
  CHECK(results[0].image_id == "a");
  CHECK_FALSE(results[0].error.has_value());
  CHECK(results[0].phrases.empty());

  CHECK(results[1].image_id == "b");
  REQUIRE(results[1].error.has_value());
  CHECK(results[1].boxes_original.empty());

  CHECK(results[2].image_id == "c");
  REQUIRE_FALSE(results[2].error.has_value());
  CHECK(results[2].boxes_original.size() == 1);
}

TEST_CASE("parallel inference matches the sequential result", "[pipeline]") {
  TempDir tmp("infer_jobs");
  std::vector<eggloc::ImageRef> refs;
  std::map<std::string, std::string> script;
  for (int i = 0; i < 8; ++i) {
    const std::string id = "img_" + std::to_string(i);
    eggloc::save_image(tmp / (id + ".ppm"), testkit::gradient_image(100 + i, 80));
    script[id] = "Hookworm<loc_" + std::to_string(100 + i * 50) +
                 "><loc_100><loc_800><loc_800>";
    refs.push_back({id, tmp / (id + ".ppm")});
  }
  StubBackend backend(script, {});

  eggloc::InferenceOptions sequential;
  eggloc::InferenceOptions parallel;
  parallel.jobs = 4;
  const auto seq =
      eggloc::run_inference(refs, backend, {}, eggloc::build_prompt(), sequential);
  const auto par =
      eggloc::run_inference(refs, backend, {}, eggloc::build_prompt(), parallel);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CHECK(seq[i].image_id == par[i].image_id);
    CHECK(seq[i].raw_text == par[i].raw_text);
    CHECK(seq[i].boxes_original == par[i].boxes_original);
  }
}

TEST_CASE("non-generative backends are refused for inference", "[pipeline]") {
  RecordingBackend backend;
  CHECK_THROWS_AS(
      eggloc::run_inference({}, backend, {}, eggloc::build_prompt()),
      eggloc::CapabilityError);
}

TEST_CASE("crop_regions cuts integer rectangles", "[pipeline]") {
  const auto img = testkit::gradient_image(64, 48);

  SECTION("full-frame box reproduces the image") {
    const auto result = eggloc::crop_regions(img, {{0, 0, 64, 48}});
    REQUIRE(result.crops.size() == 1);
    CHECK(result.crops[0].image == img);
    CHECK(result.warnings.empty());
  }
  SECTION("fractional box becomes floor/ceil bounds") {
    const auto result = eggloc::crop_regions(img, {{10.2, 10.2, 20.8, 20.8}});
    REQUIRE(result.crops.size() == 1);
    const auto& crop = result.crops[0].image;
    CHECK(crop.width == 11);   // 10..21
    CHECK(crop.height == 11);
    for (int y = 0; y < 11; ++y) {
      for (int x = 0; x < 11; ++x) {
        REQUIRE(crop.at(x, y, 0) == img.at(10 + x, 10 + y, 0));
      }
    }
  }
  SECTION("empty box list") {
    const auto result = eggloc::crop_regions(img, {});
    CHECK(result.crops.empty());
    CHECK(result.warnings.empty());
  }
  SECTION("box outside the frame is skipped with a warning") {
    const auto result =
        eggloc::crop_regions(img, {{100, 100, 200, 200}, {0, 0, 8, 8}});
    REQUIRE(result.crops.size() == 1);
    CHECK(result.crops[0].box_index == 1);
    REQUIRE(result.warnings.size() == 1);
  }
}

TEST_CASE("predictions file round trip", "[pipeline]") {
  TempDir tmp("predictions");
  const std::vector<eggloc::PredictionRecord> records = {
      {"img_a", "Hookworm", {1.5, 2.5, 30, 40}, "Hookworm<loc_1>..."},
      {"img_b", "H. nana", {0, 0, 5, 5}, ""},
  };
  const auto path = tmp / "preds.jsonl";
  eggloc::write_predictions(path, records);
  CHECK(eggloc::read_predictions(path) == records);

  SECTION("invalid boxes are rejected on read") {
    testkit::write_text(path,
                        R"({"image_id":"x","label":"l","x_min":5,"y_min":0,)"
                        R"("x_max":1,"y_max":1,"raw_text":""})"
                        "\n");
    CHECK_THROWS_AS(eggloc::read_predictions(path), eggloc::ValidationError);
  }
  SECTION("missing fields are schema errors") {
    testkit::write_text(path, R"({"image_id":"x"})"
                              "\n");
    CHECK_THROWS_AS(eggloc::read_predictions(path), eggloc::SchemaError);
  }
}

TEST_CASE("process backend drives an external runtime executable", "[pipeline]") {
  TempDir tmp("process_backend");
  const auto runtime = tmp / "fake_runtime.sh";
  testkit::write_text(runtime,
                      "#!/bin/sh\n"
                      "verb=\"$1\"\n"
                      "case \"$verb\" in\n"
                      "  generate) echo 'Hookworm<loc_0><loc_0><loc_999><loc_999>' ;;\n"
                      "  train-step) echo 0.25 ;;\n"
                      "  save-adapter|load-adapter) ;;\n"
                      "  *) exit 9 ;;\n"
                      "esac\n");
  std::filesystem::permissions(runtime, std::filesystem::perms::owner_all);

  eggloc::ProcessBackend backend(runtime, tmp / "state");
  CHECK(backend.capabilities().trainable);
  CHECK(backend.capabilities().generative);
  CHECK(backend.generate({"img", {}, "<OD>"}) ==
        "Hookworm<loc_0><loc_0><loc_999><loc_999>");
  CHECK(backend.train_step({eggloc::TrainSample{"img", {}, "<OD>", "t"}}) == 0.25);
  backend.save_adapter(tmp / "adapter.bin");

  SECTION("missing runtime is a capability error") {
    CHECK_THROWS_AS(eggloc::ProcessBackend(tmp / "absent.sh", tmp / "state2"),
                    eggloc::CapabilityError);
  }
  SECTION("nonzero runtime exit becomes an error") {
    const auto broken = tmp / "broken.sh";
    testkit::write_text(broken, "#!/bin/sh\nexit 3\n");
    std::filesystem::permissions(broken, std::filesystem::perms::owner_all);
    eggloc::ProcessBackend bad(broken, tmp / "state3");
    CHECK_THROWS_AS(bad.generate({"img", {}, "<OD>"}), eggloc::Error);
  }
  SECTION("non-numeric loss reply is an error") {
    const auto chatty = tmp / "chatty.sh";
    testkit::write_text(chatty, "#!/bin/sh\necho not-a-number\n");
    std::filesystem::permissions(chatty, std::filesystem::perms::owner_all);
    eggloc::ProcessBackend bad(chatty, tmp / "state4");
    CHECK_THROWS_AS(bad.train_step({eggloc::TrainSample{"img", {}, "p", "t"}}),
                    eggloc::Error);
  }
}

TEST_CASE("train log serializes its steps", "[pipeline]") {
  eggloc::TrainLog log;
  log.steps.push_back({0, 0, 1.5});
  log.steps.push_back({1, 1, 0.5});
  log.total_optimizer_steps = 2;
  const nlohmann::json j = log;
  CHECK(j["total_optimizer_steps"] == 2);
  REQUIRE(j["steps"].size() == 2);
  CHECK(j["steps"][1]["loss"] == 0.5);
}
