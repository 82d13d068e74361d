#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "eggloc/dataset.hpp"
#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"
#include "eggloc/image.hpp"
#include "eggloc/letterbox.hpp"
#include "eggloc/loc_codec.hpp"
#include "eggloc/rng.hpp"

namespace eggloc {

// The stated fine-tuning hyperparameters plus the run seed. Optimizer choice,
// warmup and loss live inside the backend adapter.
struct TrainConfig {
  int epochs = 3;
  double learning_rate = 5e-5;
  int per_device_batch = 1;
  int grad_accum_steps = 8;
  int adapter_rank = 8;
  int image_size = 768;
  std::uint64_t seed = 42;

  int effective_batch() const { return per_device_batch * grad_accum_steps; }

  void validate() const {
    if (epochs < 1 || per_device_batch < 1 || grad_accum_steps < 1 ||
        adapter_rank < 1 || image_size < 1) {
      throw ValidationError("TrainConfig: integer fields must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
      throw ValidationError("TrainConfig: learning_rate must be positive");
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"per_device_batch", c.per_device_batch},
       {"grad_accum_steps", c.grad_accum_steps},
       {"adapter_rank", c.adapter_rank},
       {"image_size", c.image_size},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig defaults;
  c.epochs = j.value("epochs", defaults.epochs);
  c.learning_rate = j.value("learning_rate", defaults.learning_rate);
  c.per_device_batch = j.value("per_device_batch", defaults.per_device_batch);
  c.grad_accum_steps = j.value("grad_accum_steps", defaults.grad_accum_steps);
  c.adapter_rank = j.value("adapter_rank", defaults.adapter_rank);
  c.image_size = j.value("image_size", defaults.image_size);
  c.seed = j.value("seed", defaults.seed);
}

struct BackendCapabilities {
  bool trainable = false;
  bool generative = false;
  // Whether generate() may be invoked from several threads at once; the
  // orchestrator serializes calls when false.
  bool concurrent_generate = false;
};

struct TrainSample {
  std::string image_id;
  Image image;  // letterboxed pixels; may be empty for desk-scale runs
  std::string prompt;
  std::string target;
};

struct GenerateRequest {
  std::string image_id;
  Image image;
  std::string prompt;
};

// Seam between the orchestration and the actual model. Implementations own
// every modelling concern: weights, optimizer, decoding parameters.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  virtual double train_step(const std::vector<TrainSample>& batch) = 0;
  virtual std::string generate(const GenerateRequest& request) = 0;
  virtual void save_adapter(const std::filesystem::path& path) = 0;
  virtual void load_adapter(const std::filesystem::path& path) = 0;
};

// Fully scripted offline test double: generate() replays a per-image script,
// train_step() replays a loss list.
class StubBackend : public Backend {
 public:
  StubBackend() = default;
  StubBackend(std::map<std::string, std::string> script, std::vector<double> losses)
      : script_(std::move(script)), losses_(std::move(losses)) {}

  std::string name() const override { return "stub"; }

  BackendCapabilities capabilities() const override {
    return {.trainable = true, .generative = true, .concurrent_generate = true};
  }

  double train_step(const std::vector<TrainSample>& batch) override {
    if (batch.empty()) throw ValidationError("train_step: empty batch");
    std::lock_guard lock(mutex_);
    if (next_loss_ >= losses_.size()) {
      throw HarnessError("StubBackend: loss script exhausted after " +
                         std::to_string(next_loss_) + " steps");
    }
    return losses_[next_loss_++];
  }

  std::string generate(const GenerateRequest& request) override {
    const auto it = script_.find(request.image_id);
    if (it == script_.end()) {
      throw HarnessError("StubBackend: no scripted output for image id \"" +
                         request.image_id + "\"");
    }
    return it->second;
  }

  void save_adapter(const std::filesystem::path& path) override {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    nlohmann::json j = {{"backend", "stub"}, {"losses_consumed", next_loss_}};
    out << j.dump(2) << "\n";
  }

  void load_adapter(const std::filesystem::path& path) override {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open adapter state: " + path.string());
    nlohmann::json j;
    in >> j;
    if (j.value("backend", "") != "stub") {
      throw SchemaError("not a stub adapter blob: " + path.string());
    }
    next_loss_ = j.value("losses_consumed", std::size_t{0});
  }

 private:
  std::map<std::string, std::string> script_;
  std::vector<double> losses_;
  std::size_t next_loss_ = 0;
  std::mutex mutex_;
};

struct TrainStepRecord {
  int epoch = 0;       // 0-based
  int step_index = 0;  // global optimizer step, 0-based
  double loss = 0.0;   // mean micro-batch loss in the accumulation window
};

struct TrainLog {
  std::vector<TrainStepRecord> steps;
  long long total_optimizer_steps = 0;
};

inline void to_json(nlohmann::json& j, const TrainLog& log) {
  j = nlohmann::json::object();
  j["total_optimizer_steps"] = log.total_optimizer_steps;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : log.steps) {
    j["steps"].push_back(
        {{"epoch", s.epoch}, {"step_index", s.step_index}, {"loss", s.loss}});
  }
}

struct TrainOptions {
  PromptConfig prompt;
  // When set, every training target uses this label instead of the category
  // name (e.g. a generic "parasitic egg").
  std::optional<std::string> generic_label;
  // When set, sample images are decoded and letterboxed; otherwise samples
  // carry empty pixel buffers, which scripted backends ignore.
  ImageDecoder decoder;
};

namespace detail {

inline std::vector<GroundedPhrase> training_phrases(
    const std::vector<const GroundTruthAnnotation*>& anns, const LetterboxTransform& t,
    const std::optional<std::string>& generic_label) {
  std::vector<GroundedPhrase> phrases;
  phrases.reserve(anns.size());
  for (const auto* ann : anns) {
    phrases.push_back(GroundedPhrase{
        generic_label ? *generic_label : ann->category.name, project_box(ann->box, t)});
  }
  return phrases;
}

}  // namespace detail

// Epoch x micro-batch loop with gradient-accumulation bookkeeping. An
// optimizer step fires every grad_accum_steps micro-batches and at epoch end
// for the remainder; accumulation never crosses an epoch boundary. Data order
// is reshuffled per epoch, deterministically from config.seed.
inline TrainLog run_training(const TrainConfig& config,
                             const std::vector<std::string>& train_ids,
                             const Dataset& dataset, Backend& backend,
                             const TrainOptions& options = {}) {
  config.validate();
  if (!backend.capabilities().trainable) {
    throw CapabilityError("backend \"" + backend.name() + "\" is not trainable");
  }
  if (train_ids.empty()) throw ValidationError("run_training: empty training set");

  std::map<std::string, const ImageRecord*> images;
  for (const auto& img : dataset.images) images[img.image_id] = &img;
  std::map<std::string, std::vector<const GroundTruthAnnotation*>> by_image;
  for (const auto& ann : dataset.annotations) {
    by_image[ann.image_id].push_back(&ann);
  }
  for (const auto& id : train_ids) {
    if (!images.count(id)) {
      throw ValidationError("run_training: unknown image id \"" + id + "\"");
    }
  }

  const std::string prompt_text = build_prompt(options.prompt).task_text;
  PreprocessConfig pixel_config;
  pixel_config.target_size = config.image_size;

  const auto build_sample = [&](const std::string& id) {
    const ImageRecord* rec = images.at(id);
    const auto t = compute_letterbox(rec->width, rec->height, config.image_size);
    TrainSample sample;
    sample.image_id = id;
    sample.prompt = prompt_text;
    static const std::vector<const GroundTruthAnnotation*> kNone;
    const auto it = by_image.find(id);
    sample.target = encode_training_target(
        detail::training_phrases(it == by_image.end() ? kNone : it->second, t,
                                 options.generic_label),
        config.image_size, config.image_size);
    if (options.decoder) {
      sample.image = letterbox_image(options.decoder(rec->file_path), pixel_config);
    }
    return sample;
  };

  TrainLog log;
  int global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::string> order = train_ids;
    deterministic_shuffle(order, mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));

    std::vector<double> window;
    const auto fire_step = [&]() {
      double sum = 0.0;
      for (double l : window) sum += l;
      log.steps.push_back(TrainStepRecord{
          epoch, global_step++, sum / static_cast<double>(window.size())});
      window.clear();
    };

    std::size_t cursor = 0;
    int micro_in_window = 0;
    while (cursor < order.size()) {
      std::vector<TrainSample> batch;
      for (int b = 0; b < config.per_device_batch && cursor < order.size(); ++b) {
        batch.push_back(build_sample(order[cursor++]));
      }
      window.push_back(backend.train_step(batch));
      if (++micro_in_window == config.grad_accum_steps) {
        fire_step();
        micro_in_window = 0;
      }
    }
    if (!window.empty()) fire_step();
  }
  log.total_optimizer_steps = static_cast<long long>(log.steps.size());
  return log;
}

struct ImageRef {
  std::string image_id;
  std::filesystem::path path;
};

struct InferenceResult {
  std::string image_id;
  std::string raw_text;
  std::vector<GroundedPhrase> phrases;  // model space
  std::vector<std::pair<std::string, BoundingBox>> boxes_original;
  std::vector<std::string> warnings;
  // Set when this image failed (unreadable file, backend failure); the rest
  // of the batch still completes.
  std::optional<std::string> error;
};

struct InferenceOptions {
  int jobs = 1;
  ImageDecoder decoder = default_image_decoder();
};

// Per image: letterbox -> generate -> decode -> unproject. Results come back
// in input order regardless of the worker count. Phrases whose boxes cannot
// be mapped back into the original frame (entirely in the padding) are
// dropped with a warning so phrases and boxes_original stay parallel.
inline std::vector<InferenceResult> run_inference(const std::vector<ImageRef>& images,
                                                  Backend& backend,
                                                  const PreprocessConfig& preprocess,
                                                  const DetectionPrompt& prompt,
                                                  const InferenceOptions& options = {}) {
  preprocess.validate();
  if (!backend.capabilities().generative) {
    throw CapabilityError("backend \"" + backend.name() + "\" is not generative");
  }
  if (prompt.task_text.empty()) throw ValidationError("empty detection prompt");

  std::vector<InferenceResult> results(images.size());
  const int target = preprocess.target_size;

  const auto process_one = [&](std::size_t index) {
    const auto& ref = images[index];
    InferenceResult& res = results[index];
    res.image_id = ref.image_id;
    try {
      const Image img = options.decoder(ref.path);
      const auto t = compute_letterbox(img.width, img.height, target);
      const Image canvas = letterbox_image(img, preprocess);
      res.raw_text = backend.generate({ref.image_id, canvas, prompt.task_text});
      auto decoded = decode_output(res.raw_text, target, target);
      res.warnings = std::move(decoded.warnings);
      for (auto& phrase : decoded.phrases) {
        try {
          BoundingBox original = unproject_box(phrase.box, t);
          res.boxes_original.emplace_back(phrase.label, original);
          res.phrases.push_back(std::move(phrase));
        } catch (const DegenerateBoxError&) {
          res.warnings.push_back("dropped box for \"" + phrase.label +
                                 "\": lies outside the original frame");
        }
      }
    } catch (const Error& e) {
      res.error = e.what();
      res.raw_text.clear();
      res.phrases.clear();
      res.boxes_original.clear();
    }
  };

  const bool parallel =
      options.jobs > 1 && backend.capabilities().concurrent_generate && images.size() > 1;
  if (!parallel) {
    for (std::size_t i = 0; i < images.size(); ++i) process_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= images.size()) break;
        process_one(i);
      }
    };
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(options.jobs), images.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

struct Crop {
  std::size_t box_index = 0;
  Image image;
};

struct CropResult {
  std::vector<Crop> crops;
  std::vector<std::string> warnings;
};

// Integer pixel rectangles via floor(min)/ceil(max), clamped to the image.
// Boxes that clamp to nothing are skipped with a warning, keeping the
// surviving crops in box order.
inline CropResult crop_regions(const Image& image, const std::vector<BoundingBox>& boxes) {
  if (image.empty()) throw ValidationError("crop_regions: empty image");
  for (const auto& box : boxes) validate_box(box);

  CropResult result;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& box = boxes[i];
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
    const int x1 = std::min(image.width, static_cast<int>(std::ceil(box.x_max)));
    const int y1 = std::min(image.height, static_cast<int>(std::ceil(box.y_max)));
    if (x0 >= x1 || y0 >= y1) {
      result.warnings.push_back("box " + std::to_string(i) +
                                " clamps to zero area; skipped");
      continue;
    }
    Image crop = make_image(x1 - x0, y1 - y0, image.channels);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        for (int c = 0; c < image.channels; ++c) {
          crop.at(x - x0, y - y0, c) = image.at(x, y, c);
        }
      }
    }
    result.crops.push_back(Crop{i, std::move(crop)});
  }
  return result;
}

// FNV-1a over the serialized config; stable across platforms, used to tag
// checkpoints with the configuration that produced them.
inline std::string config_hash(const TrainConfig& config) {
  const std::string text = nlohmann::json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

struct CheckpointMeta {
  std::string backend;
  std::string config_hash;
  long long optimizer_steps = 0;
  std::string adapter_path;
};

inline void write_checkpoint_meta(const std::filesystem::path& path,
                                  const CheckpointMeta& meta) {
  nlohmann::json j = {{"backend", meta.backend},
                      {"config_hash", meta.config_hash},
                      {"optimizer_steps", meta.optimizer_steps},
                      {"adapter_path", meta.adapter_path}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace eggloc
