// eggloc: command-line pipeline for localizing parasitic eggs in microscopic
// images with a prompt-driven localization model. Subcommands: split, train,
// infer, eval, compare, crop. Results go to files/stdout, diagnostics to
// stderr; exit code 0 iff no fatal error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eggloc/dataset.hpp"
#include "eggloc/errors.hpp"
#include "eggloc/evaluation.hpp"
#include "eggloc/image.hpp"
#include "eggloc/letterbox.hpp"
#include "eggloc/loc_codec.hpp"
#include "eggloc/manifest.hpp"
#include "eggloc/pipeline.hpp"
#include "eggloc/predictions.hpp"
#include "eggloc/process_backend.hpp"
#include "eggloc/reporting.hpp"
#include "eggloc/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFlorence2RuntimeEnv = "EGGLOC_FLORENCE2_RUNTIME";

struct BackendArgs {
  std::string selector = "stub";
  std::string stub_script_path;
  std::string stub_losses_path;
  std::string state_dir;
  // Synthesized stub losses when training without an explicit loss script.
  std::size_t synth_losses = 0;
};

std::map<std::string, std::string> load_stub_script(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw eggloc::IoError("cannot open stub script: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw eggloc::SchemaError("stub script is not valid JSON: " + path + " (" +
                              e.what() + ")");
  }
  std::map<std::string, std::string> script;
  for (const auto& [key, value] : j.items()) {
    script[key] = value.get<std::string>();
  }
  return script;
}

std::vector<double> load_stub_losses(const BackendArgs& args) {
  if (!args.stub_losses_path.empty()) {
    std::ifstream in(args.stub_losses_path);
    if (!in) throw eggloc::IoError("cannot open stub losses: " + args.stub_losses_path);
    json j;
    in >> j;
    return j.get<std::vector<double>>();
  }
  std::vector<double> losses(args.synth_losses);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    losses[i] = 1.0 / static_cast<double>(i + 1);
  }
  return losses;
}

std::unique_ptr<eggloc::Backend> make_backend(const BackendArgs& args) {
  if (args.selector == "stub") {
    return std::make_unique<eggloc::StubBackend>(load_stub_script(args.stub_script_path),
                                                 load_stub_losses(args));
  }
  if (args.selector == "florence2") {
    const char* runtime = std::getenv(kFlorence2RuntimeEnv);
    if (!runtime || !*runtime) {
      throw eggloc::CapabilityError(
          "backend \"florence2\" requires an external runtime: set " +
          std::string(kFlorence2RuntimeEnv) +
          " to the runtime executable (see README, \"Plugging in the real "
          "model\")");
    }
    const fs::path state =
        args.state_dir.empty() ? fs::path("florence2_state") : fs::path(args.state_dir);
    return std::make_unique<eggloc::ProcessBackend>(fs::path(runtime), state);
  }
  throw eggloc::ValidationError("unknown backend \"" + args.selector +
                                "\"; available backends: stub, florence2");
}

void add_backend_options(CLI::App* cmd, BackendArgs& args) {
  cmd->add_option("--backend", args.selector,
                  "Backend selector (stub, florence2). florence2 resolves its "
                  "runtime from $" + std::string(kFlorence2RuntimeEnv))
      ->capture_default_str();
  cmd->add_option("--stub-script", args.stub_script_path,
                  "JSON object mapping image_id to scripted stub output text");
  cmd->add_option("--stub-losses", args.stub_losses_path,
                  "JSON array of scripted stub training losses");
  cmd->add_option("--state-dir", args.state_dir,
                  "State directory for external backend runtimes");
}

std::vector<eggloc::ImageRef> discover_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw eggloc::IoError("not a directory: " + dir.string());
  }
  std::vector<eggloc::ImageRef> refs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
      refs.push_back({entry.path().stem().string(), entry.path()});
    }
  }
  std::sort(refs.begin(), refs.end(),
            [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  return refs;
}

// flags > config file > built-in defaults.
eggloc::TrainConfig resolve_train_config(const std::string& config_path,
                                         const CLI::App* cmd,
                                         const eggloc::TrainConfig& flag_values) {
  eggloc::TrainConfig config;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw eggloc::IoError("cannot open config file: " + config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw eggloc::SchemaError("config file is not valid JSON: " + config_path +
                                " (" + e.what() + ")");
    }
    config = j.get<eggloc::TrainConfig>();
  }
  if (cmd->count("--epochs")) config.epochs = flag_values.epochs;
  if (cmd->count("--learning-rate")) config.learning_rate = flag_values.learning_rate;
  if (cmd->count("--batch")) config.per_device_batch = flag_values.per_device_batch;
  if (cmd->count("--grad-accum")) config.grad_accum_steps = flag_values.grad_accum_steps;
  if (cmd->count("--adapter-rank")) config.adapter_rank = flag_values.adapter_rank;
  if (cmd->count("--image-size")) config.image_size = flag_values.image_size;
  return config;
}

int cmd_split(const std::string& annotations_path, std::uint64_t seed,
              std::vector<double> ratios, const std::string& out_path) {
  if (ratios.size() != 3) {
    throw eggloc::ValidationError("--ratios needs exactly three values");
  }
  const auto dataset = eggloc::load_annotations(annotations_path);
  std::vector<std::string> ids;
  ids.reserve(dataset.images.size());
  for (const auto& img : dataset.images) ids.push_back(img.image_id);
  const auto split =
      eggloc::split_dataset(ids, seed, {ratios[0], ratios[1], ratios[2]});
  eggloc::write_split_manifest(out_path, split);

  eggloc::RunManifest manifest;
  manifest.command = "split";
  manifest.config = {{"ratios", ratios}};
  manifest.inputs = {{"annotations", annotations_path}};
  manifest.outputs = {{"split", out_path}};
  manifest.seed = seed;
  eggloc::write_manifest(out_path + ".manifest.json", manifest);

  std::cout << "train=" << split.train.size() << " validation=" << split.validation.size()
            << " test=" << split.test.size() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& split_path,
              const std::string& annotations_path, const std::string& part_name,
              BackendArgs backend_args, const eggloc::TrainConfig& config,
              const std::string& out_dir) {
  config.validate();
  const auto split = eggloc::read_split_manifest(split_path);
  eggloc::SplitPart part = eggloc::SplitPart::train;
  if (part_name == "validation") part = eggloc::SplitPart::validation;
  else if (part_name == "test") part = eggloc::SplitPart::test;
  else if (part_name != "train") {
    throw eggloc::ValidationError("--part must be train, validation or test");
  }
  const auto& ids = split.part(part);
  const auto dataset = eggloc::load_annotations(annotations_path);

  // Micro-batch count drives how many scripted losses the stub must serve.
  const std::size_t micro_per_epoch =
      (ids.size() + config.per_device_batch - 1) / config.per_device_batch;
  backend_args.synth_losses = micro_per_epoch * static_cast<std::size_t>(config.epochs);
  if (backend_args.state_dir.empty()) {
    backend_args.state_dir = (fs::path(out_dir) / "backend_state").string();
  }
  const auto backend = make_backend(backend_args);

  const auto log = eggloc::run_training(config, ids, dataset, *backend);

  fs::create_directories(out_dir);
  const fs::path log_path = fs::path(out_dir) / "train_log.json";
  {
    std::ofstream out(log_path);
    if (!out) throw eggloc::IoError("cannot open for writing: " + log_path.string());
    out << json(log).dump(2) << "\n";
  }
  const fs::path adapter_path = fs::path(out_dir) / "adapter_state.json";
  backend->save_adapter(adapter_path);
  eggloc::write_checkpoint_meta(fs::path(out_dir) / "checkpoint.json",
                                {backend->name(), eggloc::config_hash(config),
                                 log.total_optimizer_steps, adapter_path.string()});

  eggloc::RunManifest manifest;
  manifest.command = "train";
  manifest.config = json(config);
  manifest.config["backend"] = backend_args.selector;
  manifest.config["part"] = part_name;
  manifest.inputs = {{"split", split_path}, {"annotations", annotations_path}};
  if (!config_path.empty()) manifest.inputs["config"] = config_path;
  manifest.outputs = {{"train_log", log_path.string()},
                      {"checkpoint", (fs::path(out_dir) / "checkpoint.json").string()},
                      {"adapter", adapter_path.string()}};
  manifest.seed = config.seed;
  eggloc::write_manifest(fs::path(out_dir) / "run_manifest.json", manifest);

  std::cout << "total_optimizer_steps=" << log.total_optimizer_steps << "\n";
  return 0;
}

int cmd_infer(const std::string& images_dir, BackendArgs backend_args,
              const std::string& out_path, const std::string& prompt_text,
              int target_size, int jobs, std::uint64_t seed) {
  const auto refs = discover_images(images_dir);
  if (refs.empty()) {
    throw eggloc::IoError("no images found in " + images_dir +
                          " (supported: .ppm/.pgm/.pnm)");
  }
  if (backend_args.state_dir.empty()) {
    backend_args.state_dir = (fs::path(out_path).parent_path() / "backend_state").string();
  }
  const auto backend = make_backend(backend_args);

  eggloc::PreprocessConfig preprocess;
  preprocess.target_size = target_size;
  eggloc::PromptConfig prompt_config;
  if (!prompt_text.empty()) prompt_config.custom_text = prompt_text;
  const auto prompt = eggloc::build_prompt(prompt_config);

  eggloc::InferenceOptions options;
  options.jobs = jobs;
  const auto results = eggloc::run_inference(refs, *backend, preprocess, prompt, options);

  std::vector<eggloc::PredictionRecord> records;
  std::size_t failures = 0;
  for (const auto& res : results) {
    if (res.error) {
      ++failures;
      std::cerr << "warning: image " << res.image_id << ": " << *res.error << "\n";
      continue;
    }
    for (const auto& warning : res.warnings) {
      std::cerr << "warning: image " << res.image_id << ": " << warning << "\n";
    }
    for (const auto& [label, box] : res.boxes_original) {
      records.push_back({res.image_id, label, box, res.raw_text});
    }
  }
  if (failures == results.size()) {
    throw eggloc::Error("all " + std::to_string(failures) + " images failed");
  }
  eggloc::write_predictions(out_path, records);

  eggloc::RunManifest manifest;
  manifest.command = "infer";
  manifest.config = {{"backend", backend_args.selector},
                     {"prompt", prompt.task_text},
                     {"target_size", target_size},
                     {"jobs", jobs}};
  if (!backend_args.stub_script_path.empty()) {
    manifest.config["stub_script"] = backend_args.stub_script_path;
  }
  manifest.inputs = {{"images", images_dir}};
  manifest.outputs = {{"predictions", out_path}};
  manifest.seed = seed;
  eggloc::write_manifest(out_path + ".manifest.json", manifest);

  std::cout << "images=" << results.size() << " predictions=" << records.size()
            << " failures=" << failures << "\n";
  return 0;
}

int cmd_eval(const std::string& predictions_path, const std::string& annotations_path,
             const std::string& out_dir, const std::string& detector_name,
             bool category_aware, int bins, std::uint64_t seed) {
  const auto predictions = eggloc::read_predictions(predictions_path);
  const auto dataset = eggloc::load_annotations(annotations_path);
  eggloc::EvalOptions options;
  options.detector_name = detector_name;
  options.category_aware = category_aware;
  options.histogram_bins = bins;
  const auto report = eggloc::evaluate(predictions, dataset, options);
  eggloc::render_report(report, out_dir);

  eggloc::RunManifest manifest;
  manifest.command = "eval";
  manifest.config = {{"detector_name", detector_name},
                     {"category_aware", category_aware},
                     {"bins", bins}};
  manifest.inputs = {{"predictions", predictions_path},
                     {"annotations", annotations_path}};
  manifest.outputs = {{"report", (fs::path(out_dir) / "report.json").string()},
                      {"histogram", (fs::path(out_dir) / "histogram.svg").string()}};
  manifest.seed = seed;
  eggloc::write_manifest(fs::path(out_dir) / "run_manifest.json", manifest);

  std::printf("mean_iou=%.6f\n", report.mean_iou);
  return 0;
}

int cmd_compare(const std::string& pred_a_path, const std::string& pred_b_path,
                const std::string& annotations_path, const std::string& out_dir,
                const std::string& name_a, const std::string& name_b,
                bool category_aware, int bins, std::uint64_t seed) {
  const auto dataset = eggloc::load_annotations(annotations_path);
  eggloc::EvalOptions options;
  options.category_aware = category_aware;
  options.histogram_bins = bins;
  options.detector_name = name_a;
  const auto report_a = eggloc::evaluate(eggloc::read_predictions(pred_a_path), dataset, options);
  options.detector_name = name_b;
  const auto report_b = eggloc::evaluate(eggloc::read_predictions(pred_b_path), dataset, options);
  const auto cmp = eggloc::compare(report_a, report_b);
  eggloc::render_report(cmp, out_dir);

  eggloc::RunManifest manifest;
  manifest.command = "compare";
  manifest.config = {{"name_a", name_a},
                     {"name_b", name_b},
                     {"category_aware", category_aware},
                     {"bins", bins}};
  manifest.inputs = {{"predictions_a", pred_a_path},
                     {"predictions_b", pred_b_path},
                     {"annotations", annotations_path}};
  manifest.outputs = {
      {"comparison", (fs::path(out_dir) / "comparison.json").string()},
      {"histogram", (fs::path(out_dir) / "comparison_histogram.svg").string()}};
  manifest.seed = seed;
  eggloc::write_manifest(fs::path(out_dir) / "run_manifest.json", manifest);

  std::printf("mean_iou_a=%.6f\nmean_iou_b=%.6f\ndelta_mean=%.6f\n", report_a.mean_iou,
              report_b.mean_iou, cmp.delta_mean);
  return 0;
}

int cmd_crop(const std::string& predictions_path, const std::string& images_dir,
             const std::string& out_dir, std::uint64_t seed) {
  const auto predictions = eggloc::read_predictions(predictions_path);
  fs::create_directories(out_dir);

  // Group boxes per image, preserving record order.
  std::vector<std::string> image_order;
  std::map<std::string, std::vector<eggloc::BoundingBox>> boxes_by_image;
  for (const auto& rec : predictions) {
    if (!boxes_by_image.count(rec.image_id)) image_order.push_back(rec.image_id);
    boxes_by_image[rec.image_id].push_back(rec.box);
  }

  const auto find_image = [&](const std::string& image_id) -> std::optional<fs::path> {
    for (const char* ext : {".ppm", ".pgm", ".pnm"}) {
      const fs::path candidate = fs::path(images_dir) / (image_id + ext);
      if (fs::exists(candidate)) return candidate;
    }
    return std::nullopt;
  };

  std::size_t written = 0;
  for (const auto& image_id : image_order) {
    const auto path = find_image(image_id);
    if (!path) {
      std::cerr << "warning: no image file for id " << image_id << " in " << images_dir
                << "\n";
      continue;
    }
    const auto image = eggloc::load_image(*path);
    const auto result = eggloc::crop_regions(image, boxes_by_image[image_id]);
    for (const auto& warning : result.warnings) {
      std::cerr << "warning: image " << image_id << ": " << warning << "\n";
    }
    for (const auto& crop : result.crops) {
      const fs::path out_path =
          fs::path(out_dir) / (image_id + "_" + std::to_string(crop.box_index) +
                               eggloc::image_extension(crop.image));
      eggloc::save_image(out_path, crop.image);
      ++written;
    }
  }

  eggloc::RunManifest manifest;
  manifest.command = "crop";
  manifest.inputs = {{"predictions", predictions_path}, {"images", images_dir}};
  manifest.outputs = {{"crops_dir", out_dir}};
  manifest.seed = seed;
  eggloc::write_manifest(fs::path(out_dir) / "run_manifest.json", manifest);

  std::cout << "crops=" << written << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eggloc: parasitic egg localization pipeline (split / train / "
               "infer / eval / compare / crop)"};
  app.set_version_flag("--version", eggloc::kVersion);
  app.require_subcommand(1);
  app.footer("Backend runtimes: the florence2 selector reads the runtime "
             "executable location from $" + std::string(kFlorence2RuntimeEnv) +
             ". The stub backend is built in and fully scripted.");

  std::uint64_t seed = 42;
  app.add_option("--seed", seed, "Root seed for every random choice")
      ->capture_default_str();

  // split
  auto* split = app.add_subcommand("split", "Deterministic train/validation/test split");
  std::string split_annotations, split_out;
  std::vector<double> ratios = {0.6, 0.2, 0.2};
  split->add_option("--annotations", split_annotations, "COCO-style annotation JSON")
      ->required();
  split->add_option("--ratios", ratios, "Train/validation/test ratios")
      ->expected(3)
      ->capture_default_str();
  split->add_option("--out", split_out, "Split manifest output path")->required();

  // train
  auto* train = app.add_subcommand("train", "Fine-tuning orchestration");
  std::string train_config_path, train_split, train_annotations, train_part = "train";
  std::string train_out = "train_out";
  BackendArgs train_backend;
  eggloc::TrainConfig train_flags;
  train->add_option("--config", train_config_path,
                    "JSON config file (keys mirror the training config fields)");
  train->add_option("--split", train_split, "Split manifest from the split command")
      ->required();
  train->add_option("--annotations", train_annotations, "COCO-style annotation JSON")
      ->required();
  train->add_option("--part", train_part, "Split part to train on")
      ->capture_default_str();
  train->add_option("--out-dir", train_out, "Output directory")->capture_default_str();
  train->add_option("--epochs", train_flags.epochs, "Training epochs");
  train->add_option("--learning-rate", train_flags.learning_rate, "Learning rate");
  train->add_option("--batch", train_flags.per_device_batch, "Per-device batch size");
  train->add_option("--grad-accum", train_flags.grad_accum_steps,
                    "Gradient accumulation steps");
  train->add_option("--adapter-rank", train_flags.adapter_rank, "Low-rank adapter rank");
  train->add_option("--image-size", train_flags.image_size, "Square model input size");
  add_backend_options(train, train_backend);

  // infer
  auto* infer = app.add_subcommand("infer", "Run localization over an image directory");
  std::string infer_images, infer_out, infer_prompt;
  int infer_target = 768;
  int infer_jobs = 1;
  BackendArgs infer_backend;
  infer->add_option("--images", infer_images, "Directory of input images")->required();
  infer->add_option("--out", infer_out, "Predictions output path")->required();
  infer->add_option("--prompt", infer_prompt, "Custom detection instruction");
  infer->add_option("--target-size", infer_target, "Square model input size")
      ->capture_default_str();
  infer->add_option("--jobs", infer_jobs, "Parallel image workers")
      ->capture_default_str();
  add_backend_options(infer, infer_backend);

  // eval
  auto* eval = app.add_subcommand("eval", "IoU-distribution evaluation");
  std::string eval_predictions, eval_annotations, eval_out = "eval_out";
  std::string eval_name = "detector";
  bool eval_category_aware = false;
  int eval_bins = 20;
  eval->add_option("--predictions", eval_predictions, "Predictions file")->required();
  eval->add_option("--annotations", eval_annotations, "COCO-style annotation JSON")
      ->required();
  eval->add_option("--out-dir", eval_out, "Report output directory")
      ->capture_default_str();
  eval->add_option("--detector-name", eval_name, "Name recorded in the report")
      ->capture_default_str();
  eval->add_flag("--category-aware", eval_category_aware,
                 "Match only within the same category");
  eval->add_option("--bins", eval_bins, "Histogram bin count")->capture_default_str();

  // compare
  auto* comp = app.add_subcommand("compare", "Compare two detectors on one ground truth");
  std::string cmp_a, cmp_b, cmp_annotations, cmp_out = "compare_out";
  std::string cmp_name_a = "detector_a", cmp_name_b = "detector_b";
  bool cmp_category_aware = false;
  int cmp_bins = 20;
  comp->add_option("--pred-a", cmp_a, "First predictions file")->required();
  comp->add_option("--pred-b", cmp_b, "Second predictions file")->required();
  comp->add_option("--annotations", cmp_annotations, "COCO-style annotation JSON")
      ->required();
  comp->add_option("--out-dir", cmp_out, "Report output directory")
      ->capture_default_str();
  comp->add_option("--name-a", cmp_name_a, "Name for the first detector")
      ->capture_default_str();
  comp->add_option("--name-b", cmp_name_b, "Name for the second detector")
      ->capture_default_str();
  comp->add_flag("--category-aware", cmp_category_aware,
                 "Match only within the same category");
  comp->add_option("--bins", cmp_bins, "Histogram bin count")->capture_default_str();

  // crop
  auto* crop = app.add_subcommand("crop", "Crop predicted egg regions to image files");
  std::string crop_predictions, crop_images, crop_out = "crops";
  crop->add_option("--predictions", crop_predictions, "Predictions file")->required();
  crop->add_option("--images", crop_images, "Directory of source images")->required();
  crop->add_option("--out-dir", crop_out, "Crop output directory")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (split->parsed()) return cmd_split(split_annotations, seed, ratios, split_out);
    if (train->parsed()) {
      auto config = resolve_train_config(train_config_path, train, train_flags);
      if (app.count("--seed") || train_config_path.empty()) config.seed = seed;
      return cmd_train(train_config_path, train_split, train_annotations, train_part,
                       train_backend, config, train_out);
    }
    if (infer->parsed()) {
      return cmd_infer(infer_images, infer_backend, infer_out, infer_prompt,
                       infer_target, infer_jobs, seed);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_predictions, eval_annotations, eval_out, eval_name,
                      eval_category_aware, eval_bins, seed);
    }
    if (comp->parsed()) {
      return cmd_compare(cmp_a, cmp_b, cmp_annotations, cmp_out, cmp_name_a, cmp_name_b,
                         cmp_category_aware, cmp_bins, seed);
    }
    if (crop->parsed()) return cmd_crop(crop_predictions, crop_images, crop_out, seed);
  } catch (const eggloc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
