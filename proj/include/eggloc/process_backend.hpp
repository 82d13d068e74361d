#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eggloc/errors.hpp"
#include "eggloc/image.hpp"
#include "eggloc/pipeline.hpp"

namespace eggloc {

// Bridges BackendContract to an external runtime executable. Every call spawns
//   <runtime> <verb> <request.json>
// with the runtime's stdout as the reply. Model state persists between calls
// in state_dir, owned entirely by the runtime. Verbs:
//   generate     request {image, image_id, prompt, state_dir}; stdout = output text
//   train-step   request {batch: [{image, image_id, prompt, target}], state_dir};
//                stdout = loss as a decimal number
//   save-adapter / load-adapter   request {path, state_dir}
//
// One process per call keeps the contract trivial to implement but reloads the
// model each time; it suits inference-scale runs and smoke tests, not
// full-scale fine-tuning (see the README for that recipe).
class ProcessBackend : public Backend {
 public:
  ProcessBackend(std::filesystem::path runtime, std::filesystem::path state_dir)
      : runtime_(std::move(runtime)), state_dir_(std::move(state_dir)) {
    if (!std::filesystem::exists(runtime_)) {
      throw CapabilityError("backend runtime not found: " + runtime_.string());
    }
    std::filesystem::create_directories(state_dir_);
  }

  std::string name() const override { return "process:" + runtime_.string(); }

  BackendCapabilities capabilities() const override {
    return {.trainable = true, .generative = true, .concurrent_generate = false};
  }

  std::string generate(const GenerateRequest& request) override {
    const auto dir = next_request_dir();
    nlohmann::json req = {{"image_id", request.image_id},
                          {"prompt", request.prompt},
                          {"state_dir", state_dir_.string()}};
    if (!request.image.empty()) {
      const auto image_path = dir / ("image" + std::string(image_extension(request.image)));
      save_image(image_path, request.image);
      req["image"] = image_path.string();
    } else {
      req["image"] = nullptr;
    }
    const std::string reply = invoke("generate", dir, req);
    cleanup(dir);
    return reply;
  }

  double train_step(const std::vector<TrainSample>& batch) override {
    if (batch.empty()) throw ValidationError("train_step: empty batch");
    const auto dir = next_request_dir();
    nlohmann::json req = {{"state_dir", state_dir_.string()},
                          {"batch", nlohmann::json::array()}};
    std::size_t i = 0;
    for (const auto& sample : batch) {
      nlohmann::json entry = {{"image_id", sample.image_id},
                              {"prompt", sample.prompt},
                              {"target", sample.target}};
      if (!sample.image.empty()) {
        const auto image_path =
            dir / ("image_" + std::to_string(i) + image_extension(sample.image));
        save_image(image_path, sample.image);
        entry["image"] = image_path.string();
      } else {
        entry["image"] = nullptr;
      }
      req["batch"].push_back(std::move(entry));
      ++i;
    }
    const std::string reply = invoke("train-step", dir, req);
    cleanup(dir);
    try {
      return std::stod(reply);
    } catch (const std::exception&) {
      throw Error("runtime train-step reply is not a number: \"" + reply + "\"");
    }
  }

  void save_adapter(const std::filesystem::path& path) override {
    adapter_call("save-adapter", path);
  }

  void load_adapter(const std::filesystem::path& path) override {
    adapter_call("load-adapter", path);
  }

 private:
  void adapter_call(const char* verb, const std::filesystem::path& path) {
    const auto dir = next_request_dir();
    nlohmann::json req = {{"path", path.string()}, {"state_dir", state_dir_.string()}};
    invoke(verb, dir, req);
    cleanup(dir);
  }

  std::filesystem::path next_request_dir() {
    const auto dir = state_dir_ / ".requests" / std::to_string(counter_++);
    std::filesystem::create_directories(dir);
    return dir;
  }

  static void cleanup(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }

  static std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char ch : s) {
      if (ch == '\'') out += "'\\''";
      else out.push_back(ch);
    }
    out += "'";
    return out;
  }

  std::string invoke(const char* verb, const std::filesystem::path& dir,
                     const nlohmann::json& request) {
    const auto request_path = dir / "request.json";
    {
      std::ofstream out(request_path);
      if (!out) throw IoError("cannot write " + request_path.string());
      out << request.dump() << "\n";
    }
    const std::string cmd = shell_quote(runtime_.string()) + " " + verb + " " +
                            shell_quote(request_path.string());
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw IoError("failed to spawn backend runtime: " + runtime_.string());
    std::string reply;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) {
      reply.append(buf, got);
    }
    const int status = ::pclose(pipe);
    if (status != 0) {
      throw Error("backend runtime exited with status " + std::to_string(status) +
                  " for verb \"" + verb + "\"");
    }
    while (!reply.empty() && (reply.back() == '\n' || reply.back() == '\r')) {
      reply.pop_back();
    }
    return reply;
  }

  std::filesystem::path runtime_;
  std::filesystem::path state_dir_;
  std::size_t counter_ = 0;
};

}  // namespace eggloc
