/* Copyright 2026 The partlang Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef PARTLANG_SERVICE_HPP_
#define PARTLANG_SERVICE_HPP_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/head.hpp"
#include "partlang/training.hpp"

namespace partlang {

using Json = nlohmann::ordered_json;

struct LibraryVersion {
  std::string id;
  std::optional<std::string> parent;
  std::string op;
  std::shared_ptr<const DescriptorLibrary> library;
  LibraryDiff diff;                      // against the parent
  std::optional<std::string> cloned_from;
};

// Append-only chain of immutable library snapshots. Commits are serialized;
// reads never block on each other.
class LibraryRegistry {
 public:
  std::shared_ptr<const LibraryVersion> Create(DescriptorLibrary library);
  // NotFoundError for unknown ids.
  std::shared_ptr<const LibraryVersion> Get(const std::string& id) const;
  std::shared_ptr<const LibraryVersion> Head() const;
  std::vector<std::string> Ids() const;

  // Appends a child of `base`. ConflictError unless `base` is the head: a
  // client editing a stale version must rebase on the head and retry.
  std::shared_ptr<const LibraryVersion> Commit(const std::string& base, const std::string& op,
                                               DescriptorLibrary library, LibraryDiff diff,
                                               std::optional<std::string> cloned_from = std::nullopt);

 private:
  mutable std::shared_mutex mu_;
  std::vector<std::shared_ptr<const LibraryVersion>> versions_;
  std::map<std::string, std::size_t> index_;
};

struct ClassifyRequest {
  ImageInput image;
  std::optional<std::string> version;  // head when absent
  std::optional<std::size_t> top_k;    // every class when absent
  bool explain = true;
};

struct PixelCorners {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct RankedClass {
  std::string class_name;
  std::size_t class_index = 0;
  double softmax = 0;
  double total_logit = 0;
};

struct ClassifyResponse {
  std::string request_id;
  std::string version;
  std::size_t num_classes = 0;
  std::optional<std::pair<int, int>> image_size;
  std::vector<RankedClass> ranking;  // top_k entries
  std::vector<Explanation> explanations;
  std::vector<std::optional<PixelCorners>> part_pixel_boxes;  // per vocabulary part
};

// Fixed legend color for a vocabulary index.
std::string PartColor(std::size_t part_index);

Json ToJson(const ClassifyResponse& response);
Json ToJson(const LibraryDiff& diff);
Json ToJson(const LibraryVersion& version, bool include_library);

struct EditRequest {
  std::string base_version;
  std::string op;  // edit | clone | add | delete
  std::string class_name;
  std::map<std::string, std::string> phrases;  // edit: part -> phrase; add: full set
  std::string source;                          // clone
  std::string new_name;                        // clone
};

// Parses {"op": ..., ...}; FormatError on a malformed payload.
EditRequest ParseEditRequest(const Json& body, const std::string& base_version);

struct EditResponse {
  std::shared_ptr<const LibraryVersion> version;
};

enum class JobState { kQueued, kRunning, kSucceeded, kFailed };
const char* JobStateName(JobState state);

struct JobStatus {
  std::string id;
  std::string kind;
  JobState state = JobState::kQueued;
  Json result;
  std::string error;
};

// One background worker; jobs run in submission order.
class JobQueue {
 public:
  JobQueue();
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string Submit(const std::string& kind, std::function<Json()> work);
  JobStatus Get(const std::string& id) const;  // NotFoundError for unknown ids
  // Blocks until the job leaves the queue or the timeout passes.
  JobStatus Wait(const std::string& id, double timeout_seconds) const;

 private:
  void Run();

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, JobStatus> jobs_;
  std::deque<std::pair<std::string, std::function<Json()>>> pending_;
  bool stop_ = false;
  std::uint64_t next_ = 1;
  std::thread worker_;
};

struct ServiceOptions {
  // Labeled data for "train" jobs; jobs of that kind are rejected when unset.
  std::function<TrainingData(std::shared_ptr<const DescriptorLibrary>)> training_data;
};

class Service {
 public:
  Service(std::shared_ptr<const Classifier> classifier, DescriptorLibrary initial, ServiceOptions options = {});

  const Classifier& classifier() const { return *classifier_; }
  LibraryRegistry& registry() { return registry_; }
  const LibraryRegistry& registry() const { return registry_; }
  JobQueue& jobs() { return jobs_; }

  // 400 bad image, 404 unknown version, 409 vocabulary mismatch.
  ClassifyResponse HandleClassify(const ClassifyRequest& request);
  // 404/409 from the store, 422 for validation failures.
  EditResponse HandleEdit(const EditRequest& request);
  std::shared_ptr<const LibraryVersion> CreateLibrary(DescriptorLibrary library);

  // Stored explanation payloads by request id.
  Json GetExplanation(const std::string& request_id) const;

  // kind: "evaluate" {version?, images: [{id|path, label}]} or
  // "train" {config: {...}}.
  std::string SubmitJob(const Json& body);

  static Json OpenApi();

 private:
  std::shared_ptr<const DescriptorBank> Bank(const LibraryVersion& version);

  std::shared_ptr<const Classifier> classifier_;
  ServiceOptions options_;
  LibraryRegistry registry_;
  JobQueue jobs_;
  std::mutex bank_mu_;
  std::map<std::string, std::shared_ptr<const DescriptorBank>> banks_;
  mutable std::mutex explain_mu_;
  std::map<std::string, Json> explanations_;
};

// HTTP status for a domain error.
int HttpStatusFor(const std::exception& e);

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  int Start(const std::string& host, int port);
  // Binds and serves on the calling thread until Stop.
  bool Listen(const std::string& host, int port);
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace partlang

#endif  // PARTLANG_SERVICE_HPP_
