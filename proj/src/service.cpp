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

#include "partlang/service.hpp"

#include "httplib.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "partlang/error.hpp"
#include "partlang/evaluation.hpp"

namespace partlang {

// --- Library registry -------------------------------------------------------------

std::shared_ptr<const LibraryVersion> LibraryRegistry::Create(DescriptorLibrary library) {
  std::unique_lock lock(mu_);
  auto v = std::make_shared<LibraryVersion>();
  v->id = "v" + std::to_string(versions_.size() + 1);
  v->op = "create";
  v->diff.added_classes = library.class_names();
  v->library = std::make_shared<const DescriptorLibrary>(std::move(library));
  index_[v->id] = versions_.size();
  versions_.push_back(v);
  return v;
}

std::shared_ptr<const LibraryVersion> LibraryRegistry::Get(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown library version '" + id + "'");
  return versions_[it->second];
}

std::shared_ptr<const LibraryVersion> LibraryRegistry::Head() const {
  std::shared_lock lock(mu_);
  if (versions_.empty()) throw NotFoundError("no library versions");
  return versions_.back();
}

std::vector<std::string> LibraryRegistry::Ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& v : versions_) out.push_back(v->id);
  return out;
}

std::shared_ptr<const LibraryVersion> LibraryRegistry::Commit(const std::string& base, const std::string& op,
                                                              DescriptorLibrary library, LibraryDiff diff,
                                                              std::optional<std::string> cloned_from) {
  std::unique_lock lock(mu_);
  if (!index_.count(base)) throw NotFoundError("unknown library version '" + base + "'");
  const std::string head = versions_.back()->id;
  if (base != head) {
    throw ConflictError("library version '" + base + "' is stale; rebase on head '" + head + "'");
  }
  auto v = std::make_shared<LibraryVersion>();
  v->id = "v" + std::to_string(versions_.size() + 1);
  v->parent = base;
  v->op = op;
  v->library = std::make_shared<const DescriptorLibrary>(std::move(library));
  v->diff = std::move(diff);
  v->cloned_from = std::move(cloned_from);
  index_[v->id] = versions_.size();
  versions_.push_back(v);
  return v;
}

// --- JSON ---------------------------------------------------------------------------

namespace {

Json BoxJson(const BoundingBox& b) { return {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}}; }

Json LibraryDocument(const DescriptorLibrary& lib) { return Json::parse(SaveLibrary(lib)); }

// Legend colors by vocabulary index; clients draw part boxes with these.
constexpr const char* kPalette[] = {"#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4",
                                    "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080", "#e6beff"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

}  // namespace

std::string PartColor(std::size_t part_index) { return kPalette[part_index % kPaletteSize]; }

Json ToJson(const LibraryDiff& d) {
  Json j;
  j["added_classes"] = d.added_classes;
  j["removed_classes"] = d.removed_classes;
  Json changed = Json::array();
  for (const PhraseChange& c : d.changed) {
    changed.push_back({{"class", c.class_name}, {"part", c.part}, {"before", c.before}, {"after", c.after}});
  }
  j["changed"] = changed;
  return j;
}

Json ToJson(const LibraryVersion& v, bool include_library) {
  Json j;
  j["id"] = v.id;
  j["parent"] = v.parent ? Json(*v.parent) : Json(nullptr);
  j["op"] = v.op;
  j["num_classes"] = v.library->num_classes();
  j["diff"] = ToJson(v.diff);
  if (v.cloned_from) j["cloned_from"] = *v.cloned_from;
  if (include_library) j["library"] = LibraryDocument(*v.library);
  return j;
}

Json ToJson(const ClassifyResponse& r) {
  Json j;
  j["request_id"] = r.request_id;
  j["version"] = r.version;
  j["num_classes"] = r.num_classes;
  if (r.image_size) {
    j["image_size"] = {{"width", r.image_size->first}, {"height", r.image_size->second}};
  } else {
    j["image_size"] = nullptr;
  }
  Json ranking = Json::array();
  for (const RankedClass& c : r.ranking) {
    ranking.push_back({{"class", c.class_name},
                       {"class_index", c.class_index},
                       {"softmax", c.softmax},
                       {"total_logit", c.total_logit}});
  }
  j["ranking"] = ranking;
  Json explanations = Json::array();
  for (const Explanation& e : r.explanations) {
    Json parts = Json::array();
    for (std::size_t p = 0; p < e.per_part.size(); ++p) {
      const PartExplanation& pe = e.per_part[p];
      Json item = {{"part", pe.part},
                   {"phrase", pe.phrase},
                   {"score", pe.score},
                   {"color", PartColor(p)},
                   {"box", BoxJson(pe.box)}};
      if (p < r.part_pixel_boxes.size() && r.part_pixel_boxes[p]) {
        const PixelCorners& px = *r.part_pixel_boxes[p];
        item["pixel_box"] = {{"x0", px.x0}, {"y0", px.y0}, {"x1", px.x1}, {"y1", px.y1}};
      } else {
        item["pixel_box"] = nullptr;
      }
      parts.push_back(std::move(item));
    }
    explanations.push_back({{"class", e.class_name},
                            {"class_index", e.class_index},
                            {"total_logit", e.total_logit},
                            {"softmax", e.softmax_prob},
                            {"per_part", parts}});
  }
  j["explanations"] = explanations;
  return j;
}

EditRequest ParseEditRequest(const Json& body, const std::string& base_version) {
  if (!body.is_object()) throw FormatError("edit payload must be a JSON object");
  EditRequest r;
  r.base_version = base_version;
  try {
    r.op = body.value("op", std::string("edit"));
    r.class_name = body.value("class", std::string());
    r.source = body.value("source", std::string());
    r.new_name = body.value("new_name", std::string());
    if (body.contains("phrases")) r.phrases = body.at("phrases").get<std::map<std::string, std::string>>();
    if (body.contains("part")) {
      r.phrases[body.at("part").get<std::string>()] = body.at("phrase").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("edit payload: ") + e.what());
  }
  return r;
}

// --- Jobs ---------------------------------------------------------------------------

const char* JobStateName(JobState s) {
  switch (s) {
    case JobState::kQueued:
      return "queued";
    case JobState::kRunning:
      return "running";
    case JobState::kSucceeded:
      return "succeeded";
    case JobState::kFailed:
      return "failed";
  }
  return "?";
}

JobQueue::JobQueue() : worker_([this] { Run(); }) {}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

std::string JobQueue::Submit(const std::string& kind, std::function<Json()> work) {
  std::lock_guard lock(mu_);
  const std::string id = "job-" + std::to_string(next_++);
  jobs_[id] = JobStatus{id, kind, JobState::kQueued, nullptr, ""};
  pending_.emplace_back(id, std::move(work));
  cv_.notify_all();
  return id;
}

JobStatus JobQueue::Get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
  return it->second;
}

JobStatus JobQueue::Wait(const std::string& id, double timeout_seconds) const {
  std::unique_lock lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
  cv_.wait_for(lock, std::chrono::duration<double>(timeout_seconds), [&] {
    return it->second.state == JobState::kSucceeded || it->second.state == JobState::kFailed;
  });
  return it->second;
}

void JobQueue::Run() {
  for (;;) {
    std::pair<std::string, std::function<Json()>> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !pending_.empty(); });
      if (stop_) return;
      job = std::move(pending_.front());
      pending_.pop_front();
      jobs_[job.first].state = JobState::kRunning;
    }
    Json result;
    std::string error;
    bool ok = true;
    try {
      result = job.second();
    } catch (const std::exception& e) {
      ok = false;
      error = e.what();
    }
    {
      std::lock_guard lock(mu_);
      JobStatus& s = jobs_[job.first];
      s.state = ok ? JobState::kSucceeded : JobState::kFailed;
      s.result = std::move(result);
      s.error = std::move(error);
    }
    cv_.notify_all();
  }
}

// --- Service ------------------------------------------------------------------------

Service::Service(std::shared_ptr<const Classifier> classifier, DescriptorLibrary initial, ServiceOptions options)
    : classifier_(std::move(classifier)), options_(std::move(options)) {
  if (!classifier_) throw ConfigError("service needs a classifier");
  registry_.Create(std::move(initial));
}

std::shared_ptr<const DescriptorBank> Service::Bank(const LibraryVersion& version) {
  {
    std::lock_guard lock(bank_mu_);
    const auto it = banks_.find(version.id);
    if (it != banks_.end()) return it->second;
  }
  if (!(version.library->vocabulary() == classifier_->model().config().vocabulary)) {
    throw ConflictError("library version '" + version.id + "' vocabulary does not match the model");
  }
  auto bank = std::make_shared<const DescriptorBank>(classifier_->EncodeLibrary(version.library));
  std::lock_guard lock(bank_mu_);
  return banks_.emplace(version.id, bank).first->second;
}

ClassifyResponse Service::HandleClassify(const ClassifyRequest& req) {
  const auto version = req.version ? registry_.Get(*req.version) : registry_.Head();
  const auto bank = Bank(*version);
  const std::size_t n = version->library->num_classes();
  if (req.top_k && (*req.top_k == 0 || *req.top_k > n)) {
    throw ValidationError("top_k must lie in [1, " + std::to_string(n) + "]");
  }
  if (req.image.id.empty() && req.image.bytes.empty() && req.image.path.empty()) {
    throw InputError("request carries no image");
  }
  const std::vector<Explanation> all = classifier_->Explain(req.image, *bank);

  ClassifyResponse r;
  r.version = version->id;
  r.num_classes = n;
  const ImageEncoder& image_encoder = classifier_->image_encoder();
  r.image_size = image_encoder.ImageSize(req.image);
  const std::size_t k = req.top_k.value_or(n);
  for (std::size_t i = 0; i < k; ++i) {
    r.ranking.push_back({all[i].class_name, all[i].class_index, all[i].softmax_prob, all[i].total_logit});
  }
  if (req.explain) r.explanations.assign(all.begin(), all.begin() + static_cast<long>(k));
  if (!all.empty()) {
    for (const PartExplanation& pe : all.front().per_part) {
      if (!r.image_size) {
        r.part_pixel_boxes.push_back(std::nullopt);
        continue;
      }
      const CornerBox c = pe.box.ToCorners();
      const double w = r.image_size->first, h = r.image_size->second;
      auto clamp = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
      r.part_pixel_boxes.push_back(
          PixelCorners{clamp(c.x0 * w, w), clamp(c.y0 * h, h), clamp(c.x1 * w, w), clamp(c.y1 * h, h)});
    }
  }
  // Identical requests get identical ids, so responses are reproducible.
  std::uint64_t h = Fnv1a64(version->id);
  h = Fnv1a64(req.image.id, h);
  h = Fnv1a64(req.image.path.string(), h);
  h = Fnv1a64(req.image.bytes, h);
  h = Fnv1a64(std::to_string(k) + (req.explain ? "e" : "-"), h);
  r.request_id = "req-" + HexDigest(h);
  {
    std::lock_guard lock(explain_mu_);
    explanations_[r.request_id] = ToJson(r);
  }
  return r;
}

EditResponse Service::HandleEdit(const EditRequest& req) {
  const auto base = registry_.Get(req.base_version);
  const DescriptorLibrary& lib = *base->library;
  DescriptorLibrary next;
  std::optional<std::string> cloned_from;
  std::string target;
  if (req.op == "edit") {
    if (req.phrases.empty()) throw ValidationError("edit needs at least one part phrase");
    next = lib;
    for (const auto& [part, phrase] : req.phrases) next = EditDescriptor(next, req.class_name, part, phrase);
  } else if (req.op == "clone") {
    next = CloneClass(lib, req.source, req.new_name);
    for (const auto& [part, phrase] : req.phrases) next = EditDescriptor(next, req.new_name, part, phrase);
    cloned_from = req.source;
  } else if (req.op == "add") {
    next = AddClass(lib, req.class_name, req.phrases);
  } else if (req.op == "delete") {
    next = DeleteClass(lib, req.class_name);
  } else {
    throw ValidationError("unknown edit op '" + req.op + "' (expected edit, clone, add or delete)");
  }
  LibraryDiff diff = DiffLibraries(lib, next);
  if (cloned_from) {
    // A clone reports its phrases that differ from the source class.
    const std::size_t src = *lib.FindClass(*cloned_from);
    const std::size_t dst = *next.FindClass(req.new_name);
    for (std::size_t j = 0; j < lib.num_parts(); ++j) {
      if (lib.phrase(src, j) != next.phrase(dst, j)) {
        diff.changed.push_back({req.new_name, lib.vocabulary().name(j), lib.phrase(src, j), next.phrase(dst, j)});
      }
    }
  }
  return {registry_.Commit(req.base_version, req.op, std::move(next), std::move(diff), cloned_from)};
}

std::shared_ptr<const LibraryVersion> Service::CreateLibrary(DescriptorLibrary library) {
  return registry_.Create(std::move(library));
}

Json Service::GetExplanation(const std::string& request_id) const {
  std::lock_guard lock(explain_mu_);
  const auto it = explanations_.find(request_id);
  if (it == explanations_.end()) throw NotFoundError("unknown request id '" + request_id + "'");
  return it->second;
}

namespace {

ImageInput ImageFromJson(const Json& j) {
  ImageInput in;
  if (j.is_string()) {
    in.id = j.get<std::string>();
    return in;
  }
  if (!j.is_object()) throw FormatError("image must be an id string or an object");
  in.id = j.value("id", std::string());
  const std::string path = j.value("path", std::string());
  if (!path.empty()) {
    in.path = path;
    if (in.id.empty()) in.id = path;
  }
  return in;
}

}  // namespace

std::string Service::SubmitJob(const Json& body) {
  if (!body.is_object()) throw FormatError("job payload must be a JSON object");
  const std::string kind = body.value("kind", std::string());
  const auto version = body.contains("version") ? registry_.Get(body.at("version").get<std::string>())
                                                : registry_.Head();
  if (kind == "evaluate") {
    if (!body.contains("images") || !body.at("images").is_array() || body.at("images").empty()) {
      throw ValidationError("evaluate job needs a non-empty images array");
    }
    std::vector<std::pair<ImageInput, std::string>> items;
    for (const Json& item : body.at("images")) {
      if (!item.is_object() || !item.contains("label")) throw FormatError("each image needs a label");
      items.emplace_back(ImageFromJson(item), item.at("label").get<std::string>());
    }
    const auto bank = Bank(*version);
    return jobs_.Submit(kind, [this, bank, items, id = version->id] {
      std::vector<int> pred, labels;
      for (const auto& [image, label] : items) {
        const auto c = bank->library->FindClass(label);
        if (!c) throw NotFoundError("label '" + label + "' is not in the library");
        labels.push_back(static_cast<int>(*c));
        pred.push_back(static_cast<int>(classifier_->Explain(image, *bank).front().class_index));
      }
      return Json{{"version", id}, {"top1", Top1Accuracy(pred, labels)}, {"count", labels.size()}};
    });
  }
  if (kind == "train") {
    if (!options_.training_data) throw ValidationError("this service has no training data configured");
    const TrainConfig config = ParseTrainConfig(body.value("config", Json::object()).dump());
    auto library = version->library;
    return jobs_.Submit(kind, [this, config, library] {
      const TrainingData data = options_.training_data(library);
      Checkpoint start;
      start.model = classifier_->model();
      start.text_encoder_id = classifier_->text_encoder().provider_id();
      start.text_encoder_digest = classifier_->text_encoder().ParameterDigest();
      const TrainResult r = RunStage(data, config, start);
      Json out{{"stage", StageName(config.stage)},
               {"steps", r.steps},
               {"epochs_run", r.epochs_run},
               {"early_stopped", r.early_stopped},
               {"parameter_digest", HexDigest(r.checkpoint.model.ParameterDigest())}};
      out["best_val_metric"] =
          std::isnan(r.checkpoint.best_val_metric) ? Json(nullptr) : Json(r.checkpoint.best_val_metric);
      return out;
    });
  }
  throw ValidationError("unknown job kind '" + kind + "' (expected evaluate or train)");
}

int HttpStatusFor(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::kFormat:
      case ErrorKind::kInput:
        return 400;
      case ErrorKind::kNotFound:
        return 404;
      case ErrorKind::kConflict:
        return 409;
      case ErrorKind::kValidation:
      case ErrorKind::kShape:
      case ErrorKind::kConfig:
        return 422;
      case ErrorKind::kNumeric:
      case ErrorKind::kProvider:
        return 500;
    }
  }
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 400;
  return 500;
}

Json Service::OpenApi() {
  auto op = [](const std::string& summary) { return Json{{"summary", summary}}; };
  Json paths;
  paths["/health"]["get"] = op("Liveness probe");
  paths["/openapi.json"]["get"] = op("This document");
  paths["/classify"]["post"] =
      op("Classify one image: JSON {image: {id|path}, version?, top_k?, explain?} or multipart field 'image'");
  paths["/libraries"]["get"] = op("List library versions");
  paths["/libraries"]["post"] = op("Create a new root library from a library document");
  paths["/libraries/{id}"]["get"] = op("Fetch one library version with its diff against the parent");
  paths["/libraries/{id}/edit"]["post"] =
      op("Commit an edit on top of version {id}: {op: edit|add|delete|clone, class, phrases, source, new_name}");
  paths["/libraries/{id}/clone-class"]["post"] = op("Clone {source} into {new_name}, then apply phrases");
  paths["/explanations/{request_id}"]["get"] = op("Stored explanation for an earlier classify request");
  paths["/jobs"]["post"] = op("Submit an evaluate or train job");
  paths["/jobs/{id}"]["get"] = op("Job status and result");
  Json errors = {{"400", "malformed payload or undecodable image"},
                 {"404", "unknown version, request, or job"},
                 {"409", "stale base version or vocabulary mismatch"},
                 {"422", "payload violates a validation rule"}};
  return Json{{"openapi", "3.0.3"},
              {"info", {{"title", "partlang"}, {"version", "1.0.0"}}},
              {"paths", paths},
              {"x-error-status", errors},
              {"x-error-body", {{"error", {{"kind", "string"}, {"message", "string"}}}}}};
}

// --- HTTP ---------------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
  std::thread thread;
};

namespace {

void SendJson(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void SendError(httplib::Response& res, const std::exception& e) {
  std::string kind = "internal";
  if (const auto* err = dynamic_cast<const Error*>(&e)) kind = ErrorKindName(err->kind());
  else if (dynamic_cast<const nlohmann::json::exception*>(&e)) kind = ErrorKindName(ErrorKind::kFormat);
  SendJson(res, HttpStatusFor(e), Json{{"error", {{"kind", kind}, {"message", e.what()}}}});
}

Json ParseBody(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("request body is not JSON: ") + e.what());
  }
}

template <typename Fn>
httplib::Server::Handler Guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const std::exception& e) {
      SendError(res, e);
    }
  };
}

ClassifyRequest ParseClassify(const httplib::Request& req) {
  ClassifyRequest out;
  if (req.is_multipart_form_data()) {
    if (!req.has_file("image")) throw InputError("multipart request has no 'image' field");
    const auto file = req.get_file_value("image");
    out.image.bytes = file.content;
    out.image.id = file.filename;
    if (req.has_file("version")) out.version = req.get_file_value("version").content;
    if (req.has_file("top_k")) {
      try {
        out.top_k = std::stoul(req.get_file_value("top_k").content);
      } catch (const std::exception&) {
        throw FormatError("top_k must be an integer");
      }
    }
    if (req.has_file("explain")) out.explain = req.get_file_value("explain").content != "false";
    return out;
  }
  const Json body = ParseBody(req);
  if (!body.is_object() || !body.contains("image")) throw FormatError("classify payload needs an 'image'");
  out.image = ImageFromJson(body.at("image"));
  if (body.contains("version")) out.version = body.at("version").get<std::string>();
  if (body.contains("top_k")) {
    const Json& k = body.at("top_k");
    if (!k.is_number_integer()) throw FormatError("top_k must be an integer");
    if (k.get<long long>() <= 0) throw ValidationError("top_k must be positive");
    out.top_k = k.get<std::size_t>();
  }
  if (body.contains("explain")) out.explain = body.at("explain").get<bool>();
  return out;
}

Json JobJson(const JobStatus& s) {
  Json j{{"id", s.id}, {"kind", s.kind}, {"state", JobStateName(s.state)}};
  j["result"] = s.result;
  j["error"] = s.error.empty() ? Json(nullptr) : Json(s.error);
  return j;
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  Service& svc = impl_->service;
  httplib::Server& s = impl_->server;

  s.Get("/health", Guarded([](const httplib::Request&, httplib::Response& res) {
          SendJson(res, 200, Json{{"status", "ok"}});
        }));
  s.Get("/openapi.json", Guarded([](const httplib::Request&, httplib::Response& res) {
          SendJson(res, 200, Service::OpenApi());
        }));
  s.Post("/classify", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           SendJson(res, 200, ToJson(svc.HandleClassify(ParseClassify(req))));
         }));
  s.Get("/libraries", Guarded([&svc](const httplib::Request&, httplib::Response& res) {
          Json list = Json::array();
          for (const std::string& id : svc.registry().Ids()) list.push_back(ToJson(*svc.registry().Get(id), false));
          SendJson(res, 200, Json{{"head", svc.registry().Head()->id}, {"versions", list}});
        }));
  s.Post("/libraries", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const auto v = svc.CreateLibrary(LoadLibrary(req.body));
           SendJson(res, 201, ToJson(*v, false));
         }));
  s.Get(R"(/libraries/([^/]+))", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
          SendJson(res, 200, ToJson(*svc.registry().Get(req.matches[1]), true));
        }));
  s.Post(R"(/libraries/([^/]+)/edit)", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const EditResponse r = svc.HandleEdit(ParseEditRequest(ParseBody(req), req.matches[1]));
           SendJson(res, 201, ToJson(*r.version, false));
         }));
  s.Post(R"(/libraries/([^/]+)/clone-class)", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           EditRequest e = ParseEditRequest(ParseBody(req), req.matches[1]);
           e.op = "clone";
           const EditResponse r = svc.HandleEdit(e);
           SendJson(res, 201, ToJson(*r.version, false));
         }));
  s.Get(R"(/explanations/([^/]+))", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
          SendJson(res, 200, svc.GetExplanation(req.matches[1]));
        }));
  s.Post("/jobs", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const std::string id = svc.SubmitJob(ParseBody(req));
           SendJson(res, 202, JobJson(svc.jobs().Get(id)));
         }));
  s.Get(R"(/jobs/([^/]+))", Guarded([&svc](const httplib::Request& req, httplib::Response& res) {
          SendJson(res, 200, JobJson(svc.jobs().Get(req.matches[1])));
        }));
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      SendError(res, e);
    } catch (...) {
      SendJson(res, 500, Json{{"error", {{"kind", "internal"}, {"message", "unknown error"}}}});
    }
  });
}

HttpServer::~HttpServer() { Stop(); }

int HttpServer::Start(const std::string& host, int port) {
  httplib::Server& s = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = s.bind_to_any_port(host);
  } else if (!s.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
  return bound;
}

bool HttpServer::Listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpServer::Stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace partlang
