#include "explink/service.hpp"

#include <chrono>

#include "explink/error.hpp"
#include "httplib.h"

namespace explink {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, {{"error", msg}}, status);
}

std::vector<std::string> support_strings(const ExternalMention& m) {
  std::vector<std::string> out;
  for (const auto& s : m.support) {
    std::string text;
    for (const auto& f : s.fields) {
      if (!text.empty()) text += ' ';
      text += f.value;
    }
    out.push_back(std::move(text));
  }
  return out;
}

}  // namespace

LinkService::LinkService(Model model, Corpus corpus, ServiceConfig config)
    : corpus_(std::move(corpus)),
      config_(std::move(config)),
      server_(std::make_unique<httplib::Server>()),
      snapshot_(std::make_shared<const Model>(std::move(model))),
      store_(config_.feedback_log) {
  // httplib defaults to SO_REUSEPORT, which lets a second server share the port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  install_routes();
}

LinkService::~LinkService() {
  stop();
  wait_retrain();
}

std::shared_ptr<const Model> LinkService::snapshot() const {
  std::lock_guard lock(snapshot_mu_);
  return snapshot_;
}

bool LinkService::retraining() const {
  std::lock_guard lock(retrain_mu_);
  return retraining_;
}

void LinkService::wait_retrain() {
  std::thread t;
  {
    std::lock_guard lock(retrain_mu_);
    t = std::move(retrain_thread_);
  }
  if (t.joinable()) t.join();
}

std::size_t LinkService::feedback_count() const {
  std::lock_guard lock(state_mu_);
  return store_.size();
}

LinkResult LinkService::link_and_queue(const ExternalMention& mention) {
  // Hold the snapshot for the whole request so a concurrent swap cannot
  // change the model mid-way.
  const auto model = snapshot();
  LinkResult result = link(*model, mention, corpus_, config_.link);
  std::lock_guard lock(state_mu_);
  const bool queued =
      std::find(queue_order_.begin(), queue_order_.end(), mention.mention_id) !=
      queue_order_.end();
  known_[mention.mention_id] = {mention, result};
  if (!queued) queue_order_.push_back(mention.mention_id);
  return result;
}

json LinkService::queue_json() const {
  std::lock_guard lock(state_mu_);
  json items = json::array();
  for (const auto& id : queue_order_) {
    const Pending& p = known_.at(id);
    json ranked = json::array();
    for (const auto& c : p.result.ranked) {
      const Expert& e = corpus_.expert(c.expert_id);
      json evidence = json::array();
      for (std::size_t i = 0;
           i < e.support.size() && evidence.size() < config_.evidence_titles;
           ++i) {
        const auto title = e.support[i].field("title");
        if (!title.empty()) evidence.push_back(std::string(title));
      }
      ranked.push_back({{"expert_id", c.expert_id},
                        {"score", c.score},
                        {"name", e.name},
                        {"evidence", evidence}});
    }
    items.push_back(
        {{"mention_id", id},
         {"name", p.mention.name},
         {"support", support_strings(p.mention)},
         {"ranked", ranked},
         {"accepted", p.result.accepted ? json(*p.result.accepted) : json(nullptr)}});
  }
  return {{"items", items}};
}

void LinkService::install_routes() {
  auto& s = *server_;

  s.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    json body = {{"status", "ok"},
                 {"model_version", model_version()},
                 {"retraining", retraining()}};
    std::lock_guard lock(retrain_mu_);
    if (retrain_error_) body["retrain_error"] = *retrain_error_;
    send_json(res, body);
  });

  s.Post("/link", [this](const httplib::Request& req, httplib::Response& res) {
    ExternalMention m;
    try {
      const json body = json::parse(req.body);
      m.name = body.at("name").get<std::string>();
      const auto support = body.at("support").get<std::vector<std::string>>();
      if (m.name.empty() || support.empty()) {
        return send_error(res, 400, "name and support must be non-empty");
      }
      m.mention_id = mention_key(m.name, support);
      for (const auto& text : support) m.support.push_back(make_sentence(text));
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("bad request: ") + e.what());
    }
    try {
      send_json(res, to_json(link_and_queue(m)));
    } catch (const Error& e) {
      send_error(res, 422, e.what());
    }
  });

  s.Post("/feedback", [this](const httplib::Request& req,
                             httplib::Response& res) {
    Feedback fb;
    try {
      const json body = json::parse(req.body);
      fb.mention_id = body.at("mention_id").get<std::string>();
      fb.verdict = parse_verdict(body.at("verdict").get<std::string>());
      if (body.contains("corrected_expert_id") &&
          !body["corrected_expert_id"].is_null()) {
        fb.corrected_expert_id = body["corrected_expert_id"].get<std::string>();
      }
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("bad request: ") + e.what());
    } catch (const Error& e) {
      return send_error(res, 400, e.what());
    }
    fb.timestamp = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
    std::lock_guard lock(state_mu_);
    auto it = known_.find(fb.mention_id);
    if (it == known_.end()) {
      return send_error(res, 404, "unknown mention '" + fb.mention_id + "'");
    }
    try {
      store_.submit(fb, it->second.mention, it->second.result, corpus_);
    } catch (const Error& e) {
      return send_error(res, 422, e.what());
    }
    std::erase(queue_order_, fb.mention_id);
    send_json(res, {{"stored", true}});
  });

  s.Get("/queue", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, queue_json());
  });

  s.Post("/retrain", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(retrain_mu_);
    if (retraining_) return send_error(res, 409, "retrain already running");
    if (retrain_thread_.joinable()) retrain_thread_.join();
    retraining_ = true;
    retrain_error_.reset();
    retrain_thread_ = std::thread(&LinkService::retrain_job, this, snapshot());
    send_json(res, {{"started", true}}, 202);
  });
}

void LinkService::retrain_job(std::shared_ptr<const Model> base) {
  std::optional<std::string> error;
  try {
    FeedbackStore records = [this] {
      std::lock_guard lock(state_mu_);
      return store_;
    }();
    auto next = std::make_shared<const Model>(
        retrain_from_feedback(*base, records, corpus_, config_.retrain));
    next->save(config_.snapshot_root / ("v" + std::to_string(next->version)));
    std::lock_guard lock(snapshot_mu_);
    snapshot_ = std::move(next);
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::lock_guard lock(retrain_mu_);
  retraining_ = false;
  retrain_error_ = error;
}

bool LinkService::bind() {
  if (bound_port_ >= 0) return true;
  if (config_.port == 0) {
    bound_port_ = server_->bind_to_any_port(config_.host);
  } else if (server_->bind_to_port(config_.host, config_.port)) {
    bound_port_ = config_.port;
  }
  return bound_port_ >= 0;
}

int LinkService::start() {
  if (!bind()) {
    throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound_port_;
}

void LinkService::run() {
  if (!bind()) {
    throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  server_->listen_after_bind();
}

void LinkService::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace explink
