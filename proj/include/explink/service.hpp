#pragma once

// HTTP front end for linking and review:
//   GET  /health    {"status":"ok","model_version":N,"retraining":bool}
//   POST /link      {"name":str,"support":[str]} -> LinkResult JSON
//   POST /feedback  {"mention_id","verdict","corrected_expert_id"?}
//   GET  /queue     pending mentions with ranked candidates and evidence
//   POST /retrain   retrains from feedback in the background, then swaps

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/linker.hpp"
#include "explink/model.hpp"

namespace httplib {
class Server;
}

namespace explink {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  LinkOptions link;
  std::filesystem::path feedback_log = "feedback.jsonl";
  // Retrained models are written to <snapshot_root>/v<version>.
  std::filesystem::path snapshot_root = "snapshots";
  RetrainConfig retrain;
  // Titles of each candidate's first papers shown as queue evidence.
  std::size_t evidence_titles = 3;
};

class LinkService {
 public:
  LinkService(Model model, Corpus corpus, ServiceConfig config);
  ~LinkService();

  LinkService(const LinkService&) = delete;
  LinkService& operator=(const LinkService&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  // Throws Error when the address cannot be bound.
  int start();
  void stop();
  // Blocks serving on the calling thread.
  void run();

  // Links a mention and queues it for review.
  LinkResult link_and_queue(const ExternalMention& mention);

  std::shared_ptr<const Model> snapshot() const;
  int model_version() const { return snapshot()->version; }
  bool retraining() const;
  // Waits for an in-flight retrain, if any.
  void wait_retrain();

  nlohmann::json queue_json() const;
  std::size_t feedback_count() const;

 private:
  struct Pending {
    ExternalMention mention;
    LinkResult result;
  };

  void install_routes();
  bool bind();
  void retrain_job(std::shared_ptr<const Model> base);

  Corpus corpus_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int bound_port_ = -1;

  mutable std::mutex snapshot_mu_;
  std::shared_ptr<const Model> snapshot_;

  // Guards the queue, known mentions and the feedback store.
  mutable std::mutex state_mu_;
  std::map<std::string, Pending> known_;
  std::vector<std::string> queue_order_;
  FeedbackStore store_;

  mutable std::mutex retrain_mu_;
  std::thread retrain_thread_;
  bool retraining_ = false;
  std::optional<std::string> retrain_error_;
};

}  // namespace explink
