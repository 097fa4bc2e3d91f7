#include "corrosion/http_server.hpp"

#include <chrono>
#include <cstdio>
#include <httplib.h>
#include <json.hpp>

#include "corrosion/error.hpp"
#include "corrosion/log.hpp"

namespace corrosion {

using json = nlohmann::json;

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRequest:
    case ErrorCode::kUnknownImage:
    case ErrorCode::kNotQuizEligible:
    case ErrorCode::kDecode:
    case ErrorCode::kInvalidArgument:
      return 400;
    case ErrorCode::kNotUploaded:
      return 404;
    case ErrorCode::kDuplicateBallot:
      return 409;
    case ErrorCode::kPayloadTooLarge:
      return 413;
    case ErrorCode::kPoolTooSmall:
      return 503;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& msg) {
  send_json(res, status, {{"code", code}, {"error", msg}});
}

std::string_view generic_code(int status) {
  switch (status) {
    case 400: return "malformed_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    case 503: return "unavailable";
    default: return status >= 500 ? "internal" : "http_error";
  }
}

json parse_body(const httplib::Request& req) {
  try {
    json body = json::parse(req.body);
    if (!body.is_object()) throw Error(ErrorCode::kMalformedRequest, "request body must be a JSON object");
    return body;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedRequest, std::string("invalid JSON: ") + e.what());
  }
}

std::string require_token(const json& body) {
  if (!body.contains("token") || !body["token"].is_string() || body["token"].get<std::string>().empty()) {
    throw Error(ErrorCode::kMalformedRequest, "missing voter token");
  }
  return body["token"];
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

json history_json(const std::vector<AccuracyPoint>& history) {
  json out = json::array();
  for (const auto& p : history) {
    out.push_back({{"measured_at", p.measured_at},
                   {"accuracy", p.accuracy},
                   {"cumulative_votes", p.cumulative_votes},
                   {"cumulative_uploads", p.cumulative_uploads},
                   {"session_id", p.session_id},
                   {"trained_on", p.trained_on}});
  }
  return out;
}

const char* outcome_name(RetrainOutcome o) {
  switch (o) {
    case RetrainOutcome::kPublished: return "published";
    case RetrainOutcome::kNoData: return "no_data";
    case RetrainOutcome::kFailed: return "failed";
    case RetrainOutcome::kBusy: return "busy";
  }
  return "unknown";
}

// Runs a handler, mapping library errors onto JSON error responses.
template <typename F>
void guarded(httplib::Response& res, F&& f, int unknown_image_status = 400) {
  try {
    f();
  } catch (const Error& e) {
    int status = http_status_for(e.code());
    if (e.code() == ErrorCode::kUnknownImage) status = unknown_image_status;
    send_error(res, status, error_code_name(e.code()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, error_code_name(ErrorCode::kMalformedRequest), e.what());
  }
}

}  // namespace

HttpServer::HttpServer(CorrosionService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
  auto& s = *server_;
  // Multipart framing adds a little on top of the image itself.
  s.set_payload_max_length(service_.config().max_upload_bytes + 64 * 1024);

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    send_error(res, res.status, generic_code(res.status), httplib::status_message(res.status));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send_error(res, 500, "internal", msg);
  });
  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    log_event(LogLevel::kInfo, "http",
              {{"method", req.method}, {"path", req.path}, {"status", res.status}});
  });

  s.Get("/api/quiz", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json images = json::array();
      for (const auto& r : service_.quiz())
        images.push_back({{"id", r.id}, {"url", "/images/" + r.id + "." + r.extension}});
      send_json(res, 200, {{"images", images}});
    });
  });

  s.Post("/api/quiz", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const std::string token = require_token(body);
      if (!body.contains("ballot") || !body["ballot"].is_array()) {
        throw Error(ErrorCode::kMalformedRequest, "ballot must be an array");
      }
      std::vector<BallotEntry> ballot;
      for (const auto& e : body["ballot"]) {
        if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("corrosion") ||
            !e["corrosion"].is_boolean()) {
          throw Error(ErrorCode::kMalformedRequest, "ballot entries need a string id and a boolean corrosion");
        }
        ballot.push_back({e["id"], e["corrosion"]});
      }
      const auto r = service_.submit_ballot(ballot, token);
      send_json(res, 200, {{"accepted", r.accepted}, {"newly_labeled", r.newly_labeled}});
    });
  });

  s.Post("/api/detect", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string* payload = &req.body;
      if (req.is_multipart_form_data()) {
        if (req.has_file("image")) {
          payload = &req.files.find("image")->second.content;
        } else if (!req.files.empty()) {
          payload = &req.files.begin()->second.content;
        } else {
          throw Error(ErrorCode::kMalformedRequest, "multipart upload without a file");
        }
      }
      if (payload->empty()) throw Error(ErrorCode::kMalformedRequest, "empty upload");
      const auto r = service_.detect(std::span(reinterpret_cast<const std::uint8_t*>(payload->data()),
                                               payload->size()));
      send_json(res, 200,
                {{"image_id", r.image_id},
                 {"prediction", label_name(r.prediction.label)},
                 {"confidence", r.prediction.confidence},
                 {"model_version", r.model_version},
                 {"model_checksum", hex32(r.model_checksum)}});
    });
  });

  s.Post(R"(/api/detect/([^/]+)/correct)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(
        res,
        [&] {
          const json body = parse_body(req);
          const std::string token = require_token(body);
          if (!body.contains("corrosion") || !body["corrosion"].is_boolean()) {
            throw Error(ErrorCode::kMalformedRequest, "corrosion must be a boolean");
          }
          service_.correct(req.matches[1], body["corrosion"], token);
          send_json(res, 200, {{"accepted", true}});
        },
        404);
  });

  s.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto st = service_.stats();
      send_json(res, 200,
                {{"accuracy_history", history_json(st.accuracy_history)},
                 {"cumulative_votes", st.cumulative_votes},
                 {"cumulative_uploads", st.cumulative_uploads},
                 {"model_version", st.model_version},
                 {"labeled_count", st.labeled_count}});
    });
  });

  s.Post("/api/admin/retrain", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (req.get_param_value("wait") == "1" || !service_.config().background_training) {
        const auto r = service_.retrain_now();
        send_json(res, 200, {{"outcome", outcome_name(r.outcome)},
                             {"model_version", service_.current_model()->version},
                             {"message", r.message}});
      } else {
        const bool queued = service_.request_retrain();
        send_json(res, 202, {{"outcome", queued ? "queued" : "coalesced"},
                             {"model_version", service_.current_model()->version}});
      }
    });
  });

  if (!service_.config().data_dir.empty()) {
    s.set_mount_point("/images", (service_.config().data_dir / "images").string());
  }
  if (!service_.config().static_dir.empty()) {
    s.set_mount_point("/", service_.config().static_dir.string());
  }
}

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port_;
}

void HttpServer::serve() {
  log_event(LogLevel::kInfo, "listening", {{"port", port_}});
  server_->listen_after_bind();
}

void HttpServer::start() {
  thread_ = std::thread([this] { serve(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace corrosion
