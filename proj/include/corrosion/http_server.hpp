#pragma once

#include <memory>
#include <string>
#include <thread>

#include "corrosion/service.hpp"

namespace httplib {
class Server;
}

namespace corrosion {

// JSON API in front of a CorrosionService.
//
//   GET  /api/quiz                      -> {images: [{id, url}]}
//   POST /api/quiz                      {ballot: [{id, corrosion}], token}
//   POST /api/detect                    raw image body or multipart field "image"
//   POST /api/detect/{id}/correct       {corrosion, token}
//   GET  /api/stats
//   POST /api/admin/retrain[?wait=1]
//
// Errors are {"code": <stable snake_case>, "error": <message>}.
class HttpServer {
 public:
  explicit HttpServer(CorrosionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  // serve() on a background thread.
  void start();
  void stop();
  int port() const { return port_; }

 private:
  void routes();

  CorrosionService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

// HTTP status for an error code on a given route family.
int http_status_for(ErrorCode code);

}  // namespace corrosion
