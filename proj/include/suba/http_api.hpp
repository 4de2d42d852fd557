#pragma once

// HTTP+JSON front end for TrialService.

#include <httplib.h>

#include <optional>
#include <string>

#include "suba/service.hpp"

namespace suba {

struct HttpOptions {
  std::string token;       // when set, every /trials request needs "Authorization: Bearer <token>"
  std::string static_dir;  // optional directory served at /
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::parse_error:
      return 400;
    case ErrorCode::unknown_trial:
    case ErrorCode::unknown_patient:
      return 404;
    case ErrorCode::invalid_phase:
    case ErrorCode::duplicate_outcome:
    case ErrorCode::stale_posterior:
    case ErrorCode::no_data:
      return 409;
    case ErrorCode::resource_limit:
      return 422;
    default:
      return 500;
  }
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
  send_json(res, status, {{"error", code}, {"message", msg}});
}

inline Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("request body is not JSON: ") + e.what());
  }
}

inline std::vector<double> parse_vector(const std::string& text) {
  std::vector<double> x;
  for (const auto& f : split_fields(text)) x.push_back(parse_double(f, "x"));
  return x;
}

inline std::int64_t parse_int64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    require(used == s.size(), ErrorCode::invalid_argument, "bad " + what);
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::invalid_argument, "bad " + what + " '" + s + "'");
  }
}

}  // namespace detail

// Registers every route on server. The service must outlive the server.
inline void install_routes(httplib::Server& server, TrialService& service, HttpOptions opt = {}) {
  using httplib::Request;
  using httplib::Response;

  auto guarded = [&service, opt](auto handler) {
    return [&service, opt, handler](const Request& req, Response& res) {
      if (!opt.token.empty() && req.get_header_value("Authorization") != "Bearer " + opt.token) {
        detail::send_error(res, 401, "unauthorized", "missing or invalid bearer token");
        return;
      }
      try {
        handler(service, req, res);
      } catch (const Error& e) {
        detail::send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const std::exception& e) {
        detail::send_error(res, 500, "internal", e.what());
      }
    };
  };

  server.Post("/trials", guarded([](TrialService& s, const Request& req, Response& res) {
    detail::send_json(res, 201, s.create_trial(detail::parse_body(req), req.get_header_value("Idempotency-Key")));
  }));

  server.Post(R"(/trials/([^/]+)/patients)", guarded([](TrialService& s, const Request& req, Response& res) {
    detail::send_json(res, 201, s.enroll(req.matches[1], detail::parse_body(req),
                                         req.get_header_value("Idempotency-Key")));
  }));

  server.Post(R"(/trials/([^/]+)/patients/([^/]+)/outcome)",
              guarded([](TrialService& s, const Request& req, Response& res) {
                const auto pid = detail::parse_int64(req.matches[2], "patient id");
                detail::send_json(res, 200, s.record_outcome(req.matches[1], pid, detail::parse_body(req),
                                                             req.get_header_value("Idempotency-Key")));
              }));

  server.Get(R"(/trials/([^/]+)/state)", guarded([](TrialService& s, const Request& req, Response& res) {
    detail::send_json(res, 200, s.state(req.matches[1]));
  }));

  server.Get(R"(/trials/([^/]+)/partition)", guarded([](TrialService& s, const Request& req, Response& res) {
    detail::send_json(res, 200, s.partition(req.matches[1]));
  }));

  server.Get(R"(/trials/([^/]+)/predictive)", guarded([](TrialService& s, const Request& req, Response& res) {
    require(req.has_param("x"), ErrorCode::invalid_argument, "query parameter x=v1,...,vK is required");
    detail::send_json(res, 200, s.predictive(req.matches[1], detail::parse_vector(req.get_param_value("x"))));
  }));

  server.Get(R"(/trials/([^/]+)/events)", guarded([](TrialService& s, const Request& req, Response& res) {
    const std::int64_t since = req.has_param("since") ? detail::parse_int64(req.get_param_value("since"), "since") : 0;
    detail::send_json(res, 200, {{"trial", std::string(req.matches[1])}, {"events", s.events(req.matches[1], since)}});
  }));

  server.Get("/trials", guarded([](TrialService& s, const Request&, Response& res) {
    detail::send_json(res, 200, {{"trials", s.trial_ids()}});
  }));

  server.Get("/healthz", [](const Request&, Response& res) { detail::send_json(res, 200, {{"ok", true}}); });

  if (!opt.static_dir.empty()) server.set_mount_point("/", opt.static_dir);
}

// Splits "host:port" (port required).
inline std::pair<std::string, int> parse_bind_address(const std::string& bind) {
  const auto colon = bind.rfind(':');
  require(colon != std::string::npos && colon + 1 < bind.size(), ErrorCode::invalid_argument,
          "bind address must be host:port");
  const auto port = detail::parse_int64(bind.substr(colon + 1), "port");
  require(port >= 0 && port <= 65535, ErrorCode::invalid_argument, "port out of range");
  return {bind.substr(0, colon), static_cast<int>(port)};
}

}  // namespace suba
