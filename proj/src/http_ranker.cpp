#include "viewalign/retrieval.hpp"

#include <cstdlib>
#include <json.hpp>
#include <regex>

#include "viewalign/errors.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a `_res` macro.
#ifdef VIEWALIGN_HTTPS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace viewalign::retrieval {

namespace {

using nlohmann::json;

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

HttpRanker::HttpRanker(HttpRankerOptions options) : options_(std::move(options)) {
  static const std::regex url_re(R"(^(https?://[^/?#]+)([^#]*)$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(options_.url, m, url_re)) {
    throw Error(ErrorCode::kInvalidArgument, "ranker URL must be http(s)://host[:port][/path]");
  }
  origin_ = m[1].str();
  path_ = m[2].str().empty() ? "/" : m[2].str();
#ifndef VIEWALIGN_HTTPS
  if (origin_.rfind("https", 0) == 0 || origin_.rfind("HTTPS", 0) == 0) {
    throw Error(ErrorCode::kInvalidArgument, "built without https support");
  }
#endif
  if (!(options_.timeout_seconds > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ranker timeout must be positive");
  }
}

HttpRanker HttpRanker::from_environment(double timeout_seconds) {
  HttpRankerOptions o;
  o.url = env_or_empty("RANKER_URL");
  o.api_key = env_or_empty("RANKER_API_KEY");
  o.timeout_seconds = timeout_seconds;
  if (o.url.empty()) throw Error(ErrorCode::kRankerUnavailable, "RANKER_URL is not set");
  return HttpRanker(std::move(o));
}

RankerResponse HttpRanker::rank(const RankerRequest& request) const {
  json body;
  body["prompt"] = request.prompt_text;
  body["m_star"] = request.m_star;
  body["candidates"] = json::array();
  for (const Candidate& c : request.candidates) body["candidates"].push_back({{"id", c.id}, {"caption", c.caption}});

  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(options_.timeout_seconds);
  const auto usecs = static_cast<time_t>((options_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kRankerUnavailable, "request failed: " + httplib::to_string(res.error()));
  }
  if (res->status >= 500 || res->status == 429) {
    throw Error(ErrorCode::kRankerUnavailable, "ranker answered HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::kRankerProtocolError, "ranker answered HTTP " + std::to_string(res->status));
  }
  try {
    const json reply = json::parse(res->body);
    RankerResponse out;
    out.ids = reply.at("ids").get<std::vector<std::string>>();
    out.explanation = reply.at("explanation").get<std::string>();
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kRankerProtocolError, std::string("malformed ranker reply: ") + e.what());
  }
}

}  // namespace viewalign::retrieval
