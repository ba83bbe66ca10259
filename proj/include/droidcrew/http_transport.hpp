#pragma once

#include <string>

#include <httplib.h>

#include "droidcrew/gateway.hpp"

namespace droidcrew {

// cpp-httplib backed transport for LiveGateway. Kept in its own header so
// test binaries that only need scripted gateways never pull in sockets.
inline HttpPost httplib_transport(int timeout_s = 60) {
  return [timeout_s](const std::string& url, const std::string& api_key,
                     const std::string& body) -> HttpReply {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return {0, "bad endpoint url"};
    auto path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    client.set_read_timeout(timeout_s, 0);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) return {0, "transport error"};
    return {res->status, res->body};
  };
}

}  // namespace droidcrew
