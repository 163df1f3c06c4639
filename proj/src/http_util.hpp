#pragma once

#include <string>

#include "json.hpp"
#include "stanceforge/embed_io.hpp"

namespace stanceforge::detail {

// POSTs JSON to config.url + route and returns the parsed response, retrying
// transport errors, non-2xx statuses and unparsable bodies. Throws IoError
// once the retry budget is spent.
nlohmann::json post_json(const ClientConfig& config, const std::string& route, const nlohmann::json& body);

}  // namespace stanceforge::detail
