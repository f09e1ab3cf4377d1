#pragma once

#include <string>

#include "infloc/netmodel.hpp"

namespace infloc::json_io {

/// Canonical JSON dump of a network model (schema_version 1). Numbers are
/// emitted with shortest round-trip precision, so dump -> load is lossless.
std::string network_to_json(const netmodel::Network& net, int indent = 2);

/// Inverse of network_to_json. Throws MalformedCase on schema violations.
netmodel::Network network_from_json(const std::string& text);

}  // namespace infloc::json_io
