#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace stepconf {

/// FNV-1a 64-bit content digest, rendered as 16 hex chars. Used for manifest
/// integrity checks and stage cache keys.
std::string content_digest(std::string_view bytes);

/// Digest of a file's bytes; throws SinkFailure if the file cannot be read.
std::string file_digest(const std::string& path);

}  // namespace stepconf
