#include "stepconf/digest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "stepconf/errors.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

std::string content_digest(std::string_view bytes) {
    std::uint64_t h = fnv1a64(bytes);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return content_digest(ss.str());
}

}  // namespace stepconf
