#pragma once

#include <string>
#include <string_view>

namespace casegpt::detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

ParsedUrl parse_url(std::string_view url);

}  // namespace casegpt::detail
