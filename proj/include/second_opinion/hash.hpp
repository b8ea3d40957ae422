#pragma once

#include <string>
#include <string_view>

namespace second_opinion {

/// Lowercase hex SHA-1 of `content`.
std::string sha1_hex(std::string_view content);

/// SHA-1 of "blob <size>\0<content>", the id git would give the file.
std::string git_blob_id(std::string_view content);

}  // namespace second_opinion
