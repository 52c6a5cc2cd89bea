#pragma once

#include <string>
#include <string_view>

namespace stpp {

/// Writes content to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partially written file.
void atomic_write_text(const std::string& path, std::string_view content);

std::string read_text(const std::string& path);

}  // namespace stpp
