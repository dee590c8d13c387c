#pragma once

#include <span>
#include <string_view>
#include <utility>

namespace tps::prompts::assets {

using Entry = std::pair<std::string_view, std::string_view>;

/// Generated at configure time from assets/prompts/*.txt.
std::span<const Entry> prompt_table();

}  // namespace tps::prompts::assets
