#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace dcvae {

// Entry point of the dcvae tool. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// `key = value` lines, `#` comments, blank lines ignored.
std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text, const std::string& origin = "<memory>");

}  // namespace dcvae
