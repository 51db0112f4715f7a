#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/error.hpp"

namespace repr_robust::cli {

// Bad command line or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

const std::vector<std::string>& command_names();

struct Invocation {
  std::string command;
  nlohmann::json config = nlohmann::json::object();  // user config, possibly partial
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::filesystem::path out = "out";
};

// Fills every default of the command's config; module seeds fan out from
// `seed` as derive_seed(seed, "<command>/<section>"). Unknown keys throw.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& user, std::uint64_t seed);

// Runs a command. Writes manifest.json (the resolved config), results.json
// and the command's CSVs under inv.out; returns the results document.
nlohmann::json run(const Invocation& inv);

}  // namespace repr_robust::cli
