#pragma once

// Internal helpers shared by the serialization TUs. Not installed.

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include <nlohmann/json.hpp>

#include "obsflow/dynsys.hpp"
#include "obsflow/io.hpp"
#include "obsflow/neuralop.hpp"

namespace obsflow::detail {

using json = nlohmann::json;

/// Throws ConfigError when `obj` holds a key outside `allowed`. `where`
/// names the enclosing object for the message.
void require_keys(const json& obj, std::initializer_list<const char*> allowed,
                  const char* where);

/// Fetches obj[key], throwing ConfigError with context when absent.
const json& require(const json& obj, const char* key, const char* where);

std::uint64_t fnv1a(std::string_view bytes);

json system_to_json(const dynsys::SystemSpec& s);
dynsys::SystemSpec system_from_json(const json& j, const char* where);

json task_to_json(const data::TaskSpec& t);
data::TaskSpec task_from_json(const json& j, const char* where);

json model_to_json(const nop::ModelConfig& c);
nop::ModelConfig model_from_json(const json& j, const char* where);

}  // namespace obsflow::detail
