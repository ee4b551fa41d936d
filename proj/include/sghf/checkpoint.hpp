#pragma once

#include <filesystem>
#include <string>

#include "sghf/nn.hpp"

namespace sghf {

// Checkpoints are JSON maps: name -> {shape, trainable, row-major data}.
// The `kind` tag guards against loading a checkpoint into the wrong
// network. Double values round-trip exactly.
std::string params_to_json(const ParamStore& ps, const std::string& kind);

// Copies values into the already-built store; every registered tensor
// must be present with a matching shape.
void params_from_json(ParamStore& ps, const std::string& text, const std::string& kind);

void save_params(const ParamStore& ps, const std::filesystem::path& file, const std::string& kind);
void load_params(ParamStore& ps, const std::filesystem::path& file, const std::string& kind);

// SHA-256 over the raw bytes of every tensor in name order; detects any
// parameter mutation.
std::string params_checksum(const ParamStore& ps);

}  // namespace sghf
