#pragma once

#include <string>

#include "attrsim/model.hpp"

namespace attrsim {

// Versioned JSON container: config, vocabulary, flat weight arrays. Doubles
// round-trip bit-exactly through the serializer.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace attrsim
