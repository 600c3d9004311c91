#pragma once

#include <string>

#include "tenscirc/circuit.hpp"
#include "tenscirc/fold.hpp"

namespace tenscirc {

/// Self-describing JSON container: header (format version, variable count,
/// families, nomenclature), layer table, and base64-encoded little-endian
/// float64 parameter blobs. Round trips are bit-exact.
void save_circuit(const Circuit& c, const std::string& path);
Circuit load_circuit(const std::string& path);

/// Same container plus the fold group/routing tables.
void save_folded(const FoldedCircuit& fc, const std::string& path);
FoldedCircuit load_folded(const std::string& path);

std::string circuit_to_json(const Circuit& c);
Circuit circuit_from_json(const std::string& text);

}  // namespace tenscirc
