#pragma once

#include <string>

#include "ranmtl/scenario.hpp"

namespace ranmtl {

// On-disk dataset format: one JSON document, schema-versioned, config echoed
// verbatim. Writing twice from the same config and seed produces identical
// bytes.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const std::string& text);

// Directory layout: one self-describing container per node (node_CC_BB.json),
// each echoing the full config so a single file identifies its provenance.
// Loading validates that every node carries the same config echo.
void save_dataset_dir(const Dataset& ds, const std::string& dir);
Dataset load_dataset_dir(const std::string& dir);

// Loads either layout: a directory of per-node containers or a single file.
Dataset load_dataset_any(const std::string& path);

}  // namespace ranmtl
