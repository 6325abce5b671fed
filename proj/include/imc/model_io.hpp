#pragma once

#include <filesystem>
#include <string>

#include "imc/em.hpp"
#include "imc/imc.hpp"

namespace imc {

/// Models are stored as one JSON document: full-precision decimal floats,
/// explicit shapes, -inf spelled "-inf". save(load(x)) is byte-identical
/// to save(x).
void save_imc_model(const std::filesystem::path& path, const ImcModel& model);
ImcModel load_imc_model(const std::filesystem::path& path);

void save_em_model(const std::filesystem::path& path, const EmModel& model);
EmModel load_em_model(const std::filesystem::path& path);

/// "imc" or "em", read from the file without loading the rest.
std::string model_algorithm(const std::filesystem::path& path);

}  // namespace imc
