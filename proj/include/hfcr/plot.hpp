#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfcr {

class PlotError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Left-aligned columns separated by two spaces; the first row is the header.
std::string aligned_table(const std::vector<std::vector<std::string>>& rows);

inline constexpr const char* ablation_csv_header = "axis,variant,mode,mean,ci95,episodes,formatted";

struct PlotOutput {
    std::filesystem::path image;
    std::filesystem::path table;
};

/// Renders each input next to `out_dir`/<stem>.png and <stem>.txt. Training logs
/// (epoch,episode,loss,lr) become a loss curve; ablation reports become a bar
/// chart with ci95 whiskers. Every input is parsed before anything is written.
std::vector<PlotOutput> plot_files(std::span<const std::filesystem::path> inputs, const std::filesystem::path& out_dir);

}  // namespace hfcr
