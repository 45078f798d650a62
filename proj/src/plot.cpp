#include "hfcr/plot.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

namespace hfcr {

namespace {

std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double to_number(const std::string& s, const std::filesystem::path& file, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw PlotError(file.string() + ":" + std::to_string(lineno) + ": expected a number, got '" + s + "'");
}

struct LossLog {
    std::vector<double> loss;
    // epoch → (sum, count, min, max, lr)
    std::map<std::size_t, std::array<double, 5>> epochs;
};

struct AblationRow {
    std::string axis, variant, mode, formatted;
    double mean, ci95;
    std::size_t episodes;
};

using Parsed = std::variant<LossLog, std::vector<AblationRow>>;

Parsed parse_input(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw PlotError("cannot read " + file.string());
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        if (!l.empty()) lines.push_back(l);
    }
    if (lines.empty()) throw PlotError(file.string() + ": empty input");
    if (lines.size() == 1) throw PlotError(file.string() + ": header only, no records");

    if (lines[0] == "epoch,episode,loss,lr") {
        LossLog log;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto cells = split_csv(lines[i]);
            if (cells.size() != 4) throw PlotError(file.string() + ":" + std::to_string(i + 1) + ": expected 4 fields");
            const double epoch = to_number(cells[0], file, i + 1);
            to_number(cells[1], file, i + 1);
            const double loss = to_number(cells[2], file, i + 1);
            const double lr = to_number(cells[3], file, i + 1);
            if (epoch < 0 || epoch != std::floor(epoch)) throw PlotError(file.string() + ": bad epoch '" + cells[0] + "'");
            log.loss.push_back(loss);
            auto [it, fresh] = log.epochs.try_emplace(static_cast<std::size_t>(epoch), std::array<double, 5>{0, 0, loss, loss, lr});
            auto& e = it->second;
            e[0] += loss;
            e[1] += 1;
            e[2] = std::min(e[2], loss);
            e[3] = std::max(e[3], loss);
        }
        return log;
    }
    if (lines[0] == ablation_csv_header) {
        std::vector<AblationRow> rows;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto c = split_csv(lines[i]);
            if (c.size() != 7) throw PlotError(file.string() + ":" + std::to_string(i + 1) + ": expected 7 fields");
            rows.push_back({c[0], c[1], c[2], c[6], to_number(c[3], file, i + 1), to_number(c[4], file, i + 1),
                            static_cast<std::size_t>(to_number(c[5], file, i + 1))});
        }
        return rows;
    }
    throw PlotError(file.string() + ": unrecognized header '" + lines[0] + "'");
}

const cv::Scalar kInk(40, 40, 40), kGrid(225, 225, 225), kLine(180, 110, 30), kMean(30, 60, 200), kBar(170, 130, 70);

// Hershey fonts are ASCII only.
std::string ascii(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.compare(i, 3, "\u2192") == 0) {
            out += "->";
            i += 2;
        } else if (s.compare(i, 2, "\u00b1") == 0) {
            out += "+-";
            i += 1;
        } else {
            out += static_cast<unsigned char>(s[i]) < 0x80 ? s[i] : '?';
        }
    }
    return out;
}

void put(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
    cv::putText(img, ascii(s), at, cv::FONT_HERSHEY_SIMPLEX, scale, kInk, 1, cv::LINE_AA);
}

std::string fmt(double v, const char* f = "%.3g") {
    char buf[32];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void render_loss(const LossLog& log, const std::filesystem::path& png) {
    const int W = 800, H = 480, L = 70, R = 20, T = 40, B = 50;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    double lo = *std::min_element(log.loss.begin(), log.loss.end());
    double hi = *std::max_element(log.loss.begin(), log.loss.end());
    if (hi - lo < 1e-12) hi = lo + 1;
    const double n = static_cast<double>(std::max<std::size_t>(log.loss.size() - 1, 1));
    auto px = [&](double i) { return L + static_cast<int>(std::lround(i / n * (W - L - R))); };
    auto py = [&](double v) { return T + static_cast<int>(std::lround((hi - v) / (hi - lo) * (H - T - B))); };
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4;
        cv::line(img, {L, py(v)}, {W - R, py(v)}, kGrid, 1);
        put(img, fmt(v), {5, py(v) + 4});
    }
    cv::rectangle(img, {L, T}, {W - R, H - B}, kInk, 1);
    for (std::size_t i = 1; i < log.loss.size(); ++i) {
        cv::line(img, {px(static_cast<double>(i - 1)), py(log.loss[i - 1])}, {px(static_cast<double>(i)), py(log.loss[i])},
                 kLine, 1, cv::LINE_AA);
    }
    // Per-epoch mean, drawn at the epoch's last episode.
    std::size_t seen = 0;
    cv::Point prev(-1, -1);
    for (const auto& [epoch, e] : log.epochs) {
        seen += static_cast<std::size_t>(e[1]);
        const cv::Point p(px(static_cast<double>(seen - 1)), py(e[0] / e[1]));
        if (prev.x >= 0) cv::line(img, prev, p, kMean, 2, cv::LINE_AA);
        prev = p;
    }
    put(img, "training loss per episode (thin) and epoch mean (thick)", {L, 25}, 0.5);
    put(img, "episode", {W / 2 - 30, H - 15});
    put(img, "0", {L - 4, H - B + 18});
    put(img, std::to_string(log.loss.size() - 1), {W - R - 30, H - B + 18});
    if (!cv::imwrite(png.string(), img)) throw std::runtime_error("cannot write " + png.string());
}

void render_bars(const std::vector<AblationRow>& rows, const std::filesystem::path& png) {
    const int W = std::max(480, 120 * static_cast<int>(rows.size()) + 100), H = 480, L = 60, R = 20, T = 40, B = 90;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    auto py = [&](double v) { return T + static_cast<int>(std::lround((100.0 - v) / 100.0 * (H - T - B))); };
    for (int k = 0; k <= 5; ++k) {
        const double v = 20.0 * k;
        cv::line(img, {L, py(v)}, {W - R, py(v)}, kGrid, 1);
        put(img, fmt(v, "%.0f"), {15, py(v) + 4});
    }
    const int slot = (W - L - R) / static_cast<int>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int x0 = L + static_cast<int>(i) * slot + slot / 5, x1 = L + static_cast<int>(i + 1) * slot - slot / 5;
        const double m = std::clamp(rows[i].mean, 0.0, 100.0);
        cv::rectangle(img, {x0, py(m)}, {x1, py(0)}, kBar, cv::FILLED);
        const int xc = (x0 + x1) / 2;
        cv::line(img, {xc, py(std::min(100.0, m + rows[i].ci95))}, {xc, py(std::max(0.0, m - rows[i].ci95))}, kInk, 1);
        put(img, rows[i].variant, {x0 - 10, H - B + 20}, 0.42);
        put(img, rows[i].axis, {x0 - 10, H - B + 40}, 0.38);
        put(img, fmt(rows[i].mean, "%.2f"), {x0, py(m) - 6}, 0.42);
    }
    cv::rectangle(img, {L, T}, {W - R, H - B}, kInk, 1);
    put(img, "novel-class accuracy (%) with 95% confidence interval", {L, 25}, 0.5);
    if (!cv::imwrite(png.string(), img)) throw std::runtime_error("cannot write " + png.string());
}

std::string loss_table(const LossLog& log) {
    std::vector<std::vector<std::string>> rows{{"epoch", "episodes", "mean_loss", "min_loss", "max_loss", "lr"}};
    for (const auto& [epoch, e] : log.epochs) {
        rows.push_back({std::to_string(epoch), fmt(e[1], "%.0f"), fmt(e[0] / e[1], "%.6f"), fmt(e[2], "%.6f"),
                        fmt(e[3], "%.6f"), fmt(e[4], "%.6g")});
    }
    return aligned_table(rows);
}

std::string ablation_table(const std::vector<AblationRow>& rs) {
    std::vector<std::vector<std::string>> rows{{"axis", "variant", "mode", "accuracy", "episodes"}};
    for (const auto& r : rs) rows.push_back({r.axis, r.variant, r.mode, r.formatted, std::to_string(r.episodes)});
    return aligned_table(rows);
}

}  // namespace

std::string aligned_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        if (width.size() < r.size()) width.resize(r.size(), 0);
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], display_width(r[c]));
    }
    std::string out;
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            line += r[c];
            if (c + 1 < r.size()) line += std::string(width[c] - display_width(r[c]) + 2, ' ');
        }
        out += line + "\n";
    }
    return out;
}

std::vector<PlotOutput> plot_files(std::span<const std::filesystem::path> inputs, const std::filesystem::path& out_dir) {
    if (inputs.empty()) throw PlotError("plot: no input files");
    std::vector<Parsed> parsed;
    for (const auto& f : inputs) parsed.push_back(parse_input(f));
    std::filesystem::create_directories(out_dir);
    std::vector<PlotOutput> outputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::string stem = inputs[i].stem().string();
        PlotOutput o{out_dir / (stem + ".png"), out_dir / (stem + ".txt")};
        std::string table;
        if (const auto* log = std::get_if<LossLog>(&parsed[i])) {
            render_loss(*log, o.image);
            table = loss_table(*log);
        } else {
            const auto& rows = std::get<std::vector<AblationRow>>(parsed[i]);
            render_bars(rows, o.image);
            table = ablation_table(rows);
        }
        std::ofstream(o.table, std::ios::trunc) << table;
        outputs.push_back(o);
    }
    return outputs;
}

}  // namespace hfcr
