#pragma once

#include "wmlab/model.hpp"
#include "wmlab/noiser.hpp"
#include "wmlab/payload.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace wmlab {

inline constexpr int kBenchSchemaVersion = 1;

enum class PayloadMode { RawBits, UuidEcc };

std::string_view payload_mode_name(PayloadMode m);
PayloadMode payload_mode_from_name(std::string_view name);

struct BenchOptions {
    std::vector<NoiseKind> noises{kSuiteKinds.begin(), kSuiteKinds.end()};
    NoiseRanges ranges;
    PayloadMode mode = PayloadMode::RawBits;
    EccConfig ecc;
    std::uint64_t seed = 0;
    int histogram_bins = 20;
};

void to_json(nlohmann::json& j, const BenchOptions& o);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, BenchOptions& o);

struct ImageScore {
    std::string name;
    double psnr = 0.0; // +inf when the watermark left the 8-bit image unchanged
    double ssim = 0.0;
};

struct NoiseRow {
    std::string noise; // "Clean" or a noise name
    double bit_accuracy = 0.0;              // percent
    std::optional<double> success_rate;     // percent, uuid-ecc mode only
};

struct BenchReport {
    int schema_version = kBenchSchemaVersion;
    std::string dataset_id;
    std::string payload_mode;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<ImageScore> images;
    std::vector<NoiseRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    const NoiseRow* row(std::string_view noise) const;
};

void to_json(nlohmann::json& j, const BenchReport& r);
void from_json(const nlohmann::json& j, BenchReport& r);

class BenchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Embeds a per-image payload, scores fidelity on the 8-bit watermarked image,
/// then decodes it clean and under one seeded draw of every requested noise.
BenchReport evaluate(const WatermarkModel& model, const std::vector<NamedImage>& images, const BenchOptions& opts,
                     const std::string& dataset_id = "");
/// Throws BenchError when `dir` holds no readable image.
BenchReport evaluate(const WatermarkModel& model, const std::filesystem::path& dir, const BenchOptions& opts,
                     std::ostream* warnings = nullptr);

/// Percentage of entries whose ECC decode succeeds and equals the truth.
double success_rate(const std::vector<WatermarkBits>& decoded, const std::vector<Uuid>& truth,
                    const EccConfig& cfg = {});

enum class ReportFormat { TableText, Structured, Plots };

/// Writes report.txt, report.json and psnr_hist.png / ssim_hist.png into `dir`
/// for the requested formats; returns the files written.
std::vector<std::filesystem::path> emit_report(const BenchReport& report, const std::filesystem::path& dir,
                                               const std::vector<ReportFormat>& formats,
                                               int histogram_bins = 20);

std::string format_table(const BenchReport& report);

} // namespace wmlab
