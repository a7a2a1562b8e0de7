#include "wmlab/bench.hpp"

#include "wmlab/metrics.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace wmlab {

std::string_view payload_mode_name(PayloadMode m)
{
    return m == PayloadMode::RawBits ? "raw-bits" : "uuid-ecc";
}

PayloadMode payload_mode_from_name(std::string_view name)
{
    if (name == "raw-bits") return PayloadMode::RawBits;
    if (name == "uuid-ecc") return PayloadMode::UuidEcc;
    throw std::invalid_argument("unknown payload mode: " + std::string(name));
}

void to_json(nlohmann::json& j, const BenchOptions& o)
{
    nlohmann::json names = nlohmann::json::array();
    for (NoiseKind k : o.noises) names.push_back(noise_name(k));
    j = nlohmann::json{{"noises", names},
                       {"ranges", o.ranges},
                       {"payload_mode", payload_mode_name(o.mode)},
                       {"ecc",
                        {{"total_bits", o.ecc.total_bits},
                         {"data_bits", o.ecc.data_bits},
                         {"field_order", o.ecc.field_order},
                         {"t", o.ecc.t},
                         {"pad_bits", o.ecc.pad_bits}}},
                       {"seed", o.seed},
                       {"histogram_bins", o.histogram_bins}};
}

void from_json(const nlohmann::json& j, BenchOptions& o)
{
    if (!j.is_object()) throw std::invalid_argument("bench options must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (key != "noises" && key != "ranges" && key != "payload_mode" && key != "ecc" && key != "seed" &&
            key != "histogram_bins")
            throw std::invalid_argument("unknown bench option: " + key);
    if (j.contains("noises")) {
        o.noises.clear();
        for (const auto& n : j.at("noises")) {
            const auto k = noise_from_name(n.get<std::string>());
            if (!k) throw std::invalid_argument("unknown noise: " + n.get<std::string>());
            o.noises.push_back(*k);
        }
    }
    if (j.contains("ranges")) o.ranges = j.at("ranges").get<NoiseRanges>();
    if (j.contains("payload_mode")) o.mode = payload_mode_from_name(j.at("payload_mode").get<std::string>());
    if (j.contains("ecc")) {
        const auto& e = j.at("ecc");
        o.ecc.total_bits = e.value("total_bits", o.ecc.total_bits);
        o.ecc.data_bits = e.value("data_bits", o.ecc.data_bits);
        o.ecc.field_order = e.value("field_order", o.ecc.field_order);
        o.ecc.t = e.value("t", o.ecc.t);
        o.ecc.pad_bits = e.value("pad_bits", o.ecc.pad_bits);
        o.ecc.validate();
    }
    if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("histogram_bins")) o.histogram_bins = j.at("histogram_bins").get<int>();
    if (o.histogram_bins < 1) throw std::invalid_argument("histogram_bins must be positive");
}

const NoiseRow* BenchReport::row(std::string_view noise) const
{
    for (const NoiseRow& r : rows)
        if (r.noise == noise) return &r;
    return nullptr;
}

namespace {

// JSON has no infinity; an unchanged image is written as null
nlohmann::json number_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_or_inf(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

} // namespace

void to_json(nlohmann::json& j, const BenchReport& r)
{
    nlohmann::json images = nlohmann::json::array();
    for (const ImageScore& s : r.images)
        images.push_back({{"name", s.name}, {"psnr", number_or_null(s.psnr)}, {"ssim", s.ssim}});
    nlohmann::json rows = nlohmann::json::array();
    for (const NoiseRow& row : r.rows) {
        nlohmann::json o{{"noise", row.noise}, {"bit_accuracy", row.bit_accuracy}};
        if (row.success_rate) o["success_rate"] = *row.success_rate;
        rows.push_back(o);
    }
    j = nlohmann::json{{"schema_version", r.schema_version},
                       {"dataset_id", r.dataset_id},
                       {"payload_mode", r.payload_mode},
                       {"seed", r.seed},
                       {"config", r.config},
                       {"images", images},
                       {"rows", rows},
                       {"mean_psnr", number_or_null(r.mean_psnr)},
                       {"mean_ssim", r.mean_ssim}};
}

void from_json(const nlohmann::json& j, BenchReport& r)
{
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kBenchSchemaVersion)
        throw std::invalid_argument("unsupported report schema version " + std::to_string(r.schema_version));
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.payload_mode = j.at("payload_mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    r.images.clear();
    for (const auto& s : j.at("images"))
        r.images.push_back({s.at("name").get<std::string>(), number_or_inf(s.at("psnr")), s.at("ssim").get<double>()});
    r.rows.clear();
    for (const auto& o : j.at("rows")) {
        NoiseRow row{o.at("noise").get<std::string>(), o.at("bit_accuracy").get<double>(), std::nullopt};
        if (o.contains("success_rate")) row.success_rate = o.at("success_rate").get<double>();
        r.rows.push_back(row);
    }
    r.mean_psnr = number_or_inf(j.at("mean_psnr"));
    r.mean_ssim = j.at("mean_ssim").get<double>();
}

double success_rate(const std::vector<WatermarkBits>& decoded, const std::vector<Uuid>& truth, const EccConfig& cfg)
{
    if (decoded.size() != truth.size()) throw std::invalid_argument("success_rate: list sizes differ");
    if (decoded.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        const UuidDecodeResult r = decode_uuid(decoded[i], cfg);
        if (const auto* d = std::get_if<UuidDecode>(&r); d && d->payload == truth[i]) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(decoded.size());
}

namespace {

struct ImageOutcome {
    ImageScore score;
    std::vector<double> accuracy;      // per row
    std::vector<WatermarkBits> decoded; // per row
    Uuid truth;
};

ImageOutcome evaluate_one(const WatermarkModel& model, const NamedImage& img, std::size_t index,
                          const BenchOptions& opts)
{
    const std::uint64_t seed = mix_seed(opts.seed, index);
    ImageOutcome out;
    WatermarkBits w;
    if (opts.mode == PayloadMode::UuidEcc) {
        out.truth = Uuid::random(seed);
        w = encode_uuid(out.truth, opts.ecc);
    } else {
        w = random_watermark(static_cast<std::size_t>(model.config().bit_length), seed);
    }
    const ImageBuffer marked = quantize8(model.encode(img.image, w).watermarked);
    out.score = {img.name, psnr(img.image, marked), ssim(img.image, marked)};

    auto record = [&](const ImageBuffer& y) {
        const WatermarkBits got = WatermarkBits::from_probabilities(model.decode(y));
        out.accuracy.push_back(bit_accuracy(got, w));
        out.decoded.push_back(got);
    };
    record(marked);
    for (NoiseKind k : opts.noises) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k) + 1));
        const NoiseSpec spec = sample_spec(k, opts.ranges, NoiseMode::EvalExact, rng);
        record(apply_noise(spec, marked, rng));
    }
    return out;
}

} // namespace

BenchReport evaluate(const WatermarkModel& model, const std::vector<NamedImage>& images, const BenchOptions& opts,
                     const std::string& dataset_id)
{
    if (images.empty()) throw BenchError("no readable images to evaluate");
    if (opts.mode == PayloadMode::UuidEcc) {
        opts.ecc.validate();
        if (model.config().bit_length != opts.ecc.total_bits)
            throw std::invalid_argument("uuid-ecc mode needs a " + std::to_string(opts.ecc.total_bits) +
                                        "-bit model, checkpoint has " + std::to_string(model.config().bit_length));
    }

    std::vector<ImageOutcome> outcomes(images.size());
    const long count = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i) outcomes[i] = evaluate_one(model, images[i], static_cast<std::size_t>(i), opts);

    BenchReport report;
    report.dataset_id = dataset_id;
    report.payload_mode = std::string(payload_mode_name(opts.mode));
    report.seed = opts.seed;
    report.config = {{"model", model.config()}, {"bench", opts}};

    std::vector<std::string> names{"Clean"};
    for (NoiseKind k : opts.noises) names.emplace_back(noise_name(k));
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const ImageOutcome& o : outcomes) {
        report.images.push_back(o.score);
        psnr_sum += o.score.psnr;
        ssim_sum += o.score.ssim;
    }
    const double n = static_cast<double>(outcomes.size());
    report.mean_psnr = psnr_sum / n;
    report.mean_ssim = ssim_sum / n;
    for (std::size_t r = 0; r < names.size(); ++r) {
        NoiseRow row{names[r], 0.0, std::nullopt};
        for (const ImageOutcome& o : outcomes) row.bit_accuracy += o.accuracy[r];
        row.bit_accuracy = 100.0 * row.bit_accuracy / n;
        if (opts.mode == PayloadMode::UuidEcc) {
            std::vector<WatermarkBits> decoded;
            std::vector<Uuid> truth;
            for (const ImageOutcome& o : outcomes) {
                decoded.push_back(o.decoded[r]);
                truth.push_back(o.truth);
            }
            row.success_rate = success_rate(decoded, truth, opts.ecc);
        }
        report.rows.push_back(row);
    }
    return report;
}

BenchReport evaluate(const WatermarkModel& model, const std::filesystem::path& dir, const BenchOptions& opts,
                     std::ostream* warnings)
{
    std::vector<NamedImage> images = load_image_dir(dir, warnings);
    if (images.empty()) throw BenchError("no readable images in " + dir.string());
    const std::filesystem::path canon = std::filesystem::weakly_canonical(dir);
    const std::string id = canon.filename().empty() ? canon.parent_path().filename().string() : canon.filename().string();
    return evaluate(model, images, opts, id);
}

std::string format_table(const BenchReport& report)
{
    std::ostringstream os;
    os << std::fixed;
    os << "dataset " << report.dataset_id << "  mode " << report.payload_mode << "  seed " << report.seed << "  images "
       << report.images.size() << '\n';
    os << "PSNR " << std::setprecision(2) << report.mean_psnr << " dB  SSIM " << std::setprecision(4)
       << report.mean_ssim << '\n';
    const bool ecc = !report.rows.empty() && report.rows.front().success_rate.has_value();
    os << std::left << std::setw(20) << "noise" << std::right << std::setw(14) << "bit acc (%)";
    if (ecc) os << std::setw(14) << "success (%)";
    os << '\n';
    for (const NoiseRow& row : report.rows) {
        os << std::left << std::setw(20) << row.noise << std::right << std::setw(14) << std::setprecision(2)
           << row.bit_accuracy;
        if (row.success_rate) os << std::setw(14) << *row.success_rate;
        os << '\n';
    }
    return os.str();
}

namespace {

void write_histogram(const std::vector<double>& values, const std::string& title, int bins,
                     const std::filesystem::path& path)
{
    std::vector<double> finite;
    for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
    double lo = 0.0, hi = 1.0;
    if (!finite.empty()) {
        lo = *std::min_element(finite.begin(), finite.end());
        hi = *std::max_element(finite.begin(), finite.end());
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    std::vector<int> counts(bins, 0);
    for (double v : values) {
        // infinite PSNR lands in the top bin
        const double f = std::isfinite(v) ? (v - lo) / (hi - lo) : 1.0;
        ++counts[std::clamp(static_cast<int>(f * bins), 0, bins - 1)];
    }
    const int width = 640, height = 400, left = 50, right = 20, top = 40, bottom = 50;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
    const double bw = static_cast<double>(width - left - right) / bins;
    for (int b = 0; b < bins; ++b) {
        const int h = static_cast<int>(std::lround(static_cast<double>(counts[b]) / peak * (height - top - bottom)));
        const cv::Point p0(left + static_cast<int>(b * bw) + 1, height - bottom - h);
        const cv::Point p1(left + static_cast<int>((b + 1) * bw) - 1, height - bottom);
        cv::rectangle(canvas, p0, p1, cv::Scalar(180, 110, 40), cv::FILLED);
    }
    cv::line(canvas, {left, height - bottom}, {width - right, height - bottom}, cv::Scalar(0, 0, 0));
    cv::line(canvas, {left, top}, {left, height - bottom}, cv::Scalar(0, 0, 0));
    auto label = [](double v) {
        std::ostringstream os;
        os << std::setprecision(4) << v;
        return os.str();
    };
    cv::putText(canvas, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, label(lo), {left, height - bottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
    cv::putText(canvas, label(hi), {width - right - 60, height - bottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0));
    cv::putText(canvas, std::to_string(peak), {5, top + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
    if (!cv::imwrite(path.string(), canvas)) throw std::runtime_error("cannot write " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

} // namespace

std::vector<std::filesystem::path> emit_report(const BenchReport& report, const std::filesystem::path& dir,
                                               const std::vector<ReportFormat>& formats, int histogram_bins)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (ReportFormat f : formats) {
        switch (f) {
        case ReportFormat::TableText:
            write_text(dir / "report.txt", format_table(report));
            written.push_back(dir / "report.txt");
            break;
        case ReportFormat::Structured:
            write_text(dir / "report.json", nlohmann::json(report).dump(2) + "\n");
            written.push_back(dir / "report.json");
            break;
        case ReportFormat::Plots: {
            std::vector<double> p, s;
            for (const ImageScore& im : report.images) {
                p.push_back(im.psnr);
                s.push_back(im.ssim);
            }
            write_histogram(p, "PSNR (dB) " + report.dataset_id, histogram_bins, dir / "psnr_hist.png");
            write_histogram(s, "SSIM " + report.dataset_id, histogram_bins, dir / "ssim_hist.png");
            written.push_back(dir / "psnr_hist.png");
            written.push_back(dir / "ssim_hist.png");
            break;
        }
        }
    }
    return written;
}

} // namespace wmlab
