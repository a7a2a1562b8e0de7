#include "wmlab/attacks.hpp"
#include "wmlab/bench.hpp"
#include "wmlab/metrics.hpp"
#include "wmlab/registry.hpp"
#include "wmlab/synth.hpp"
#include "wmlab/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wmlab;

namespace {

enum Exit {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kMissingFile = 3,
    kInvalidInput = 4,
    kCheckpoint = 5,
    kBadData = 6,
    kDiverged = 7,
    kRegistry = 8,
    kDuplicate = 9,
    kFingerprintMismatch = 10,
    kNotFound = 11,
    kDecodeFailed = 12,
};

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Duplicate : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void fail_line(const char* code, const std::string& message)
{
    std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

fs::path require_file(const fs::path& p, const char* what)
{
    if (!fs::exists(p)) throw MissingFile(std::string(what) + " not found: " + p.string());
    return p;
}

/// Relative checkpoint paths missing from the cwd fall back to $WMLAB_CKPT_DIR.
fs::path resolve_ckpt(const fs::path& p)
{
    if (fs::exists(p) || p.is_absolute()) return require_file(p, "checkpoint");
    if (const char* dir = std::getenv("WMLAB_CKPT_DIR"); dir && *dir) {
        const fs::path alt = fs::path(dir) / p;
        if (fs::exists(alt)) return alt;
    }
    return require_file(p, "checkpoint");
}

json read_json_file(const fs::path& p, const char* what)
{
    require_file(p, what);
    std::ifstream f(p);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string(what) + " " + p.string() + " is not valid JSON: " + e.what());
    }
}

void write_json_file(const fs::path& p, const json& j)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << j.dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write " + p.string());
}

fs::path sidecar(const fs::path& out, const std::string& suffix)
{
    return fs::path(out.string() + suffix);
}

// Leaves of `j` as "a.b.c" -> value.
void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out)
{
    if (j.is_object() && !j.empty()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out[prefix] = j;
    }
}

/// Applies layers in order and logs which layer decided each non-default leaf.
TrainConfig resolve_config(const std::vector<std::pair<std::string, json>>& layers, std::ostream& log)
{
    TrainConfig cfg;
    std::map<std::string, json> before;
    flatten(json(cfg), "", before);
    std::map<std::string, std::string> source;
    for (const auto& [name, layer] : layers) {
        from_json(layer, cfg);
        std::map<std::string, json> now;
        flatten(json(cfg), "", now);
        for (const auto& [k, v] : now)
            if (before[k] != v) source[k] = name;
        before = std::move(now);
    }
    for (const auto& [k, src] : source) log << "config: " << k << " = " << before[k].dump() << " (" << src << ")\n";
    cfg.validate();
    return cfg;
}

Uuid parse_uuid(const std::string& s)
{
    try {
        return Uuid::parse(s);
    } catch (const std::exception& e) {
        throw std::invalid_argument("bad --uuid '" + s + "': " + e.what());
    }
}

int cmd_train(const fs::path& config_path, const fs::path& data, const fs::path& out,
              const std::optional<fs::path>& resume_from, const json& flags, const fs::path& log_path)
{
    std::vector<std::pair<std::string, json>> layers;
    std::optional<Checkpoint> resume;
    if (resume_from) {
        resume = load_checkpoint(resolve_ckpt(*resume_from));
        layers.emplace_back("checkpoint", resume->meta.at("train_config"));
    }
    if (!config_path.empty()) layers.emplace_back("file", read_json_file(config_path, "config"));
    if (!flags.empty()) layers.emplace_back("flag", flags);
    TrainConfig cfg = resolve_config(layers, std::cerr);
    if (resume) {
        if (json(cfg.model) != json(resume->config))
            throw std::invalid_argument("model settings differ from the checkpoint being resumed");
        // a resumed run continues past the stage it was stopped before
        if (cfg.stop_before && !flags.contains("stop_before") &&
            !(layers.size() > 1 && layers[1].second.contains("stop_before"))) {
            cfg.stop_before.reset();
            std::cerr << "config: stop_before = null (cleared on resume)\n";
        }
    }

    require_file(data, "data directory");
    std::vector<ImageBuffer> images = load_training_images(data, cfg.model.working_resolution, &std::cerr);
    if (images.empty()) throw BenchError("no readable training images in " + data.string());

    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_json_file(sidecar(out, ".config.json"), cfg);
    Trainer trainer(cfg, std::move(images));
    if (resume) trainer.resume(*resume);
    const fs::path metrics = log_path.empty() ? sidecar(out, ".metrics.jsonl") : log_path;
    std::ofstream log(metrics, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + metrics.string());
    const TrainResult r = trainer.run(out, &log, &std::cerr);
    std::cout << json{{"checkpoint", out.string()},
                      {"step", r.state.step},
                      {"stage", stage_name(r.state.stage)},
                      {"stopped_early", r.stopped_early}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_embed(const fs::path& ckpt, const fs::path& in, const std::string& uuid_text, const fs::path& out,
              int jpeg_quality)
{
    const Uuid id = parse_uuid(uuid_text);
    const WatermarkModel model = load_model(resolve_ckpt(ckpt));
    const ImageBuffer x = load_image(require_file(in, "input image"));
    const int l = model.config().bit_length;
    const WatermarkBits w = registry_watermark(id, l);
    if (!uses_ecc(l))
        std::cerr << "warning: " << l << "-bit model: embedding the first " << l
                  << " UUID bits without error correction\n";
    const SaveOptions opts = options_for_path(out, jpeg_quality);
    if (opts.format == ImageFormat::Jpeg)
        std::cerr << "warning: saving as JPEG is lossy and degrades the watermark; prefer PNG\n";
    const EncodeResult r = model.encode(x, w);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_image(r.watermarked, out, opts);
    const ImageBuffer saved = load_image(out);
    write_json_file(sidecar(out, ".config.json"), json{{"checkpoint", ckpt.string()},
                                                       {"model", model.config()},
                                                       {"uuid", id.str()},
                                                       {"payload_mode", uses_ecc(l) ? "uuid-ecc" : "raw-bits"},
                                                       {"payload", w.to_hex()},
                                                       {"jpeg_quality", jpeg_quality}});
    std::cout << json{{"out", out.string()},
                      {"uuid", id.str()},
                      {"payload", w.to_hex()},
                      {"psnr", psnr(x, saved)}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_extract(const fs::path& ckpt, const fs::path& in, bool ecc)
{
    const WatermarkModel model = load_model(resolve_ckpt(ckpt));
    const ImageBuffer y = load_image(require_file(in, "input image"));
    const std::vector<double> p = model.decode(y);
    const WatermarkBits bits = WatermarkBits::from_probabilities(p);
    json out{{"bits", bits.to_hex()}, {"length", bits.size()}};
    if (ecc) {
        if (!uses_ecc(model.config().bit_length))
            throw std::invalid_argument("--ecc needs a 256-bit model; checkpoint has " +
                                        std::to_string(model.config().bit_length) + " bits");
        const UuidDecodeResult d = decode_uuid(bits);
        if (const auto* f = std::get_if<DecodeFailure>(&d)) {
            fail_line("decode_failed", f->reason);
            return kDecodeFailed;
        }
        const auto& ok = std::get<UuidDecode>(d);
        out["uuid"] = ok.payload.str();
        out["corrected"] = ok.corrected;
    }
    std::cout << out.dump() << '\n';
    return kOk;
}

int cmd_bench(const fs::path& ckpt, const fs::path& data, const fs::path& noises, const fs::path& report_dir,
              const std::optional<std::uint64_t>& seed, const std::string& mode)
{
    BenchOptions opts;
    if (!noises.empty()) opts = read_json_file(noises, "noise config").get<BenchOptions>();
    if (seed) opts.seed = *seed;
    if (!mode.empty()) opts.mode = payload_mode_from_name(mode);
    const WatermarkModel model = load_model(resolve_ckpt(ckpt));
    require_file(data, "data directory");
    const BenchReport report = evaluate(model, data, opts, &std::cerr);
    emit_report(report, report_dir, {ReportFormat::TableText, ReportFormat::Structured, ReportFormat::Plots},
                opts.histogram_bins);
    write_json_file(report_dir / "config.json", json{{"checkpoint", ckpt.string()},
                                                      {"data", data.string()},
                                                      {"model", model.config()},
                                                      {"bench", opts}});
    std::cout << format_table(report);
    return kOk;
}

int cmd_forge(const fs::path& ckpt, const fs::path& source, const fs::path& target, std::uint64_t seed,
              const fs::path& report)
{
    const WatermarkModel model = load_model(resolve_ckpt(ckpt));
    auto load = [](const fs::path& dir) {
        require_file(dir, "image directory");
        std::vector<ImageBuffer> out;
        for (NamedImage& n : load_image_dir(dir, &std::cerr)) out.push_back(std::move(n.image));
        if (out.empty()) throw BenchError("no readable images in " + dir.string());
        return out;
    };
    const ForgeryReport r = forgery_eval(model, load(source), load(target), seed);
    if (!report.empty()) write_json_file(report, json(r));
    std::cout << format_forgery_table(r);
    return kOk;
}

std::string read_bytes(const fs::path& p)
{
    std::ifstream f(require_file(p, "manifest"), std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json record_json(const ManifestRecord& r)
{
    char fp[17];
    std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(r.fingerprint));
    return json{{"uuid", r.uuid.str()}, {"fingerprint", fp}, {"manifest_bytes", r.manifest.size()},
                {"created_at", r.created_at}};
}

int cmd_register(const fs::path& store, const fs::path& in, const std::string& uuid_text, const fs::path& manifest,
                 const fs::path& ckpt)
{
    ManifestRecord rec;
    rec.uuid = parse_uuid(uuid_text);
    rec.fingerprint = fingerprint(load_image(require_file(in, "input image")));
    if (!manifest.empty()) rec.manifest = read_bytes(manifest);
    rec.created_at = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    int prefix = 0;
    if (!ckpt.empty()) {
        const int l = load_checkpoint(resolve_ckpt(ckpt)).config.bit_length;
        if (!uses_ecc(l)) prefix = l;
    }
    Registry reg(store);
    const RegisterStatus s = reg.register_record(rec, prefix);
    if (s != RegisterStatus::Ok) throw Duplicate(std::string(register_status_name(s)) + ": " + rec.uuid.str());
    std::cout << record_json(rec).dump() << '\n';
    return kOk;
}

int cmd_verify(const fs::path& store, const fs::path& ckpt, const fs::path& in, int threshold)
{
    const WatermarkModel model = load_model(resolve_ckpt(ckpt));
    const ImageBuffer img = load_image(require_file(in, "input image"));
    require_file(store, "registry");
    const Registry reg(store);
    const VerifyResult r = verify(img, model, reg, threshold);
    json out{{"status", verify_status_name(r.status)}, {"payload", r.payload}, {"detail", r.detail},
             {"threshold", threshold}};
    if (r.record) out["record"] = record_json(*r.record);
    if (r.distance >= 0) out["distance"] = r.distance;
    std::cout << out.dump() << '\n';
    switch (r.status) {
    case VerifyStatus::Authentic: return kOk;
    case VerifyStatus::FingerprintMismatch: return kFingerprintMismatch;
    case VerifyStatus::NotFound: return kNotFound;
    case VerifyStatus::DecodeFailed: return kDecodeFailed;
    }
    return kInternal;
}

int cmd_lookup(const fs::path& store, const std::string& uuid_text)
{
    const Uuid id = parse_uuid(uuid_text);
    require_file(store, "registry");
    const Registry reg(store);
    const auto r = reg.lookup(id);
    if (!r) {
        std::cout << json{{"status", "NotFound"}, {"uuid", id.str()}}.dump() << '\n';
        return kNotFound;
    }
    json out = record_json(*r);
    out["status"] = "Found";
    std::cout << out.dump() << '\n';
    return kOk;
}

int cmd_compact(const fs::path& store)
{
    require_file(store, "registry");
    Registry reg(store);
    const int dropped = reg.skipped_lines();
    reg.compact();
    std::cout << json{{"records", reg.size()}, {"dropped_lines", dropped}}.dump() << '\n';
    return kOk;
}

int cmd_synth(const fs::path& out, int count, int size, std::uint64_t seed)
{
    write_synthetic_set(out, count, size, size, seed);
    std::cout << json{{"out", out.string()}, {"count", count}, {"size", size}, {"seed", seed}}.dump() << '\n';
    return kOk;
}

int run(int argc, char** argv)
{
    CLI::App app{"wmlab: neural image watermarking toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train an encoder/decoder pair");
    fs::path train_config, train_data, train_out, train_log;
    std::optional<fs::path> train_resume;
    std::optional<int> train_steps, train_batch;
    std::optional<double> train_lr;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::string> train_stop;
    train->add_option("--config", train_config, "JSON config (partial files override defaults)");
    train->add_option("--data", train_data, "Directory of training images")->required();
    train->add_option("--out", train_out, "Checkpoint path to write")->required();
    train->add_option("--resume", train_resume, "Checkpoint to continue from");
    train->add_option("--log", train_log, "Metrics JSONL (default <out>.metrics.jsonl)");
    train->add_option("--steps", train_steps, "Override total_steps");
    train->add_option("--batch", train_batch, "Override batch_size");
    train->add_option("--lr", train_lr, "Override optim.lr");
    train->add_option("--seed", train_seed, "Override seed");
    train->add_option("--stop-before", train_stop, "Stop when this stage would begin");

    // embed
    auto* embed = app.add_subcommand("embed", "Embed a UUID into an image");
    fs::path embed_ckpt, embed_in, embed_out;
    std::string embed_uuid;
    int embed_quality = 95;
    embed->add_option("--ckpt", embed_ckpt, "Checkpoint")->required();
    embed->add_option("--in", embed_in, "Cover image")->required();
    embed->add_option("--uuid", embed_uuid, "UUID to embed")->required();
    embed->add_option("--out", embed_out, "Output image (PNG recommended)")->required();
    embed->add_option("--jpeg-quality", embed_quality, "Quality when --out is a JPEG")->check(CLI::Range(1, 100));

    // extract
    auto* extract = app.add_subcommand("extract", "Decode the watermark of an image");
    fs::path extract_ckpt, extract_in;
    bool extract_ecc = false;
    extract->add_option("--ckpt", extract_ckpt, "Checkpoint")->required();
    extract->add_option("--in", extract_in, "Image")->required();
    extract->add_flag("--ecc", extract_ecc, "Decode the BCH payload into a UUID");

    // bench
    auto* bench = app.add_subcommand("bench", "Evaluate fidelity and robustness on a directory");
    fs::path bench_ckpt, bench_data, bench_noises, bench_report;
    std::optional<std::uint64_t> bench_seed;
    std::string bench_mode;
    bench->add_option("--ckpt", bench_ckpt, "Checkpoint")->required();
    bench->add_option("--data", bench_data, "Image directory")->required();
    bench->add_option("--noises", bench_noises, "Bench options JSON (noises, ranges, payload_mode, seed)");
    bench->add_option("--report", bench_report, "Report directory")->required();
    bench->add_option("--seed", bench_seed, "Override seed");
    bench->add_option("--mode", bench_mode, "raw-bits or uuid-ecc")->check(CLI::IsMember({"raw-bits", "uuid-ecc"}));

    // attack forge
    auto* attack = app.add_subcommand("attack", "Attack harnesses");
    attack->require_subcommand(1);
    auto* forge = attack->add_subcommand("forge", "Residual transplant forgery");
    fs::path forge_ckpt, forge_source, forge_target, forge_report;
    std::uint64_t forge_seed = 0;
    forge->add_option("--ckpt", forge_ckpt, "Checkpoint")->required();
    forge->add_option("--source", forge_source, "Images to watermark")->required();
    forge->add_option("--target", forge_target, "Images receiving the residual")->required();
    forge->add_option("--seed", forge_seed, "Payload seed");
    forge->add_option("--report", forge_report, "Write the report as JSON");

    // registry
    auto* registry = app.add_subcommand("registry", "Fingerprint-bound UUID registry");
    registry->require_subcommand(1);
    fs::path reg_store = "registry.jsonl";
    registry->add_option("--store", reg_store, "Registry file")->capture_default_str();
    auto* reg_register = registry->add_subcommand("register", "Register a watermarked image");
    fs::path register_in, register_manifest, register_ckpt;
    std::string register_uuid;
    reg_register->add_option("--in", register_in, "Watermarked image")->required();
    reg_register->add_option("--uuid", register_uuid, "Embedded UUID")->required();
    reg_register->add_option("--manifest", register_manifest, "Opaque manifest file");
    reg_register->add_option("--ckpt", register_ckpt, "Checkpoint (enforces unique prefixes for short payloads)");
    auto* reg_verify = registry->add_subcommand("verify", "Check an image against the registry");
    fs::path verify_ckpt, verify_in;
    int verify_threshold = kDefaultMatchThreshold;
    reg_verify->add_option("--ckpt", verify_ckpt, "Checkpoint")->required();
    reg_verify->add_option("--in", verify_in, "Image")->required();
    reg_verify->add_option("--threshold", verify_threshold, "Fingerprint Hamming threshold")
        ->check(CLI::Range(0, 64))
        ->capture_default_str();
    auto* reg_lookup = registry->add_subcommand("lookup", "Print a record");
    std::string lookup_uuid;
    reg_lookup->add_option("--uuid", lookup_uuid, "UUID")->required();
    auto* reg_compact = registry->add_subcommand("compact", "Rewrite the log without torn records");
    for (auto* sub : {reg_register, reg_verify, reg_lookup, reg_compact})
        sub->add_option("--store", reg_store, "Registry file");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a deterministic synthetic image set");
    fs::path synth_out;
    int synth_count = 8, synth_size = 64;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of images")->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "Side length")->check(CLI::Range(ImageBuffer::kMinSide, 8192));
    synth->add_option("--seed", synth_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("usage", e.what());
        return kUsage;
    }

    if (train->parsed()) {
        json flags = json::object();
        if (train_steps) flags["total_steps"] = *train_steps;
        if (train_batch) flags["batch_size"] = *train_batch;
        if (train_lr) flags["optim"]["lr"] = *train_lr;
        if (train_seed) flags["seed"] = *train_seed;
        if (train_stop) flags["stop_before"] = *train_stop;
        return cmd_train(train_config, train_data, train_out, train_resume, flags, train_log);
    }
    if (embed->parsed()) return cmd_embed(embed_ckpt, embed_in, embed_uuid, embed_out, embed_quality);
    if (extract->parsed()) return cmd_extract(extract_ckpt, extract_in, extract_ecc);
    if (bench->parsed()) return cmd_bench(bench_ckpt, bench_data, bench_noises, bench_report, bench_seed, bench_mode);
    if (forge->parsed()) return cmd_forge(forge_ckpt, forge_source, forge_target, forge_seed, forge_report);
    if (reg_register->parsed()) return cmd_register(reg_store, register_in, register_uuid, register_manifest, register_ckpt);
    if (reg_verify->parsed()) return cmd_verify(reg_store, verify_ckpt, verify_in, verify_threshold);
    if (reg_lookup->parsed()) return cmd_lookup(reg_store, lookup_uuid);
    if (reg_compact->parsed()) return cmd_compact(reg_store);
    if (synth->parsed()) return cmd_synth(synth_out, synth_count, synth_size, synth_seed);
    return kUsage;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const MissingFile& e) {
        fail_line("missing_file", e.what());
        return kMissingFile;
    } catch (const CheckpointError& e) {
        fail_line("checkpoint", e.what());
        return kCheckpoint;
    } catch (const BenchError& e) {
        fail_line("no_data", e.what());
        return kBadData;
    } catch (const ImageError& e) {
        fail_line("bad_image", e.what());
        return kBadData;
    } catch (const TrainingError& e) {
        fail_line("diverged", e.what());
        return kDiverged;
    } catch (const Duplicate& e) {
        fail_line("duplicate", e.what());
        return kDuplicate;
    } catch (const RegistryError& e) {
        fail_line("registry", e.what());
        return kRegistry;
    } catch (const std::invalid_argument& e) {
        fail_line("invalid_input", e.what());
        return kInvalidInput;
    } catch (const nlohmann::json::exception& e) {
        fail_line("invalid_input", e.what());
        return kInvalidInput;
    } catch (const std::exception& e) {
        fail_line("internal", e.what());
        return kInternal;
    }
}
