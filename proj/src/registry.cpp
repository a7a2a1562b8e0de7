#include "wmlab/registry.hpp"

#include "wmlab/checksum.hpp"
#include "wmlab/resample.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wmlab {

std::uint64_t fingerprint(const ImageBuffer& img)
{
    const Tensor y = resample_apply(luma(img), bilinear_axis(img.height(), 8), bilinear_axis(img.width(), 9));
    std::uint64_t h = 0;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            h <<= 1;
            if (y.at(0, 0, r, c) > y.at(0, 0, r, c + 1)) h |= 1;
        }
    return h;
}

int hamming(std::uint64_t a, std::uint64_t b)
{
    return std::popcount(a ^ b);
}

bool uses_ecc(int bit_length, const EccConfig& ecc)
{
    return bit_length == ecc.total_bits;
}

WatermarkBits registry_watermark(const Uuid& id, int bit_length, const EccConfig& ecc)
{
    if (uses_ecc(bit_length, ecc)) return encode_uuid(id, ecc);
    if (bit_length <= 0 || bit_length > 128)
        throw std::invalid_argument("registry: a " + std::to_string(bit_length) +
                                    "-bit model can carry neither a UUID codeword nor a UUID prefix");
    std::vector<std::uint8_t> bits = id.to_bits();
    bits.resize(static_cast<std::size_t>(bit_length));
    return WatermarkBits(std::move(bits));
}

std::string_view register_status_name(RegisterStatus s)
{
    switch (s) {
    case RegisterStatus::Ok: return "Ok";
    case RegisterStatus::DuplicateUuid: return "DuplicateUuid";
    case RegisterStatus::DuplicateWatermark: return "DuplicateWatermark";
    }
    return "?";
}

std::string_view verify_status_name(VerifyStatus s)
{
    switch (s) {
    case VerifyStatus::Authentic: return "Authentic";
    case VerifyStatus::FingerprintMismatch: return "FingerprintMismatch";
    case VerifyStatus::NotFound: return "NotFound";
    case VerifyStatus::DecodeFailed: return "DecodeFailed";
    }
    return "?";
}

namespace {

const char* kFormatName = "wmlab-registry";

std::string to_hex(std::string_view bytes)
{
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

int hex_digit(char c)
{
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string from_hex(std::string_view hex)
{
    if (hex.size() % 2) throw std::invalid_argument("odd hex length");
    std::string out;
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = hex_digit(hex[i]), lo = hex_digit(hex[i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("bad hex digit");
        out.push_back(static_cast<char>(hi * 16 + lo));
    }
    return out;
}

std::string u64_hex(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string header_line()
{
    return nlohmann::json{{"format", kFormatName}, {"version", Registry::kFormatVersion}}.dump() + "\n";
}

std::string record_line(const ManifestRecord& r)
{
    nlohmann::json body{{"uuid", r.uuid.str()},
                        {"fingerprint", u64_hex(r.fingerprint)},
                        {"manifest", to_hex(r.manifest)},
                        {"created_at", r.created_at}};
    const std::string text = body.dump();
    body["check"] = u64_hex(fnv1a(text.data(), text.size()));
    return body.dump() + "\n";
}

std::optional<ManifestRecord> parse_record(const std::string& line)
{
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        const std::string check = j.at("check").get<std::string>();
        j.erase("check");
        const std::string text = j.dump();
        if (check != u64_hex(fnv1a(text.data(), text.size()))) return std::nullopt;
        ManifestRecord r;
        r.uuid = Uuid::parse(j.at("uuid").get<std::string>());
        r.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
        r.manifest = from_hex(j.at("manifest").get<std::string>());
        r.created_at = j.at("created_at").get<std::int64_t>();
        return r;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

class FileLock {
public:
    FileLock(const std::filesystem::path& path, int op)
    {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw RegistryError("cannot open lock " + path.string() + ": " + std::strerror(errno));
        while (::flock(fd_, op) != 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            ::close(fd_);
            throw RegistryError("cannot lock " + path.string() + ": " + std::strerror(err));
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;
    ~FileLock()
    {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }

private:
    int fd_ = -1;
};

std::filesystem::path lock_path(const std::filesystem::path& p)
{
    return p.string() + ".lock";
}

void write_all(int fd, const std::string& data, const std::filesystem::path& path)
{
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw RegistryError("write failed on " + path.string() + ": " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

void sync_dir(const std::filesystem::path& file)
{
    const std::filesystem::path dir = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

// Writes `content` to a sibling temporary file, syncs it and renames it over `path`.
void replace_file(const std::filesystem::path& path, const std::string& content)
{
    const std::filesystem::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw RegistryError("cannot create " + tmp.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, content, tmp);
    } catch (...) {
        ::close(fd);
        throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0)
        throw RegistryError("cannot flush " + tmp.string() + ": " + std::strerror(errno));
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw RegistryError("cannot replace " + path.string() + ": " + ec.message());
    sync_dir(path);
}

bool has_prefix(const Uuid& id, const WatermarkBits& bits)
{
    const std::vector<std::uint8_t> all = id.to_bits();
    if (bits.size() > all.size()) return false;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (all[i] != bits[i]) return false;
    return true;
}

} // namespace

Registry::Registry(std::filesystem::path path) : path_(std::move(path))
{
    const FileLock lock(lock_path(path_), LOCK_EX);
    if (!std::filesystem::exists(path_)) replace_file(path_, header_line());
    read_locked();
}

void Registry::read_locked()
{
    std::ifstream f(path_, std::ios::binary);
    if (!f) throw RegistryError("cannot read " + path_.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string content = ss.str();

    records_.clear();
    skipped_ = 0;
    clean_tail_ = content.empty() || content.back() == '\n';
    std::istringstream lines(content);
    std::string line;
    if (!std::getline(lines, line)) throw RegistryError("empty registry file " + path_.string());
    try {
        const nlohmann::json h = nlohmann::json::parse(line);
        if (h.at("format").get<std::string>() != kFormatName) throw RegistryError("not a registry file");
        const int version = h.at("version").get<int>();
        if (version != kFormatVersion)
            throw RegistryError("unsupported registry version " + std::to_string(version) + " in " + path_.string());
    } catch (const nlohmann::json::exception&) {
        throw RegistryError("bad registry header in " + path_.string());
    }
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        if (auto r = parse_record(line)) {
            const bool dup = std::any_of(records_.begin(), records_.end(),
                                         [&](const ManifestRecord& e) { return e.uuid == r->uuid; });
            if (!dup) records_.push_back(std::move(*r));
        } else {
            ++skipped_;
        }
    }
}

void Registry::reload()
{
    const FileLock lock(lock_path(path_), LOCK_SH);
    read_locked();
}

RegisterStatus Registry::register_record(const ManifestRecord& rec, int prefix_bits)
{
    const FileLock lock(lock_path(path_), LOCK_EX);
    read_locked();
    for (const ManifestRecord& e : records_) {
        if (e.uuid == rec.uuid) return RegisterStatus::DuplicateUuid;
        if (prefix_bits > 0) {
            const std::vector<std::uint8_t> bits = rec.uuid.to_bits();
            if (has_prefix(e.uuid, WatermarkBits({bits.begin(), bits.begin() + prefix_bits})))
                return RegisterStatus::DuplicateWatermark;
        }
    }
    // never append after a torn line; rewrite the valid records first
    if (skipped_ > 0 || !clean_tail_) {
        std::string content = header_line();
        for (const ManifestRecord& e : records_) content += record_line(e);
        replace_file(path_, content);
        skipped_ = 0;
        clean_tail_ = true;
    }
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd < 0) throw RegistryError("cannot open " + path_.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, record_line(rec), path_);
    } catch (...) {
        ::close(fd);
        throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0)
        throw RegistryError("cannot flush " + path_.string() + ": " + std::strerror(errno));
    records_.push_back(rec);
    return RegisterStatus::Ok;
}

void Registry::compact()
{
    const FileLock lock(lock_path(path_), LOCK_EX);
    read_locked();
    std::string content = header_line();
    for (const ManifestRecord& e : records_) content += record_line(e);
    replace_file(path_, content);
    skipped_ = 0;
    clean_tail_ = true;
}

std::optional<ManifestRecord> Registry::lookup(const Uuid& id) const
{
    for (const ManifestRecord& r : records_)
        if (r.uuid == id) return r;
    return std::nullopt;
}

std::vector<ManifestRecord> Registry::lookup_prefix(const WatermarkBits& bits) const
{
    std::vector<ManifestRecord> out;
    for (const ManifestRecord& r : records_)
        if (has_prefix(r.uuid, bits)) out.push_back(r);
    return out;
}

VerifyResult verify(const ImageBuffer& img, const WatermarkModel& model, const Registry& store, int threshold,
                    const EccConfig& ecc)
{
    VerifyResult out;
    const WatermarkBits bits = WatermarkBits::from_probabilities(model.decode(img));
    std::vector<ManifestRecord> candidates;
    if (uses_ecc(model.config().bit_length, ecc)) {
        const UuidDecodeResult d = decode_uuid(bits, ecc);
        if (const auto* fail = std::get_if<DecodeFailure>(&d)) {
            out.status = VerifyStatus::DecodeFailed;
            out.detail = fail->reason;
            return out;
        }
        const UuidDecode& ok = std::get<UuidDecode>(d);
        out.payload = ok.payload.str();
        out.corrected = ok.corrected;
        if (auto r = store.lookup(ok.payload)) candidates.push_back(*r);
    } else {
        out.payload = bits.to_hex();
        candidates = store.lookup_prefix(bits);
    }
    if (candidates.empty()) {
        out.status = VerifyStatus::NotFound;
        out.detail = "no record for " + out.payload;
        return out;
    }
    const std::uint64_t fp = fingerprint(img);
    for (const ManifestRecord& r : candidates) {
        const int d = hamming(fp, r.fingerprint);
        if (out.distance < 0 || d < out.distance) {
            out.distance = d;
            out.record = r;
        }
    }
    out.status = out.distance <= threshold ? VerifyStatus::Authentic : VerifyStatus::FingerprintMismatch;
    out.detail = "fingerprint distance " + std::to_string(out.distance) + ", threshold " + std::to_string(threshold);
    return out;
}

} // namespace wmlab
