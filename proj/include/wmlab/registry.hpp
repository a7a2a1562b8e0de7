#pragma once

#include "wmlab/image.hpp"
#include "wmlab/model.hpp"
#include "wmlab/payload.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmlab {

/// 64-bit difference hash: luma downscaled to 9x8, one bit per horizontal
/// neighbour pair (set when the left pixel is brighter), row-major, MSB first.
std::uint64_t fingerprint(const ImageBuffer& img);
int hamming(std::uint64_t a, std::uint64_t b);

inline constexpr int kDefaultMatchThreshold = 12;

struct ManifestRecord {
    Uuid uuid;
    std::uint64_t fingerprint = 0;
    std::string manifest; // opaque bytes
    std::int64_t created_at = 0; // seconds since the Unix epoch

    bool operator==(const ManifestRecord&) const = default;
};

/// The payload embedded for a registered id. A model whose bit length equals
/// the ECC codeword length carries the BCH codeword; a shorter model carries
/// the leading bits of the UUID and is looked up by that prefix.
WatermarkBits registry_watermark(const Uuid& id, int bit_length, const EccConfig& ecc = {});
bool uses_ecc(int bit_length, const EccConfig& ecc = {});

class RegistryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RegisterStatus { Ok, DuplicateUuid, DuplicateWatermark };
std::string_view register_status_name(RegisterStatus s);

/// Append-only record log in one file. The first line is a versioned header;
/// every further line is one checksummed JSON record. Writers serialise on an
/// exclusive lock of "<path>.lock"; a torn trailing line (interrupted write)
/// is ignored by readers and dropped by the next compaction.
class Registry {
public:
    static constexpr int kFormatVersion = 1;

    /// Opens or creates the store at `path`.
    explicit Registry(std::filesystem::path path);

    /// `prefix_bits` > 0 additionally rejects ids whose first `prefix_bits`
    /// bits collide with an existing record (raw-bits payloads).
    RegisterStatus register_record(const ManifestRecord& rec, int prefix_bits = 0);
    std::optional<ManifestRecord> lookup(const Uuid& id) const;
    /// Records whose UUID starts with `bits`.
    std::vector<ManifestRecord> lookup_prefix(const WatermarkBits& bits) const;

    /// Rewrites the file with only valid records and swaps it in atomically.
    void compact();
    /// Re-reads the file (picks up records appended by other processes).
    void reload();

    const std::vector<ManifestRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    /// Lines skipped on the last read because they were torn or corrupt.
    int skipped_lines() const { return skipped_; }
    const std::filesystem::path& path() const { return path_; }

private:
    void read_locked();

    std::filesystem::path path_;
    std::vector<ManifestRecord> records_;
    int skipped_ = 0;
    bool clean_tail_ = true;
};

enum class VerifyStatus { Authentic, FingerprintMismatch, NotFound, DecodeFailed };
std::string_view verify_status_name(VerifyStatus s);

struct VerifyResult {
    VerifyStatus status = VerifyStatus::DecodeFailed;
    std::optional<ManifestRecord> record;
    int distance = -1;      // fingerprint Hamming distance to `record`
    int corrected = 0;      // bit errors fixed by the ECC
    std::string payload;    // decoded UUID, or the raw bits as hex
    std::string detail;
};

/// Decodes the watermark, looks the id up and compares fingerprints.
VerifyResult verify(const ImageBuffer& img, const WatermarkModel& model, const Registry& store,
                    int threshold = kDefaultMatchThreshold, const EccConfig& ecc = {});

} // namespace wmlab
