#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tvmerge/dtype.hpp"
#include "tvmerge/mat.hpp"

namespace tvmerge {

// One named tensor with raw little-endian payload bytes. Payload bytes pass
// through reads and writes untouched; decoding happens only on demand.
struct TensorRecord {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;  // rank 0, 1 or 2 mergeable; higher ranks pass through only if configured
    std::vector<std::uint8_t> bytes;

    std::size_t element_count() const;
    std::size_t rank() const { return shape.size(); }

    std::vector<double> to_f64() const;
    // Casts and re-encodes values into this record's dtype (round-to-nearest-even).
    static TensorRecord from_f64(std::string name, DType dtype, std::vector<std::int64_t> shape,
                                 const std::vector<double>& values);

    // 2-D view (rank 0 -> 1x1, rank 1 -> 1xN).
    Mat to_mat() const;

    void validate() const;

    bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
    std::map<std::string, TensorRecord> records;  // lexicographic by construction
    std::map<std::string, std::string> metadata;

    bool operator==(const Checkpoint&) const = default;
};

struct TensorInfo {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;

    std::size_t element_count() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t byte_count() const { return element_count() * dtype_width(dtype); }
};

// Read-only tensor source: a lazily mapped container file or an in-memory
// checkpoint. load() materializes exactly one tensor per call and the source
// retains nothing, so concurrent per-layer workers each hold at most one
// tensor's data per source.
class TensorSource {
public:
    virtual ~TensorSource() = default;
    virtual const std::vector<TensorInfo>& manifest() const = 0;
    virtual TensorRecord load(std::string_view name) const = 0;
    virtual const std::map<std::string, std::string>& metadata() const = 0;
};

class CheckpointFile final : public TensorSource {
public:
    explicit CheckpointFile(const std::string& path);
    ~CheckpointFile() override;

    CheckpointFile(CheckpointFile&&) noexcept;
    CheckpointFile& operator=(CheckpointFile&&) noexcept;
    CheckpointFile(const CheckpointFile&) = delete;
    CheckpointFile& operator=(const CheckpointFile&) = delete;

    const std::vector<TensorInfo>& manifest() const override;
    TensorRecord load(std::string_view name) const override;  // thread-safe (pread)
    const std::map<std::string, std::string>& metadata() const override;

    const std::string& path() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class InMemorySource final : public TensorSource {
public:
    explicit InMemorySource(Checkpoint ckpt);

    const std::vector<TensorInfo>& manifest() const override;
    TensorRecord load(std::string_view name) const override;
    const std::map<std::string, std::string>& metadata() const override;

private:
    Checkpoint ckpt_;
    std::vector<TensorInfo> manifest_;
};

// Container layout: 8-byte little-endian header length N, then N bytes of
// JSON mapping name -> {"data_offsets": [begin, end), "dtype", "shape"}
// (offsets relative to the end of the header) plus an optional
// "__metadata__" string map, then the raw tensor bytes in ascending,
// non-overlapping ranges.
Checkpoint read_checkpoint(const std::string& path);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);

struct ManifestEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    DType dtype = DType::F32;
    bool mergeable = false;  // rank <= 2
};

struct LayerManifest {
    std::vector<ManifestEntry> entries;
};

// Requires >= 2 sources with pairwise identical name sets, shapes and dtypes.
LayerManifest validate_compat(const std::vector<const TensorSource*>& sources);

}  // namespace tvmerge
