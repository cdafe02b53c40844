#include "tvmerge/tensor_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <json.hpp>

#include "tvmerge/kernels.hpp"
#include "tvmerge/log.hpp"

static_assert(std::endian::native == std::endian::little, "container payloads are little-endian");

namespace tvmerge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TensorRecord
// ---------------------------------------------------------------------------

static std::size_t shape_elements(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (std::int64_t d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::size_t TensorRecord::element_count() const { return shape_elements(shape); }
std::size_t TensorInfo::element_count() const { return shape_elements(shape); }

void TensorRecord::validate() const {
    if (name.empty() || name.find('\0') != std::string::npos)
        throw MergeError(ErrorKind::InvalidArgument, "tensor name empty or contains NUL");
    for (std::int64_t d : shape)
        if (d <= 0) throw MergeError(ErrorKind::InvalidArgument, name + ": non-positive dimension");
    if (bytes.size() != element_count() * dtype_width(dtype))
        throw MergeError(ErrorKind::InvalidArgument, name + ": payload length does not match shape and dtype");
}

std::vector<double> TensorRecord::to_f64() const {
    const auto& k = kern::ops();
    const std::size_t n = element_count();
    std::vector<double> out(n);
    if (dtype == DType::F32) {
        k.f32_to_f64(reinterpret_cast<const float*>(bytes.data()), out.data(), n);
    } else {
        std::vector<float> tmp(n);
        const auto* h = reinterpret_cast<const std::uint16_t*>(bytes.data());
        if (dtype == DType::F16)
            k.f16_to_f32(h, tmp.data(), n);
        else
            k.bf16_to_f32(h, tmp.data(), n);
        k.f32_to_f64(tmp.data(), out.data(), n);
    }
    return out;
}

TensorRecord TensorRecord::from_f64(std::string name, DType dtype, std::vector<std::int64_t> shape,
                                    const std::vector<double>& values) {
    const auto& k = kern::ops();
    if (values.size() != shape_elements(shape))
        throw MergeError(ErrorKind::ShapeMismatch, name + ": value count does not match shape");
    TensorRecord rec;
    rec.name = std::move(name);
    rec.dtype = dtype;
    rec.shape = std::move(shape);
    const std::size_t n = values.size();
    std::vector<float> tmp(n);
    k.f64_to_f32(values.data(), tmp.data(), n);
    rec.bytes.resize(n * dtype_width(dtype));
    if (dtype == DType::F32) {
        std::memcpy(rec.bytes.data(), tmp.data(), rec.bytes.size());
    } else {
        auto* h = reinterpret_cast<std::uint16_t*>(rec.bytes.data());
        if (dtype == DType::F16)
            k.f32_to_f16(tmp.data(), h, n);
        else
            k.f32_to_bf16(tmp.data(), h, n);
    }
    return rec;
}

Mat TensorRecord::to_mat() const {
    if (rank() > 2)
        throw MergeError(ErrorKind::ShapeMismatch, name + ": rank > 2 tensor has no matrix view");
    const std::size_t r = rank() == 2 ? static_cast<std::size_t>(shape[0]) : 1;
    const std::size_t c = rank() == 2 ? static_cast<std::size_t>(shape[1])
                                      : (rank() == 1 ? static_cast<std::size_t>(shape[0]) : 1);
    return Mat(r, c, to_f64());
}

// ---------------------------------------------------------------------------
// Header parsing shared by the lazy and eager readers
// ---------------------------------------------------------------------------

namespace {

struct ParsedHeader {
    std::vector<TensorInfo> manifest;                                  // lexicographic
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> ranges;
    std::map<std::string, std::string> metadata;
    std::uint64_t data_start = 0;
};

class FileHandle {
public:
    explicit FileHandle(const std::string& path) : path_(path), fd_(::open(path.c_str(), O_RDONLY)) {
        if (fd_ < 0) throw MergeError(ErrorKind::IoFailure, path + ": " + std::strerror(errno));
    }
    ~FileHandle() {
        if (fd_ >= 0) ::close(fd_);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;

    std::uint64_t size() const {
        struct stat st{};
        if (::fstat(fd_, &st) != 0) throw MergeError(ErrorKind::IoFailure, path_ + ": fstat failed");
        return static_cast<std::uint64_t>(st.st_size);
    }

    void read_at(std::uint64_t offset, void* buf, std::size_t len) const {
        std::uint8_t* dst = static_cast<std::uint8_t*>(buf);
        while (len > 0) {
            const ssize_t got = ::pread(fd_, dst, len, static_cast<off_t>(offset));
            if (got < 0) {
                if (errno == EINTR) continue;
                throw MergeError(ErrorKind::IoFailure, path_ + ": " + std::strerror(errno));
            }
            if (got == 0) throw MergeError(ErrorKind::TruncatedFile, path_ + ": unexpected end of file");
            dst += got;
            offset += static_cast<std::uint64_t>(got);
            len -= static_cast<std::size_t>(got);
        }
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    int fd_;
};

ParsedHeader parse_header(const FileHandle& file) {
    const std::uint64_t file_size = file.size();
    if (file_size < 8) throw MergeError(ErrorKind::TruncatedFile, file.path() + ": shorter than header length field");

    std::uint8_t len_bytes[8];
    file.read_at(0, len_bytes, 8);
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];

    if (header_len > file_size - 8)
        throw MergeError(ErrorKind::TruncatedFile, file.path() + ": header length exceeds file size");

    std::string header_text(header_len, '\0');
    file.read_at(8, header_text.data(), header_len);

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw MergeError(ErrorKind::MalformedHeader, file.path() + ": " + e.what());
    }
    if (!header.is_object()) throw MergeError(ErrorKind::MalformedHeader, file.path() + ": header is not an object");

    ParsedHeader out;
    out.data_start = 8 + header_len;
    const std::uint64_t data_len = file_size - out.data_start;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object())
                throw MergeError(ErrorKind::MalformedHeader, file.path() + ": __metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    throw MergeError(ErrorKind::MalformedHeader, file.path() + ": __metadata__ values must be strings");
                out.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty() || name.find('\0') != std::string::npos)
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": invalid tensor name");
        if (!entry.is_object())
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": entry for " + name + " is not an object");
        for (const auto& [k, v] : entry.items()) {
            (void)v;
            if (k != "dtype" && k != "shape" && k != "data_offsets")
                throw MergeError(ErrorKind::MalformedHeader, file.path() + ": unknown key \"" + k + "\" in " + name);
        }
        if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets"))
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": incomplete entry for " + name);

        TensorInfo info;
        info.name = name;
        if (!entry["dtype"].is_string())
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": dtype of " + name + " is not a string");
        info.dtype = dtype_from_name(entry["dtype"].get<std::string>());

        if (!entry["shape"].is_array())
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": shape of " + name + " is not an array");
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() <= 0)
                throw MergeError(ErrorKind::MalformedHeader, file.path() + ": bad dimension in " + name);
            info.shape.push_back(d.get<std::int64_t>());
        }

        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned())
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": bad data_offsets for " + name);
        const std::uint64_t begin = offs[0].get<std::uint64_t>();
        const std::uint64_t end = offs[1].get<std::uint64_t>();
        if (end < begin)
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": reversed data_offsets for " + name);
        if (end - begin != info.byte_count())
            throw MergeError(ErrorKind::MalformedHeader,
                             file.path() + ": data_offsets of " + name + " do not match shape and dtype");
        if (end > data_len)
            throw MergeError(ErrorKind::TruncatedFile, file.path() + ": " + name + " extends past end of file");

        out.ranges[name] = {begin, end};
        out.manifest.push_back(std::move(info));
    }

    // non-overlap check over ranges sorted by begin
    std::vector<std::pair<std::uint64_t, std::uint64_t>> sorted;
    sorted.reserve(out.ranges.size());
    for (const auto& [_, r] : out.ranges) sorted.push_back(r);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].first < sorted[i - 1].second)
            throw MergeError(ErrorKind::MalformedHeader, file.path() + ": overlapping tensor ranges");

    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// CheckpointFile
// ---------------------------------------------------------------------------

struct CheckpointFile::Impl {
    FileHandle file;
    ParsedHeader header;

    explicit Impl(const std::string& path) : file(path), header(parse_header(file)) {}
};

CheckpointFile::CheckpointFile(const std::string& path) : impl_(std::make_unique<Impl>(path)) {}
CheckpointFile::~CheckpointFile() = default;
CheckpointFile::CheckpointFile(CheckpointFile&&) noexcept = default;
CheckpointFile& CheckpointFile::operator=(CheckpointFile&&) noexcept = default;

const std::vector<TensorInfo>& CheckpointFile::manifest() const { return impl_->header.manifest; }
const std::map<std::string, std::string>& CheckpointFile::metadata() const { return impl_->header.metadata; }
const std::string& CheckpointFile::path() const { return impl_->file.path(); }

TensorRecord CheckpointFile::load(std::string_view name) const {
    const auto it = impl_->header.ranges.find(std::string(name));
    if (it == impl_->header.ranges.end())
        throw MergeError(ErrorKind::MissingTensor, impl_->file.path() + ": no tensor named " + std::string(name));
    const TensorInfo* info = nullptr;
    for (const auto& m : impl_->header.manifest)
        if (m.name == name) {
            info = &m;
            break;
        }
    TensorRecord rec;
    rec.name = std::string(name);
    rec.dtype = info->dtype;
    rec.shape = info->shape;
    rec.bytes.resize(it->second.second - it->second.first);
    impl_->file.read_at(impl_->header.data_start + it->second.first, rec.bytes.data(), rec.bytes.size());
    return rec;
}

// ---------------------------------------------------------------------------
// InMemorySource
// ---------------------------------------------------------------------------

InMemorySource::InMemorySource(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
    for (const auto& [name, rec] : ckpt_.records)
        manifest_.push_back(TensorInfo{name, rec.dtype, rec.shape});
}

const std::vector<TensorInfo>& InMemorySource::manifest() const { return manifest_; }
const std::map<std::string, std::string>& InMemorySource::metadata() const { return ckpt_.metadata; }

TensorRecord InMemorySource::load(std::string_view name) const {
    const auto it = ckpt_.records.find(std::string(name));
    if (it == ckpt_.records.end())
        throw MergeError(ErrorKind::MissingTensor, "no tensor named " + std::string(name));
    return it->second;
}

// ---------------------------------------------------------------------------
// Eager read / write
// ---------------------------------------------------------------------------

Checkpoint read_checkpoint(const std::string& path) {
    CheckpointFile file(path);
    Checkpoint ckpt;
    ckpt.metadata = file.metadata();
    for (const auto& info : file.manifest()) ckpt.records[info.name] = file.load(info.name);
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, rec] : ckpt.records) {
        if (name != rec.name)
            throw MergeError(ErrorKind::InvalidArgument, "record name \"" + rec.name + "\" differs from key");
        rec.validate();
        json entry;
        entry["dtype"] = std::string(dtype_name(rec.dtype));
        entry["shape"] = rec.shape;
        entry["data_offsets"] = {offset, offset + rec.bytes.size()};
        header[name] = std::move(entry);
        offset += rec.bytes.size();
    }
    if (!ckpt.metadata.empty()) header["__metadata__"] = ckpt.metadata;

    const std::string header_text = header.dump();
    const std::string tmp_path = path + ".tmp." + std::to_string(::getpid());

    std::FILE* f = std::fopen(tmp_path.c_str(), "wb");
    if (!f) throw MergeError(ErrorKind::IoFailure, tmp_path + ": " + std::strerror(errno));

    auto fail = [&](const std::string& msg) {
        std::fclose(f);
        std::remove(tmp_path.c_str());
        throw MergeError(ErrorKind::IoFailure, msg);
    };

    std::uint8_t len_bytes[8];
    const std::uint64_t header_len = header_text.size();
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>(header_len >> (8 * i));
    if (std::fwrite(len_bytes, 1, 8, f) != 8) fail(tmp_path + ": short write");
    if (std::fwrite(header_text.data(), 1, header_text.size(), f) != header_text.size())
        fail(tmp_path + ": short write");
    for (const auto& [_, rec] : ckpt.records)
        if (!rec.bytes.empty() && std::fwrite(rec.bytes.data(), 1, rec.bytes.size(), f) != rec.bytes.size())
            fail(tmp_path + ": short write");
    if (std::fclose(f) != 0) {
        std::remove(tmp_path.c_str());
        throw MergeError(ErrorKind::IoFailure, tmp_path + ": close failed");
    }
    if (std::rename(tmp_path.c_str(), path.c_str()) != 0) {
        std::remove(tmp_path.c_str());
        throw MergeError(ErrorKind::IoFailure, path + ": rename failed: " + std::strerror(errno));
    }
}

// ---------------------------------------------------------------------------
// validate_compat
// ---------------------------------------------------------------------------

LayerManifest validate_compat(const std::vector<const TensorSource*>& sources) {
    if (sources.size() < 2)
        throw MergeError(ErrorKind::InvalidArgument, "validate_compat needs at least 2 checkpoints");

    const auto& ref = sources[0]->manifest();
    for (std::size_t s = 1; s < sources.size(); ++s) {
        const auto& other = sources[s]->manifest();
        std::map<std::string, const TensorInfo*> by_name;
        for (const auto& info : other) by_name[info.name] = &info;

        for (const auto& info : ref) {
            const auto it = by_name.find(info.name);
            if (it == by_name.end()) throw MergeError(ErrorKind::MissingTensor, info.name);
            if (it->second->shape != info.shape) throw MergeError(ErrorKind::ShapeMismatch, info.name);
            if (it->second->dtype != info.dtype) throw MergeError(ErrorKind::DtypeMismatch, info.name);
        }
        if (other.size() != ref.size()) {
            std::map<std::string, bool> ref_names;
            for (const auto& info : ref) ref_names[info.name] = true;
            for (const auto& info : other)
                if (!ref_names.count(info.name)) throw MergeError(ErrorKind::MissingTensor, info.name);
        }
    }

    LayerManifest manifest;
    for (const auto& info : ref)
        manifest.entries.push_back(ManifestEntry{info.name, info.shape, info.dtype, info.rank() <= 2});
    return manifest;
}

}  // namespace tvmerge
