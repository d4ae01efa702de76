// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/persistence.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "siftlab/error.hpp"

namespace siftlab {

namespace {

using Code = FormatError::Code;

constexpr char kIncrementMagic[4] = {'S', 'I', 'F', 'T'};
constexpr char kCheckpointMagic[4] = {'S', 'I', 'F', 'C'};
constexpr char kMaskMagic[4] = {'S', 'I', 'F', 'M'};

std::uint32_t element_tag(Precision p) { return p == Precision::F32 ? 1 : 2; }

Precision element_type(std::uint32_t tag) {
    if (tag == 1) return Precision::F32;
    if (tag == 2) return Precision::F64;
    throw FormatError(Code::BadElementType, "unknown element type tag " + std::to_string(tag));
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths.
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void value(Precision p, double v) {
        if (p == Precision::F32)
            f32(static_cast<float>(v));
        else
            f64(v);
    }
    void name(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void shape(const Shape& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        for (auto d : s) u64(d);
    }
    std::vector<std::uint8_t> finish() {
        u32(crc32_of(out_.data(), out_.size()));
        return std::move(out_);
    }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, const char (&magic)[4]) : data_(bytes) {
        if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
            throw FormatError(Code::BadMagic, std::string("bad magic, expected ") + std::string(magic, 4));
        if (bytes.size() < 12) throw FormatError(Code::Truncated, "file too short");
        end_ = bytes.size() - 4;
        std::uint32_t stored = 0;
        for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[end_ + i]) << (8 * i);
        if (stored != crc32_of(bytes.data(), end_)) throw FormatError(Code::BadChecksum, "checksum mismatch");
        pos_ = 4;
        const std::uint32_t version = u32();
        if (version != kFormatVersion)
            throw FormatError(Code::BadVersion, "unsupported format version " + std::to_string(version));
    }

    void need(std::size_t n) const {
        if (n > end_ - pos_) throw FormatError(Code::Truncated, "unexpected end of data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    double value(Precision p) { return p == Precision::F32 ? static_cast<double>(std::bit_cast<float>(u32())) : f64(); }
    std::string name() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Shape shape() {
        const std::uint32_t rank = u32();
        need(std::size_t{8} * rank);
        Shape s(rank);
        for (auto& d : s) {
            d = u64();
            if (d == 0) throw FormatError(Code::Truncated, "zero extent in tensor shape");
        }
        return s;
    }
    /// Element count bounded by the bytes left, so corrupt counts cannot
    /// trigger huge allocations.
    std::uint64_t count(std::size_t bytes_per_item) {
        const std::uint64_t n = u64();
        if (bytes_per_item && n > (end_ - pos_) / bytes_per_item) throw FormatError(Code::Truncated, "count exceeds file size");
        return n;
    }
    std::vector<std::uint64_t> indices(std::uint64_t n, std::size_t limit) {
        std::vector<std::uint64_t> idx(n);
        for (std::size_t j = 0; j < n; ++j) {
            idx[j] = u64();
            if (idx[j] >= limit) throw FormatError(Code::IndexOutOfRange, "index out of range");
            if (j && idx[j] <= idx[j - 1]) throw FormatError(Code::NotMonotonic, "indices not strictly increasing");
        }
        return idx;
    }
    void finish() const {
        if (pos_ != end_) throw FormatError(Code::Truncated, "trailing bytes before checksum");
    }

private:
    const std::vector<std::uint8_t>& data_;
    std::size_t pos_ = 0;
    std::size_t end_ = 0;
};

std::size_t value_bytes(Precision p) { return p == Precision::F32 ? 4 : 8; }

std::size_t checked_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) {
        if (d > SIZE_MAX / n) throw FormatError(Code::Truncated, "tensor extents overflow");
        n *= d;
    }
    return n;
}

}  // namespace

std::vector<std::uint8_t> encode_increment(const SparseIncrement& increment) {
    Writer w;
    w.bytes(kIncrementMagic, 4);
    w.u32(kFormatVersion);
    w.u32(element_tag(increment.element_type));
    w.u64(increment.tensors.size());
    for (const auto& [name, d] : increment.tensors) {
        if (d.indices.size() != d.values.size()) throw ShapeError("increment indices/values length differ for " + name);
        w.name(name);
        w.shape(d.shape);
        w.u64(d.indices.size());
        for (auto i : d.indices) w.u64(i);
        for (double v : d.values) w.value(increment.element_type, v);
    }
    return w.finish();
}

SparseIncrement decode_increment(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes, kIncrementMagic);
    SparseIncrement inc;
    inc.element_type = element_type(r.u32());
    const std::uint64_t tensors = r.count(4);
    for (std::uint64_t t = 0; t < tensors; ++t) {
        std::string name = r.name();
        SparseDelta d;
        d.shape = r.shape();
        const std::uint64_t n = r.count(8 + value_bytes(inc.element_type));
        d.indices = r.indices(n, checked_numel(d.shape));
        d.values.resize(n);
        for (auto& v : d.values) v = r.value(inc.element_type);
        inc.tensors.insert_or_assign(std::move(name), std::move(d));
    }
    r.finish();
    return inc;
}

void save_increment(const std::filesystem::path& path, const SparseIncrement& increment) {
    write_file(path, encode_increment(increment));
}

SparseIncrement load_increment(const std::filesystem::path& path) { return decode_increment(read_file(path)); }

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, Precision element_type) {
    Writer w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kFormatVersion);
    w.u32(element_tag(element_type));
    w.u64(params.size());
    for (const auto& [name, t] : params) {
        w.name(name);
        w.shape(t.shape());
        for (double v : t.data()) w.value(element_type, v);
    }
    write_file(path, w.finish());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    Reader r(bytes, kCheckpointMagic);
    const Precision p = element_type(r.u32());
    const std::uint64_t tensors = r.count(4);
    ParamSet out;
    for (std::uint64_t t = 0; t < tensors; ++t) {
        std::string name = r.name();
        Shape shape = r.shape();
        const std::size_t n = checked_numel(shape);
        r.need(n * value_bytes(p));
        std::vector<double> values(n);
        for (auto& v : values) v = r.value(p);
        out.insert_or_assign(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    r.finish();
    return out;
}

void save_mask(const std::filesystem::path& path, const MaskSelection& mask) {
    Writer w;
    w.bytes(kMaskMagic, 4);
    w.u32(kFormatVersion);
    w.f64(mask.rate);
    w.u32(mask.granularity == Granularity::PerTensor ? 0 : 1);
    w.u32(mask.provenance == MaskProvenance::GradientTopK ? 0 : 1);
    w.u64(mask.seed);
    w.u64(mask.calibration_batches);
    w.u64(mask.indices.size());
    for (const auto& [name, idx] : mask.indices) {
        w.name(name);
        w.shape(mask.shapes.at(name));
        w.u64(idx.size());
        for (auto i : idx) w.u64(i);
    }
    write_file(path, w.finish());
}

MaskSelection load_mask(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    Reader r(bytes, kMaskMagic);
    MaskSelection m;
    m.rate = r.f64();
    const auto gran = r.u32();
    const auto prov = r.u32();
    if (gran > 1 || prov > 1) throw FormatError(Code::BadElementType, "unknown mask granularity or provenance");
    m.granularity = gran == 0 ? Granularity::PerTensor : Granularity::GlobalPool;
    m.provenance = prov == 0 ? MaskProvenance::GradientTopK : MaskProvenance::Random;
    m.seed = r.u64();
    m.calibration_batches = r.u64();
    const std::uint64_t tensors = r.count(4);
    for (std::uint64_t t = 0; t < tensors; ++t) {
        std::string name = r.name();
        Shape shape = r.shape();
        const std::uint64_t n = r.count(8);
        m.indices[name] = r.indices(n, checked_numel(shape));
        m.shapes[name] = std::move(shape);
    }
    r.finish();
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw Error("float formatting failed");
    return std::string(buf, end);
}

std::string scan_csv(const LandscapeScan& scan) {
    std::ostringstream os;
    os << "# kind=" << (scan.is_2d() ? "scan_2d" : "scan_1d") << '\n';
    os << "# eval_set=" << scan.eval_set_id << '\n';
    os << "# theta0=" << scan.theta0_id << '\n';
    os << "# theta1=" << scan.theta1_id << '\n';
    if (scan.is_2d()) os << "# direction_seed=" << scan.direction_seed << '\n';
    if (!scan.is_2d()) {
        os << "alpha,loss,flag\n";
        for (std::size_t i = 0; i < scan.alphas.size(); ++i)
            os << format_double(scan.alphas[i]) << ',' << format_double(scan.losses[i]) << ','
               << (scan.nonfinite[i] ? 1 : 0) << '\n';
    } else {
        os << "alpha,beta,loss,flag\n";
        const std::size_t nb = scan.betas.size();
        for (std::size_t i = 0; i < scan.alphas.size(); ++i)
            for (std::size_t j = 0; j < nb; ++j)
                os << format_double(scan.alphas[i]) << ',' << format_double(scan.betas[j]) << ','
                   << format_double(scan.losses[i * nb + j]) << ',' << (scan.nonfinite[i * nb + j] ? 1 : 0) << '\n';
    }
    return os.str();
}

void write_scan_csv(const std::filesystem::path& path, const LandscapeScan& scan) { write_text(path, scan_csv(scan)); }

void write_report_json(const std::filesystem::path& path, const nlohmann::ordered_json& report) {
    write_text(path, report.dump(2) + "\n");
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << '\n';
    }
    return os.str();
}

}  // namespace siftlab
