#include "ask/report_io.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ask {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IOError, fmt::format("cannot open {} for writing", tmp.string()));
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error(ErrorCode::IOError, fmt::format("write to {} failed", tmp.string()));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IOError, fmt::format("rename to {} failed: {}", path.string(), ec.message()));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IOError, fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double x) { return fmt::format("{}", x); }

void BinaryWriter::put_u32(std::uint32_t v) {
    char raw[4];
    std::memcpy(raw, &v, 4);
    buffer_.append(raw, 4);
}

void BinaryWriter::put_u64(std::uint64_t v) {
    char raw[8];
    std::memcpy(raw, &v, 8);
    buffer_.append(raw, 8);
}

void BinaryWriter::put_f32_block(const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float f = static_cast<float>(m(r, c));
            char raw[4];
            std::memcpy(raw, &f, 4);
            buffer_.append(raw, 4);
        }
    }
}

void BinaryReader::require(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::IOError, "unexpected end of binary file");
}

std::string BinaryReader::get_bytes(std::size_t n) {
    require(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint32_t BinaryReader::get_u32() {
    require(4);
    std::uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return v;
}

std::uint64_t BinaryReader::get_u64() {
    require(8);
    std::uint64_t v;
    std::memcpy(&v, data_.data() + pos_, 8);
    pos_ += 8;
    return v;
}

Mat BinaryReader::get_f32_block(Eigen::Index rows, Eigen::Index cols) {
    const auto n = static_cast<std::size_t>(rows * cols);
    require(n * 4);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            float f;
            std::memcpy(&f, data_.data() + pos_, 4);
            pos_ += 4;
            m(r, c) = f;
        }
    }
    return m;
}

}  // namespace ask
