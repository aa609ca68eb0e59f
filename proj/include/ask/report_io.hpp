#pragma once

#include "ask/core_math.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ask {

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal text for a double.
std::string format_double(double x);

/// Little-endian binary helpers shared by the KB snapshot and weight files.
class BinaryWriter {
public:
    void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_f32_block(const Mat& m);  // row-major

    const std::string& buffer() const { return buffer_; }

private:
    std::string buffer_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::string data) : data_(std::move(data)) {}

    std::string get_bytes(std::size_t n);
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    Mat get_f32_block(Eigen::Index rows, Eigen::Index cols);
    bool at_end() const { return pos_ == data_.size(); }

private:
    void require(std::size_t n) const;

    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace ask
