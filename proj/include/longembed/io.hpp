#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace longembed {

// Malformed or missing input data. `line` is 1-based, 0 when not applicable.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& message, std::size_t line = 0)
        : std::runtime_error(message), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);
std::string read_file(const std::filesystem::path& path);

// Parses one JSON object per non-blank line; errors name the line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

struct Document {
    std::string id;
    std::string text;
};

struct PairRecord {
    std::string query;
    std::string target;
    std::string source;
};

struct TripletRecord {
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;
};

// Fields: id, text.
std::vector<Document> read_corpus(const std::filesystem::path& path);
// Fields: query, target, source.
std::vector<PairRecord> read_pairs(const std::filesystem::path& path);
// Fields: query, positive, negatives (exactly `negatives` strings).
std::vector<TripletRecord> read_triplets(const std::filesystem::path& path, std::size_t negatives = 15);

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);
void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);
void write_triplets(const std::filesystem::path& path, const std::vector<TripletRecord>& triplets);

namespace le {

void put_u8(std::ostream& os, std::uint8_t v);
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f32(std::ostream& os, float v);
void put_f64(std::ostream& os, double v);
void put_bytes(std::ostream& os, const void* data, std::size_t n);

// Readers throw DataError("truncated ...") at end of stream.
std::uint8_t get_u8(std::istream& is);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
float get_f32(std::istream& is);
double get_f64(std::istream& is);
std::string get_string(std::istream& is, std::size_t n);

}  // namespace le

}  // namespace longembed
