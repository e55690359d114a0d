#include "longembed/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace longembed {

void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
    const auto parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        writer(out);
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw DataError("failed writing " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) + " is not a JSON object", line_no);
        }
        j["__line"] = line_no;
        rows.push_back(std::move(j));
    }
    return rows;
}

namespace {

std::string string_field(const nlohmann::json& row, const char* key, const std::filesystem::path& path) {
    const auto line = row.at("__line").get<std::size_t>();
    if (!row.contains(key) || !row.at(key).is_string()) {
        throw DataError(path.string() + ": line " + std::to_string(line) + " lacks string field '" + key + "'", line);
    }
    return row.at(key).get<std::string>();
}

template <class Writer>
void write_lines(const std::filesystem::path& path, Writer&& w) {
    write_file_atomic(path, [&](std::ostream& os) { w(os); });
}

}  // namespace

std::vector<Document> read_corpus(const std::filesystem::path& path) {
    std::vector<Document> docs;
    for (const auto& row : read_jsonl(path)) {
        docs.push_back({string_field(row, "id", path), string_field(row, "text", path)});
    }
    return docs;
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
    std::vector<PairRecord> pairs;
    for (const auto& row : read_jsonl(path)) {
        pairs.push_back({string_field(row, "query", path), string_field(row, "target", path),
                         string_field(row, "source", path)});
    }
    return pairs;
}

std::vector<TripletRecord> read_triplets(const std::filesystem::path& path, std::size_t negatives) {
    std::vector<TripletRecord> out;
    for (const auto& row : read_jsonl(path)) {
        const auto line = row.at("__line").get<std::size_t>();
        TripletRecord r{string_field(row, "query", path), string_field(row, "positive", path), {}};
        if (!row.contains("negatives") || !row.at("negatives").is_array()) {
            throw DataError(path.string() + ": line " + std::to_string(line) + " lacks array field 'negatives'", line);
        }
        for (const auto& n : row.at("negatives")) {
            if (!n.is_string()) {
                throw DataError(path.string() + ": line " + std::to_string(line) + " has a non-string negative", line);
            }
            r.negatives.push_back(n.get<std::string>());
        }
        if (r.negatives.size() != negatives) {
            throw DataError(path.string() + ": line " + std::to_string(line) + " has " +
                                std::to_string(r.negatives.size()) + " negatives, expected " +
                                std::to_string(negatives),
                            line);
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
    write_lines(path, [&](std::ostream& os) {
        for (const auto& d : docs) os << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
    });
}

void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& pairs) {
    write_lines(path, [&](std::ostream& os) {
        for (const auto& p : pairs) {
            os << nlohmann::json{{"query", p.query}, {"target", p.target}, {"source", p.source}}.dump() << '\n';
        }
    });
}

void write_triplets(const std::filesystem::path& path, const std::vector<TripletRecord>& triplets) {
    write_lines(path, [&](std::ostream& os) {
        for (const auto& t : triplets) {
            os << nlohmann::json{{"query", t.query}, {"positive", t.positive}, {"negatives", t.negatives}}.dump()
               << '\n';
        }
    });
}

namespace le {

namespace {

template <class U>
void put_uint(std::ostream& os, U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, sizeof(U));
}

template <class U>
U get_uint(std::istream& is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw DataError("truncated binary stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put_uint(os, v); }
void put_u16(std::ostream& os, std::uint16_t v) { put_uint(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
void put_f32(std::ostream& os, float v) { put_uint(os, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }
void put_bytes(std::ostream& os, const void* data, std::size_t n) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

std::uint8_t get_u8(std::istream& is) { return get_uint<std::uint8_t>(is); }
std::uint16_t get_u16(std::istream& is) { return get_uint<std::uint16_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get_uint<std::uint64_t>(is); }
float get_f32(std::istream& is) { return std::bit_cast<float>(get_uint<std::uint32_t>(is)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

std::string get_string(std::istream& is, std::size_t n) {
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated binary stream");
    return s;
}

}  // namespace le

}  // namespace longembed
