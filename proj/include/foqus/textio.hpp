#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace foqus {

/// Malformed input file. The message carries the file and line number.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal that parses back to exactly `v` (std::to_chars). v must be finite.
std::string format_real(double v);

/// Builds one line of a JSON object with keys in insertion order and reals in
/// shortest round-trip form.
class JsonLine {
public:
    JsonLine& field(std::string_view key, std::int64_t v);
    JsonLine& field(std::string_view key, double v);
    JsonLine& field(std::string_view key, std::string_view v);
    JsonLine& field(std::string_view key, std::span<const double> v);
    JsonLine& raw(std::string_view key, std::string_view json);
    std::string str() const { return body_ + "}"; }

private:
    void key(std::string_view k);
    std::string body_ = "{";
    bool first_ = true;
};

/// Output file that only appears at its final path on commit(). If the object
/// is destroyed uncommitted (an exception unwound past it), the temporary is
/// removed and nothing is left behind.
class AtomicFile {
public:
    AtomicFile(std::filesystem::path target, bool force);
    AtomicFile(const AtomicFile&) = delete;
    AtomicFile& operator=(const AtomicFile&) = delete;
    ~AtomicFile();

    std::ofstream& stream() { return out_; }
    void commit();

private:
    std::filesystem::path target_;
    std::filesystem::path temp_;
    std::ofstream out_;
    bool committed_ = false;
};

/// Throws if `path` exists and overwriting was not requested.
void ensure_can_write(const std::filesystem::path& path, bool force);

/// Reads a whole file as LF-separated lines (a trailing LF does not produce an
/// empty last line). Throws std::runtime_error if the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Parses one line as a JSON object; errors name the file and 1-based line.
nlohmann::json parse_json_line(const std::string& text, const std::string& where, std::size_t line_no);

/// Typed field access with diagnostics naming the key and line.
struct LineContext {
    std::string where;
    std::size_t line_no;

    [[noreturn]] void fail(const std::string& what) const;
    const nlohmann::json& get(const nlohmann::json& obj, const char* key) const;
    std::int64_t integer(const nlohmann::json& obj, const char* key) const;
    double real(const nlohmann::json& obj, const char* key) const;
    std::string string(const nlohmann::json& obj, const char* key) const;
    std::vector<double> reals(const nlohmann::json& obj, const char* key) const;
    std::vector<std::int64_t> integers(const nlohmann::json& obj, const char* key) const;
    /// 16-digit lowercase hex string, as written by to_hex.
    std::uint64_t digest(const nlohmann::json& obj, const char* key) const;
    void only_keys(const nlohmann::json& obj, std::initializer_list<const char*> keys) const;
};

}  // namespace foqus
