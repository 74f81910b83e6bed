#include "foqus/textio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unistd.h>

namespace foqus {

std::string format_real(double v)
{
    if (!std::isfinite(v))
        throw std::invalid_argument("cannot serialize non-finite real");
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{})
        throw std::runtime_error("to_chars failed");
    std::string s(buf, end);
    // Keep reals recognisable as reals in JSON ("1" -> "1.0").
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

void JsonLine::key(std::string_view k)
{
    if (!first_)
        body_ += ',';
    first_ = false;
    body_ += '"';
    body_ += k;
    body_ += "\":";
}

JsonLine& JsonLine::field(std::string_view k, std::int64_t v)
{
    key(k);
    body_ += std::to_string(v);
    return *this;
}

JsonLine& JsonLine::field(std::string_view k, double v)
{
    key(k);
    body_ += format_real(v);
    return *this;
}

JsonLine& JsonLine::field(std::string_view k, std::string_view v)
{
    key(k);
    body_ += nlohmann::json(std::string(v)).dump();
    return *this;
}

JsonLine& JsonLine::field(std::string_view k, std::span<const double> v)
{
    key(k);
    body_ += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i)
            body_ += ',';
        body_ += format_real(v[i]);
    }
    body_ += ']';
    return *this;
}

JsonLine& JsonLine::raw(std::string_view k, std::string_view json)
{
    key(k);
    body_ += json;
    return *this;
}

void ensure_can_write(const std::filesystem::path& path, bool force)
{
    if (!force && std::filesystem::exists(path))
        throw std::runtime_error("output file " + path.string() + " exists (use --force to overwrite)");
}

AtomicFile::AtomicFile(std::filesystem::path target, bool force) : target_(std::move(target))
{
    ensure_can_write(target_, force);
    temp_ = target_;
    temp_ += ".tmp-" + std::to_string(::getpid());
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_)
        throw std::runtime_error("cannot open " + temp_.string() + " for writing");
}

AtomicFile::~AtomicFile()
{
    if (!committed_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(temp_, ec);
    }
}

void AtomicFile::commit()
{
    out_.flush();
    if (!out_)
        throw std::runtime_error("write to " + temp_.string() + " failed");
    out_.close();
    std::filesystem::rename(temp_, target_);
    committed_ = true;
}

std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        lines.push_back(std::move(line));
    return lines;
}

nlohmann::json parse_json_line(const std::string& text, const std::string& where, std::size_t line_no)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(where + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object())
        throw FormatError(where + ":" + std::to_string(line_no) + ": expected a JSON object");
    return j;
}

void LineContext::fail(const std::string& what) const
{
    throw FormatError(where + ":" + std::to_string(line_no) + ": " + what);
}

const nlohmann::json& LineContext::get(const nlohmann::json& obj, const char* key) const
{
    auto it = obj.find(key);
    if (it == obj.end())
        fail(std::string("missing field '") + key + "'");
    return *it;
}

std::int64_t LineContext::integer(const nlohmann::json& obj, const char* key) const
{
    const auto& v = get(obj, key);
    if (!v.is_number_integer())
        fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
}

double LineContext::real(const nlohmann::json& obj, const char* key) const
{
    const auto& v = get(obj, key);
    if (!v.is_number())
        fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
}

std::string LineContext::string(const nlohmann::json& obj, const char* key) const
{
    const auto& v = get(obj, key);
    if (!v.is_string())
        fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

std::vector<double> LineContext::reals(const nlohmann::json& obj, const char* key) const
{
    const auto& v = get(obj, key);
    if (!v.is_array())
        fail(std::string("field '") + key + "' must be an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
        if (!x.is_number())
            fail(std::string("field '") + key + "' must contain only numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

std::vector<std::int64_t> LineContext::integers(const nlohmann::json& obj, const char* key) const
{
    const auto& v = get(obj, key);
    if (!v.is_array())
        fail(std::string("field '") + key + "' must be an array");
    std::vector<std::int64_t> out;
    for (const auto& x : v) {
        if (!x.is_number_integer())
            fail(std::string("field '") + key + "' must contain only integers");
        out.push_back(x.get<std::int64_t>());
    }
    return out;
}

std::uint64_t LineContext::digest(const nlohmann::json& obj, const char* key) const
{
    const auto text = string(obj, key);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v, 16);
    if (text.size() != 16 || ec != std::errc() || end != text.data() + text.size() ||
        std::any_of(text.begin(), text.end(), [](char c) { return c >= 'A' && c <= 'F'; }))
        fail(std::string("field '") + key + "' must be a 16-digit hex digest");
    return v;
}

void LineContext::only_keys(const nlohmann::json& obj, std::initializer_list<const char*> keys) const
{
    for (const auto& [k, _] : obj.items()) {
        bool known = false;
        for (const char* allowed : keys)
            known = known || k == allowed;
        if (!known)
            fail("unknown field '" + k + "'");
    }
}

}  // namespace foqus
