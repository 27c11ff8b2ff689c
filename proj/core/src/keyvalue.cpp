#include "ropdda/keyvalue.hpp"

#include "ropdda/error.hpp"

#include <charconv>
#include <set>

namespace ropdda::kv {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(',', start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view what) {
    throw ConfigError("key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                      std::string(what));
}

} // namespace

std::vector<Entry> parse(std::string_view text) {
    std::vector<Entry> out;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        Entry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
        if (e.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (!seen.insert(e.key).second) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + e.key + "'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::uint64_t to_u64(std::string_view value, std::string_view key) {
    std::uint64_t v = 0;
    int base = 10;
    std::string_view digits = value;
    if (digits.starts_with("0x") || digits.starts_with("0X")) {
        base = 16;
        digits.remove_prefix(2);
    }
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size()) {
        bad(key, value, "unsigned integer");
    }
    return v;
}

double to_double(std::string_view value, std::string_view key) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) bad(key, value, "number");
    return v;
}

bool to_bool(std::string_view value, std::string_view key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad(key, value, "boolean");
}

std::vector<double> to_doubles(std::string_view value, std::string_view key) {
    std::vector<double> out;
    for (auto part : split_commas(value)) out.push_back(to_double(part, key));
    return out;
}

std::vector<std::size_t> to_sizes(std::string_view value, std::string_view key) {
    std::vector<std::size_t> out;
    for (auto part : split_commas(value)) out.push_back(static_cast<std::size_t>(to_u64(part, key)));
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

bool set_image_field(datagen::ImageSpec &spec, std::string_view field, std::string_view value) {
    auto fill = [&](auto &arr) {
        auto vals = to_doubles(value, field);
        if (vals.size() != arr.size()) {
            throw ConfigError("key '" + std::string(field) + "': expected " + std::to_string(arr.size()) +
                              " comma-separated values, got " + std::to_string(vals.size()));
        }
        std::copy(vals.begin(), vals.end(), arr.begin());
    };
    if (field == "size") {
        spec.size = static_cast<std::size_t>(to_u64(value, field));
    } else if (field == "base_address") {
        const auto v = to_u64(value, field);
        if (v > 0xFFFFFFFFULL) throw ConfigError("key 'base_address': exceeds 32 bits");
        spec.base_address = static_cast<std::uint32_t>(v);
    } else if (field == "gadget_density") {
        spec.gadget_density = to_double(value, field);
    } else if (field == "class_weights") {
        fill(spec.class_weights);
    } else if (field == "register_weights") {
        fill(spec.register_weights);
    } else if (field == "junk_rate") {
        spec.junk_rate = to_double(value, field);
    } else {
        return false;
    }
    return true;
}

} // namespace ropdda::kv
