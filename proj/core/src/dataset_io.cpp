#include "ropdda/dataset_io.hpp"

#include "ropdda/error.hpp"
#include "ropdda/keyvalue.hpp"

#include <fstream>
#include <sstream>

namespace ropdda::io {

namespace {

constexpr std::string_view kMagic = "ropdda-dataset";

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

[[noreturn]] void format_error(std::size_t line_no, const std::string &what) {
    throw FormatError("line " + std::to_string(line_no) + ": " + what);
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::string format_record(const Sample &s) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(40 + 2 * s.bytes.size());
    out += to_string(s.domain);
    out += ',';
    out += s.label == Label::Malicious ? '1' : '0';
    out += ',';
    out += to_string(s.origin);
    out += ',';
    for (auto b : s.bytes) {
        out += digits[b >> 4];
        out += digits[b & 0xF];
    }
    return out;
}

Sample parse_record(const std::string &line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
        const auto comma = line.find(',', start);
        if (comma == std::string::npos) format_error(line_no, "expected 4 comma-separated fields");
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    fields.push_back(line.substr(start));

    Sample s;
    if (fields[0] == "source") s.domain = Domain::Source;
    else if (fields[0] == "target") s.domain = Domain::Target;
    else format_error(line_no, "unknown domain '" + fields[0] + "'");

    if (fields[1] == "1") s.label = Label::Malicious;
    else if (fields[1] == "0") s.label = Label::Benign;
    else format_error(line_no, "label must be 0 or 1, got '" + fields[1] + "'");

    if (fields[2] == "synthesized_chain") s.origin = Origin::SynthesizedChain;
    else if (fields[2] == "scanned_payload") s.origin = Origin::ScannedPayload;
    else format_error(line_no, "unknown origin '" + fields[2] + "'");

    const std::string &hex = fields[3];
    if (hex.empty() || hex.size() % 2 != 0) format_error(line_no, "hex payload must be non-empty and even-length");
    if (hex.size() / 2 > kMaxSampleBytes) format_error(line_no, "sample longer than 512 bytes");
    s.bytes.resize(hex.size() / 2);
    for (std::size_t i = 0; i < s.bytes.size(); ++i) {
        const int hi = hex_value(hex[2 * i]), lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) format_error(line_no, "invalid hex digit");
        s.bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return s;
}

void write_dataset(const std::filesystem::path &path, const DatasetFile &file) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << kMagic << " v" << kDatasetFormatVersion << " seed=" << file.seed << '\n';
    for (auto split : {datagen::Split::Train, datagen::Split::Validation, datagen::Split::Test}) {
        const auto &samples = file.partitions.of(split);
        out << '@' << datagen::to_string(split) << ' ' << samples.size() << '\n';
        for (const auto &s : samples) out << format_record(s) << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

DatasetFile read_dataset(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    DatasetFile file;
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) format_error(line_no, "missing header");
    {
        std::istringstream hs(line);
        std::string magic, version, seed;
        hs >> magic >> version >> seed;
        if (magic != kMagic) format_error(line_no, "not a dataset file");
        if (version != "v" + std::to_string(kDatasetFormatVersion)) {
            format_error(line_no, "unsupported format version '" + version + "'");
        }
        if (!seed.starts_with("seed=")) format_error(line_no, "header lacks seed");
        try {
            file.seed = kv::to_u64(std::string_view(seed).substr(5), "seed");
        } catch (const ConfigError &) {
            format_error(line_no, "bad seed '" + seed + "'");
        }
    }

    for (auto split : {datagen::Split::Train, datagen::Split::Validation, datagen::Split::Test}) {
        ++line_no;
        if (!std::getline(in, line)) format_error(line_no, "missing @" + std::string(datagen::to_string(split)) + " section");
        const std::string tag = "@" + std::string(datagen::to_string(split)) + " ";
        if (!line.starts_with(tag)) format_error(line_no, "expected '" + tag + "<count>'");
        std::size_t count = 0;
        try {
            count = static_cast<std::size_t>(kv::to_u64(std::string_view(line).substr(tag.size()), "count"));
        } catch (const ConfigError &) {
            format_error(line_no, "bad section count");
        }
        auto &samples = file.partitions.of(split);
        samples.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            ++line_no;
            if (!std::getline(in, line)) {
                format_error(line_no, "file truncated: section @" + std::string(datagen::to_string(split)) +
                                          " declares " + std::to_string(count) + " records, found " +
                                          std::to_string(i));
            }
            samples.push_back(parse_record(line, line_no));
        }
    }
    if (std::getline(in, line)) format_error(line_no + 1, "trailing data after last section");
    return file;
}

std::string format_image_spec(const datagen::ImageSpec &spec, const std::string &prefix) {
    auto join = [](const auto &arr) {
        std::string s;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (i) s += ',';
            s += kv::format_double(arr[i]);
        }
        return s;
    };
    std::ostringstream out;
    out << prefix << "size = " << spec.size << '\n';
    out << prefix << "base_address = " << spec.base_address << '\n';
    out << prefix << "gadget_density = " << kv::format_double(spec.gadget_density) << '\n';
    out << prefix << "class_weights = " << join(spec.class_weights) << '\n';
    out << prefix << "register_weights = " << join(spec.register_weights) << '\n';
    out << prefix << "junk_rate = " << kv::format_double(spec.junk_rate) << '\n';
    return out.str();
}

void write_image(const std::filesystem::path &stem, const datagen::SyntheticImage &image) {
    auto bin = stem;
    bin += ".bin";
    auto meta = stem;
    meta += ".meta";
    {
        std::ofstream out(bin, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + bin.string());
        const auto &bytes = image.image.bytes();
        out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + bin.string());
    }
    std::ofstream out(meta, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + meta.string());
    out << "# ropdda image sidecar\n";
    out << "seed = " << image.seed << '\n';
    out << "gadget_count = " << image.gadget_offsets.size() << '\n';
    out << format_image_spec(image.spec, "");
    if (!out) throw IoError("write failed for " + meta.string());
}

datagen::SyntheticImage read_image(const std::filesystem::path &stem) {
    auto bin = stem;
    bin += ".bin";
    auto meta = stem;
    meta += ".meta";
    const std::string raw = read_text(bin);
    datagen::ImageSpec spec;
    std::uint64_t seed = 0;
    std::size_t gadget_count = 0;
    try {
        for (const auto &e : kv::parse(read_text(meta))) {
            if (e.key == "seed") seed = kv::to_u64(e.value, e.key);
            else if (e.key == "gadget_count") gadget_count = static_cast<std::size_t>(kv::to_u64(e.value, e.key));
            else if (!kv::set_image_field(spec, e.key, e.value)) {
                throw FormatError(meta.string() + " line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
            }
        }
    } catch (const ConfigError &err) {
        throw FormatError(meta.string() + ": " + err.what());
    }
    auto image = datagen::synthesize_image(spec, seed);
    const auto &bytes = image.image.bytes();
    if (raw.size() != bytes.size() || !std::equal(bytes.begin(), bytes.end(), raw.begin(),
                                                  [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); })) {
        throw FormatError(bin.string() + ": bytes do not match the sidecar's spec and seed");
    }
    if (image.gadget_offsets.size() != gadget_count) {
        throw FormatError(meta.string() + ": gadget_count mismatch");
    }
    return image;
}

} // namespace ropdda::io
