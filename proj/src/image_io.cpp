#include "sunsense/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sunsense {

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, long offset,
                             const std::string& what) {
    throw Error(ErrorCode::ParseError,
                path.string() + ": " + what + " (byte " + std::to_string(offset) + ")");
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Skips PGM whitespace/comments, returns the next integer token.
long next_pgm_int(const std::string& buf, size_t& pos, const std::filesystem::path& path) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
        parse_fail(path, static_cast<long>(pos), "expected integer in PGM header");
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
        v = v * 10 + (buf[pos] - '0');
        ++pos;
    }
    return v;
}

} // namespace

Image load_pgm(const std::filesystem::path& path) {
    const std::string buf = read_all(path);
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        parse_fail(path, 0, "not a P5 PGM");
    size_t pos = 2;
    const long w = next_pgm_int(buf, pos, path);
    const long h = next_pgm_int(buf, pos, path);
    const long maxval = next_pgm_int(buf, pos, path);
    if (w <= 0 || h <= 0)
        parse_fail(path, static_cast<long>(pos), "non-positive dimensions");
    if (maxval != 255 && maxval != 65535)
        throw Error(ErrorCode::Unsupported,
                    path.string() + ": unsupported maxval " + std::to_string(maxval));
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        parse_fail(path, static_cast<long>(pos), "missing header terminator");
    ++pos; // single whitespace after maxval

    const int depth = maxval == 255 ? 8 : 16;
    const size_t bytes_per = depth == 8 ? 1 : 2;
    const size_t need = static_cast<size_t>(w) * h * bytes_per;
    if (buf.size() - pos < need)
        // Offset of the first missing byte, relative to the payload start.
        parse_fail(path, static_cast<long>(buf.size() - pos),
                   "truncated payload, expected " + std::to_string(need) + " bytes");

    Image img(static_cast<int>(w), static_cast<int>(h), 1.0, depth);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    if (depth == 8) {
        for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = p[i];
    } else {
        for (size_t i = 0; i < img.data.size(); ++i)
            img.data[i] = (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    }
    return img;
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
    img.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    const long maxval = img.depth_bits == 8 ? 255 : 65535;
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    if (img.depth_bits == 8) {
        std::vector<unsigned char> row(img.data.size());
        for (size_t i = 0; i < img.data.size(); ++i)
            row[i] = static_cast<unsigned char>(std::lround(img.data[i]));
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    } else {
        std::vector<unsigned char> row(img.data.size() * 2);
        for (size_t i = 0; i < img.data.size(); ++i) {
            const unsigned v = static_cast<unsigned>(std::lround(img.data[i]));
            row[2 * i] = static_cast<unsigned char>(v >> 8); // big-endian
            row[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

Image load_raw_float(const std::filesystem::path& path) {
    auto sidecar = path;
    sidecar += ".json";
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_all(sidecar));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, sidecar.string() + ": " + e.what());
    }
    const int w = meta.at("width").get<int>();
    const int h = meta.at("height").get<int>();
    const double pitch = meta.value("pitch", 1.0);

    const std::string buf = read_all(path);
    const size_t need = static_cast<size_t>(w) * h * 4;
    if (buf.size() < need)
        parse_fail(path, static_cast<long>(buf.size()), "truncated float payload");

    Image img(w, h, pitch, 16);
    for (size_t i = 0; i < img.data.size(); ++i) {
        float f;
        std::memcpy(&f, buf.data() + 4 * i, 4); // little-endian host assumed
        img.data[i] = f;
    }
    return img;
}

void save_raw_float(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    for (double v : img.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    auto sidecar = path;
    sidecar += ".json";
    std::ofstream meta(sidecar);
    meta << "{\"width\":" << img.width << ",\"height\":" << img.height
         << ",\"pitch\":" << img.pitch_mm << "}\n";
}

Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] == 'P' && magic[1] == '5') return load_pgm(path);
    return load_raw_float(path);
}

EventStream load_event_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    EventStream ev;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find("reset_us=");
            if (eq != std::string::npos)
                ev.reset_time_us = std::stod(line.substr(eq + 9));
            continue;
        }
        if (!header_seen) {
            if (line.rfind("pixel,t_us", 0) != 0)
                throw Error(ErrorCode::ParseError,
                            path.string() + ": expected header 'pixel,t_us'");
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw Error(ErrorCode::ParseError, path.string() + ": bad event row: " + line);
        ev.events.push_back({std::stoi(line.substr(0, comma)),
                             std::stod(line.substr(comma + 1))});
    }
    return ev;
}

void save_event_csv(const EventStream& ev, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "# reset_us=" << ev.reset_time_us << "\n";
    out << "pixel,t_us\n";
    char buf[64];
    for (const auto& e : ev.events) {
        std::snprintf(buf, sizeof buf, "%d,%.9g\n", e.pixel, e.t_us);
        out << buf;
    }
}

void save_profile_csv(const Image& profile, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    char buf[64];
    for (double v : profile.data) {
        std::snprintf(buf, sizeof buf, "%.9g\n", v);
        out << buf;
    }
}

} // namespace sunsense
