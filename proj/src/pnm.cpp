#include "attrvit/pnm.hpp"

#include <fstream>
#include <string>

#include "attrvit/errors.hpp"

namespace attrvit {

namespace {

// One header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in, const std::string& file) {
    std::string tok;
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    while (ch != EOF && !std::isspace(ch) && ch != '#') {
        tok.push_back(static_cast<char>(ch));
        ch = in.get();
    }
    if (ch == '#') in.unget();
    if (tok.empty()) throw FormatError(file + ": truncated PNM header");
    return tok;
}

int64_t header_int(std::istream& in, const std::string& file, const char* what) {
    const std::string tok = next_token(in, file);
    try {
        size_t pos = 0;
        const long long v = std::stoll(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw FormatError(file + ": bad PNM " + what + " '" + tok + "'");
    }
}

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(file + ": cannot open");

    const std::string magic = next_token(in, file);
    PnmImage img;
    if (magic == "P6")
        img.channels = 3;
    else if (magic == "P5")
        img.channels = 1;
    else
        throw FormatError(file + ": unsupported magic '" + magic + "' (want P5 or P6)");

    img.width = header_int(in, file, "width");
    img.height = header_int(in, file, "height");
    const int64_t maxval = header_int(in, file, "maxval");
    if (maxval != 255) throw FormatError(file + ": only maxval 255 is supported");
    // Exactly one whitespace byte separates header and raster.

    const size_t n = static_cast<size_t>(img.width * img.height * img.channels);
    img.pixels.resize(n);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw FormatError(file + ": truncated raster, expected " + std::to_string(n) + " bytes");
    return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw FormatError("PNM supports 1 or 3 channels, got " + std::to_string(img.channels));
    if (img.pixels.size() != static_cast<size_t>(img.width * img.height * img.channels))
        throw FormatError("PNM pixel buffer does not match geometry");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw Error(path.string() + ": write failed");
}

}  // namespace attrvit
