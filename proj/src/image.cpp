#include "semeq/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace semeq {

namespace {

class PpmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reads one whitespace-delimited token, skipping '#' comments to end of line.
std::string next_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    while (pos < b.size()) {
        const char c = static_cast<char>(b[pos]);
        if (c == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size()) {
        const char c = static_cast<char>(b[pos]);
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') break;
        tok.push_back(c);
        ++pos;
    }
    if (tok.empty()) throw PpmError("ppm: truncated header");
    return tok;
}

int parse_dim(const std::string& tok, const char* what) {
    try {
        const long v = std::stol(tok);
        if (v < 1 || v > 1 << 20) throw PpmError(std::string("ppm: bad ") + what);
        return static_cast<int>(v);
    } catch (const std::logic_error&) {
        throw PpmError(std::string("ppm: bad ") + what);
    }
}

}  // namespace

std::vector<std::uint8_t> save_ppm(const Image& img) {
    if (img.width < 1 || img.height < 1 ||
        img.data.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("save_ppm: malformed image");
    const std::string header =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.data.begin(), img.data.end());
    return out;
}

Image load_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    if (next_token(bytes, pos) != "P6") throw PpmError("ppm: unsupported format (want binary P6)");
    const int w = parse_dim(next_token(bytes, pos), "width");
    const int h = parse_dim(next_token(bytes, pos), "height");
    if (next_token(bytes, pos) != "255") throw PpmError("ppm: unsupported maxval (want 255)");
    // exactly one whitespace byte separates the header from the samples
    if (pos >= bytes.size()) throw PpmError("ppm: truncated payload");
    ++pos;
    Image img(w, h);
    if (bytes.size() - pos < img.data.size()) throw PpmError("ppm: truncated payload");
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
              bytes.begin() + static_cast<std::ptrdiff_t>(pos + img.data.size()),
              img.data.begin());
    return img;
}

void save_ppm_file(const Image& img, const std::string& path) {
    const auto bytes = save_ppm(img);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ppm: cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("ppm: write failed: " + path);
}

Image load_ppm_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ppm: cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return load_ppm(bytes);
}

Tensor<float> to_unit_tensor(const Image& img) {
    Tensor<float> t({1, 3, img.height, img.width});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at4(0, ch, y, x) = static_cast<float>(img.at(x, y, ch)) / 255.0f;
    return t;
}

Image from_unit_tensor(const Tensor<float>& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
        throw std::invalid_argument("from_unit_tensor: want [1,3,h,w], got " +
                                    shape_str(t.shape));
    Image img(t.dim(3), t.dim(2));
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = static_cast<double>(t.at4(0, ch, y, x));
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                img.at(x, y, ch) = clamp_u8(round_half_away(v * 255.0));
            }
    return img;
}

}  // namespace semeq
