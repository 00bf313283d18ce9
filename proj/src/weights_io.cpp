#include "headlamp/weights_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "headlamp/core.hpp"

namespace headlamp {
namespace {

constexpr std::array<char, 5> kMagic = {'H', 'L', 'M', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw FormatError("weight file truncated");
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

const Eigen::MatrixXd& WeightFile::tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return m;
    throw FormatError("weight file has no tensor '" + name + "'");
}

void write_weight_file(const std::filesystem::path& path, const WeightFile& file) {
    nlohmann::json header = file.header;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, m] : file.tensors)
        header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, file.kind);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : file.tensors) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
    if (!out) throw Error("failed writing " + path.string());
}

WeightFile read_weight_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::array<char, 5> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw FormatError(path.string() + ": not an HLMP1 weight file");

    WeightFile file;
    file.kind = get_u32(in);
    const std::uint32_t header_len = get_u32(in);
    std::string text(header_len, '\0');
    if (!in.read(text.data(), header_len)) throw FormatError("weight file header truncated");
    try {
        file.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weight file header: ") + e.what());
    }
    for (const auto& t : file.header.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = std::bit_cast<float>(get_u32(in));
        file.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    file.header.erase("tensors");
    return file;
}

}  // namespace headlamp
