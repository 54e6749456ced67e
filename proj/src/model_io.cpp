#include "keyperm/model_io.hpp"

#include "keyperm/error.hpp"

namespace keyperm {

namespace {

constexpr std::uint32_t kMaxRank = 8;

void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u32_le(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32_le(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64_le(v);
}

Tensor read_tensor(ByteReader& r) {
    const auto at = r.offset();
    const std::uint32_t rank = r.u32_le();
    if (rank == 0 || rank > kMaxRank) throw FormatError("invalid tensor rank " + std::to_string(rank), at);
    Shape s(rank);
    std::size_t n = 1;
    for (auto& d : s) {
        const auto dim_at = r.offset();
        d = r.u32_le();
        if (d == 0) throw FormatError("zero tensor dimension", dim_at);
        n *= d;
        if (n > r.remaining()) throw FormatError("tensor of " + std::to_string(n) + " values exceeds file size", dim_at);
    }
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64_le();
    return Tensor(std::move(s), std::move(v));
}

}  // namespace

Bytes save_model(const Network& net) {
    ByteWriter w;
    w.text("PCLK");
    w.u32_le(kModelFormatVersion);
    w.u8(static_cast<std::uint8_t>(net.arch()));
    for (auto d : net.input_shape()) w.u32_le(static_cast<std::uint32_t>(d));
    w.u32_le(static_cast<std::uint32_t>(net.classes()));
    w.u32_le(static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
        w.u8(static_cast<std::uint8_t>(l.kind));
        w.u32_le(static_cast<std::uint32_t>(l.stride));
        w.u32_le(static_cast<std::uint32_t>(l.padding));
        w.u32_le(static_cast<std::uint32_t>(l.pool));
        w.f64_le(l.rate);
        w.u8(l.has_params() ? 1 : 0);
        if (l.has_params()) {
            write_tensor(w, l.params.weights);
            write_tensor(w, l.params.bias);
        }
    }
    return w.take();
}

Network load_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("PCLK", "model file");
    const auto ver_at = r.offset();
    const std::uint32_t version = r.u32_le();
    if (version != kModelFormatVersion)
        throw FormatError("unsupported model format version " + std::to_string(version), ver_at);
    const auto arch_at = r.offset();
    const std::uint8_t arch = r.u8();
    if (arch < static_cast<std::uint8_t>(Arch::fgsm) || arch > static_cast<std::uint8_t>(Arch::custom))
        throw FormatError("unknown architecture tag " + std::to_string(arch), arch_at);
    Shape input(3);
    for (auto& d : input) d = r.u32_le();
    const std::size_t classes = r.u32_le();
    const auto count_at = r.offset();
    const std::uint32_t count = r.u32_le();
    if (count == 0 || count > 1024) throw FormatError("implausible layer count " + std::to_string(count), count_at);
    std::vector<Layer> layers;
    layers.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto kind_at = r.offset();
        const std::uint8_t kind = r.u8();
        if (kind < static_cast<std::uint8_t>(LayerKind::conv2d) || kind > static_cast<std::uint8_t>(LayerKind::flatten))
            throw FormatError("unknown layer kind " + std::to_string(kind), kind_at);
        Layer l;
        l.kind = static_cast<LayerKind>(kind);
        l.stride = r.u32_le();
        l.padding = r.u32_le();
        l.pool = r.u32_le();
        l.rate = r.f64_le();
        const auto hp_at = r.offset();
        const bool has_params = r.u8() != 0;
        if (has_params != l.has_params())
            throw FormatError("parameter flag does not match layer kind " + to_string(l.kind), hp_at);
        if (has_params) {
            Tensor wts = read_tensor(r);
            Tensor b = read_tensor(r);
            l.params = LayerParams(std::move(wts), std::move(b));
        }
        layers.push_back(std::move(l));
    }
    r.expect_end("model file");
    try {
        return Network(static_cast<Arch>(arch), std::move(input), classes, std::move(layers));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("model file describes an inconsistent network: ") + e.what(), r.offset());
    }
}

void save_model_file(const Network& net, const std::filesystem::path& path) {
    write_file(path, save_model(net));
}

Network load_model_file(const std::filesystem::path& path) {
    Bytes b = read_file(path);
    try {
        return load_model(b);
    } catch (const FormatError& e) {
        throw FormatError("'" + path.string() + "': " + e.what(), e.offset());
    }
}

}  // namespace keyperm
