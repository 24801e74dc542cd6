#include "instab/checkpoint.hpp"

#include "instab/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace instab {

namespace {

constexpr char kMagic[8] = {'I', 'N', 'S', 'T', 'A', 'B', '0', '1'};

static_assert(std::endian::native == std::endian::little, "payload is written in native (little-endian) order");

} // namespace

const Tensor& TensorBundle::get(const std::string& name) const
{
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t.tensor;
        }
    }
    throw IoError("bundle has no tensor named '" + name + "'");
}

void write_bundle(const std::filesystem::path& path, const std::string& kind, const TensorBundle& bundle)
{
    nlohmann::json header = bundle.header.is_null() ? nlohmann::json::object() : bundle.header;
    header["format_version"] = kFileFormatVersion;
    header["kind"] = kind;
    auto& list = header["tensors"] = nlohmann::json::array();
    for (const auto& t : bundle.tensors) {
        list.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    const std::uint64_t n = text.size();
    os.write(kMagic, sizeof kMagic);
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : bundle.tensors) {
        os.write(reinterpret_cast<const char*>(t.tensor.raw()),
                 static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
    }
    if (!os) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

TensorBundle read_bundle(const std::filesystem::path& path, const std::string& expected_kind)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    char magic[8];
    std::uint64_t n = 0;
    is.read(magic, sizeof magic);
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError("'" + path.string() + "' is not an instab tensor file");
    }
    std::string text(n, '\0');
    is.read(text.data(), static_cast<std::streamsize>(n));
    TensorBundle b;
    try {
        b.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt header in '" + path.string() + "': " + e.what());
    }
    if (b.header.value("format_version", 0) != kFileFormatVersion) {
        throw IoError("unsupported format version in '" + path.string() + "'");
    }
    if (!expected_kind.empty() && b.header.value("kind", std::string{}) != expected_kind) {
        throw IoError("'" + path.string() + "' holds a " + b.header.value("kind", std::string{"?"}) +
                      ", expected " + expected_kind);
    }
    for (const auto& e : b.header.at("tensors")) {
        Tensor::Shape shape = e.at("shape").get<Tensor::Shape>();
        std::vector<double> data(shape_numel(shape));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) {
            throw IoError("truncated payload in '" + path.string() + "'");
        }
        b.tensors.push_back({e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
    }
    return b;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t)
{
    write_bundle(path, "tensor", TensorBundle{{}, {{"data", t}}});
}

Tensor load_tensor(const std::filesystem::path& path)
{
    return read_bundle(path, "tensor").get("data");
}

std::vector<NamedTensor> params_to_named(const NetworkParams& params, const std::string& prefix)
{
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        if (l.weight.empty()) {
            continue;
        }
        const std::string base = (prefix.empty() ? "" : prefix + "/") + std::to_string(i);
        out.push_back({base + "/weight", l.weight});
        out.push_back({base + "/bias", l.bias});
    }
    return out;
}

NetworkParams params_from_bundle(const NetworkSpec& spec, const TensorBundle& bundle, const std::string& prefix)
{
    NetworkParams p = zero_params(spec);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        if (p.layers[i].weight.empty()) {
            continue;
        }
        const std::string base = (prefix.empty() ? "" : prefix + "/") + std::to_string(i);
        p.layers[i].weight = bundle.get(base + "/weight");
        p.layers[i].bias = bundle.get(base + "/bias");
    }
    check_params(spec, p);
    return p;
}

void save_network(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params,
                  const nlohmann::json& extra)
{
    check_params(spec, params);
    TensorBundle b;
    b.header = extra.is_null() ? nlohmann::json::object() : extra;
    b.header["spec"] = spec;
    auto& shapes = b.header["layer_shapes"] = nlohmann::json::array();
    for (const auto& l : params.layers) {
        shapes.push_back(l.weight.empty() ? nlohmann::json(nullptr)
                                          : nlohmann::json{{"weight", l.weight.shape()}, {"bias", l.bias.shape()}});
    }
    b.tensors = params_to_named(params, "");
    write_bundle(path, "network", b);
}

LoadedNetwork load_network(const std::filesystem::path& path)
{
    auto b = read_bundle(path, "network");
    LoadedNetwork out;
    out.spec = b.header.at("spec").get<NetworkSpec>();
    out.params = params_from_bundle(out.spec, b, "");
    out.header = std::move(b.header);
    return out;
}

} // namespace instab
