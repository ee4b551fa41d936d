#include "sghf/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "sghf/sha256.hpp"

namespace sghf {

std::string params_to_json(const ParamStore& ps, const std::string& kind) {
    nlohmann::json tensors;
    for (const auto& [name, e] : ps.all()) {
        tensors[name] = {{"shape", e.tensor.shape()},
                         {"trainable", e.trainable},
                         {"data", e.tensor.vec()}};
    }
    nlohmann::json j{{"format", "sghf-params-v1"}, {"kind", kind}, {"tensors", tensors}};
    return j.dump() + "\n";
}

void params_from_json(ParamStore& ps, const std::string& text, const std::string& kind) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint json: " + std::string(e.what()));
    }
    if (j.value("format", "") != "sghf-params-v1") throw DataError("unknown checkpoint format");
    if (j.value("kind", "") != kind) {
        throw DataError("checkpoint kind mismatch: expected '" + kind + "', found '" +
                        j.value("kind", "") + "'");
    }
    const auto& tensors = j.at("tensors");
    for (const auto& [name, e] : ps.all()) {
        if (!tensors.contains(name)) throw DataError("checkpoint missing tensor: " + name);
        const auto& t = tensors.at(name);
        if (t.at("shape").get<Shape>() != e.tensor.shape()) {
            throw DataError("checkpoint shape mismatch for tensor: " + name);
        }
        auto data = t.at("data").get<std::vector<double>>();
        Tensor dst = e.tensor;
        dst.vec() = std::move(data);
    }
    if (tensors.size() != ps.all().size()) {
        throw DataError("checkpoint holds tensors unknown to this network");
    }
}

void save_params(const ParamStore& ps, const std::filesystem::path& file,
                 const std::string& kind) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + file.string());
    const std::string text = params_to_json(ps, kind);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void load_params(ParamStore& ps, const std::filesystem::path& file, const std::string& kind) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + file.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    params_from_json(ps, text, kind);
}

std::string params_checksum(const ParamStore& ps) {
    Sha256 h;
    for (const auto& [name, e] : ps.all()) {
        h.update(name);
        h.update(e.tensor.data(), sizeof(double) * static_cast<size_t>(e.tensor.numel()));
    }
    return h.hex_digest();
}

}  // namespace sghf
