#include "contab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

namespace contab {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'A', 'B', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated checkpoint");
    return v;
}

}  // namespace

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::istringstream ss(s);
    std::mt19937_64 rng;
    ss >> rng;
    if (!ss) throw DataError("corrupt RNG state in checkpoint");
    return rng;
}

std::uint64_t parameter_fingerprint(const ModelParameters& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : params.tensors()) {
        const std::string_view bytes(reinterpret_cast<const char*>(t.value->data()),
                                     static_cast<std::size_t>(t.value->size()) * sizeof(double));
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const nlohmann::json& train_config,
                     const std::string& kind) {
    nlohmann::json header;
    header["kind"] = kind;
    header["model_config"] = state.model.to_json();
    header["train_config"] = train_config;
    header["step"] = state.step;
    header["preprocessor_hash"] = state.preprocessor_hash;
    header["data_rng"] = rng_to_string(state.data_rng);
    header["corruption_rng"] = rng_to_string(state.corruption_rng);

    std::vector<const Matrix*> payload;
    auto& index = header["tensors"] = nlohmann::json::array();
    for (const auto& [prefix, set] : {std::pair{"", &state.params}, {"rmsprop.", &state.accumulators}}) {
        for (const auto& t : set->tensors()) {
            index.push_back({{"name", std::string(prefix) + t.name}, {"shape", {t.value->rows(), t.value->cols()}}});
            payload.push_back(t.value);
        }
    }

    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Matrix* m : payload)
        out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a checkpoint file: " + path.string());
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto len = read_pod<std::uint64_t>(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header");
    const auto header = nlohmann::json::parse(text);

    CheckpointFile file;
    file.kind = header.at("kind").get<std::string>();
    file.train_config = header.at("train_config");
    auto& st = file.state;
    st.model = ModelConfig::from_json(header.at("model_config"));
    st.step = header.at("step").get<std::uint64_t>();
    st.preprocessor_hash = header.at("preprocessor_hash").get<std::uint64_t>();
    st.data_rng = rng_from_string(header.at("data_rng").get<std::string>());
    st.corruption_rng = rng_from_string(header.at("corruption_rng").get<std::string>());
    st.params = ModelParameters::zeros(st.model);
    st.accumulators = ModelParameters::zeros(st.model);

    std::vector<TensorRef> targets;
    for (auto& t : st.params.tensors()) targets.push_back(t);
    for (auto& t : st.accumulators.tensors()) targets.push_back({"rmsprop." + t.name, t.value});
    const auto& index = header.at("tensors");
    if (index.size() != targets.size()) throw DataError("checkpoint tensor count does not match its model config");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& entry = index[i];
        const auto rows = entry.at("shape")[0].get<Eigen::Index>();
        const auto cols = entry.at("shape")[1].get<Eigen::Index>();
        Matrix& m = *targets[i].value;
        if (entry.at("name").get<std::string>() != targets[i].name || rows != m.rows() || cols != m.cols())
            throw DataError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match model layout");
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint payload");
    }
    return file;
}

}  // namespace contab
