#include "secsched/agents/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "secsched/io.hpp"
#include "secsched/simenv.hpp"

namespace secsched::agents {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const NetworkBlob& PolicyCheckpoint::network(const std::string& name) const
{
    for (const auto& n : networks) {
        if (n.name == name) {
            return n;
        }
    }
    throw DataError("checkpoint: missing network '" + name + "'");
}

const FloatBlob* PolicyCheckpoint::optimizer_blob(const std::string& name) const
{
    for (const auto& b : optimizer) {
        if (b.name == name) {
            return &b;
        }
    }
    return nullptr;
}

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void append_floats(std::string& out, const std::vector<float>& v)
{
    const auto offset = out.size();
    out.resize(offset + v.size() * sizeof(float));
    std::memcpy(out.data() + offset, v.data(), v.size() * sizeof(float));
}

}  // namespace

std::string serialize_checkpoint(const PolicyCheckpoint& c)
{
    json h;
    h["layout_version"] = c.layout_version;
    h["algo"] = c.algo;
    h["num_nodes"] = c.num_nodes;
    h["state_version"] = c.state_version;
    h["state_size"] = c.state_size;
    h["env_steps"] = c.env_steps;
    h["updates"] = c.updates;
    h["seed"] = c.seed;
    h["config"] = c.config;
    h["normalization"] = c.normalization;
    h["metadata"] = c.metadata;
    h["networks"] = json::array();
    for (const auto& n : c.networks) {
        h["networks"].push_back({{"name", n.name},
                                 {"layer_sizes", n.layer_sizes},
                                 {"output_activation", n.output_activation},
                                 {"count", n.params.size()}});
    }
    h["optimizer"] = json::array();
    for (const auto& b : c.optimizer) {
        h["optimizer"].push_back({{"name", b.name}, {"count", b.values.size()}});
    }
    const std::string header = h.dump();

    std::string out(kCheckpointMagic, kMagicLen);
    out.push_back('\n');
    const std::uint64_t len = header.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out += header;
    for (const auto& n : c.networks) {
        append_floats(out, n.params);
    }
    for (const auto& b : c.optimizer) {
        append_floats(out, b.values);
    }
    return out;
}

PolicyCheckpoint deserialize_checkpoint(std::string_view bytes)
{
    if (bytes.size() < kMagicLen + 1 + 8 || bytes.substr(0, kMagicLen) != kCheckpointMagic) {
        throw DataError("checkpoint: bad magic, expected SECSCHED1");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + kMagicLen + 1, sizeof(len));
    const std::size_t header_at = kMagicLen + 1 + 8;
    if (len > bytes.size() - header_at) {
        throw DataError("checkpoint: header length exceeds file size");
    }
    PolicyCheckpoint c;
    std::size_t total = 0;
    try {
        const auto h = json::parse(bytes.substr(header_at, len));
        c.layout_version = h.at("layout_version").get<int>();
        if (c.layout_version != kCheckpointLayoutVersion) {
            throw DataError("checkpoint: layout version " + std::to_string(c.layout_version) +
                            " is not supported (expected " + std::to_string(kCheckpointLayoutVersion) + ")");
        }
        c.algo = h.at("algo").get<std::string>();
        c.num_nodes = h.at("num_nodes").get<int>();
        c.state_version = h.at("state_version").get<int>();
        c.state_size = h.at("state_size").get<int>();
        c.env_steps = h.at("env_steps").get<std::int64_t>();
        c.updates = h.at("updates").get<std::int64_t>();
        c.seed = h.at("seed").get<std::uint64_t>();
        c.config = h.at("config");
        c.normalization = h.at("normalization");
        c.metadata = h.value("metadata", json::object());
        for (const auto& n : h.at("networks")) {
            NetworkBlob b;
            b.name = n.at("name").get<std::string>();
            b.layer_sizes = n.at("layer_sizes").get<std::vector<int>>();
            b.output_activation = n.at("output_activation").get<std::string>();
            b.params.resize(n.at("count").get<std::size_t>());
            total += b.params.size();
            c.networks.push_back(std::move(b));
        }
        for (const auto& o : h.at("optimizer")) {
            FloatBlob b;
            b.name = o.at("name").get<std::string>();
            b.values.resize(o.at("count").get<std::size_t>());
            total += b.values.size();
            c.optimizer.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }
    const std::size_t payload = bytes.size() - header_at - len;
    if (payload != total * sizeof(float)) {
        throw DataError("checkpoint: header declares " + std::to_string(total * sizeof(float)) +
                        " payload bytes, file has " + std::to_string(payload));
    }
    const char* p = bytes.data() + header_at + len;
    auto read = [&](std::vector<float>& v) {
        std::memcpy(v.data(), p, v.size() * sizeof(float));
        p += v.size() * sizeof(float);
    };
    for (auto& n : c.networks) {
        read(n.params);
    }
    for (auto& b : c.optimizer) {
        read(b.values);
    }
    return c;
}

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::filesystem::path& path)
{
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

PolicyCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

NetworkBlob to_blob(const std::string& name, const nn::Mlp<float>& net)
{
    return NetworkBlob{name, net.layer_sizes,
                       net.output_activation == nn::Activation::Tanh ? "tanh" : "identity", nn::flatten(net)};
}

nn::Mlp<float> from_blob(const NetworkBlob& blob)
{
    const auto act = blob.output_activation == "tanh" ? nn::Activation::Tanh : nn::Activation::Identity;
    auto net = nn::zero_mlp<float>(blob.layer_sizes, act);
    try {
        nn::unflatten(net, blob.params.data(), blob.params.size());
    } catch (const nn::ShapeError& e) {
        throw DataError("checkpoint network '" + blob.name + "': " + e.what());
    }
    return net;
}

FloatBlob adam_blob(const std::string& name, const nn::AdamState<float>& opt, const nn::Mlp<float>& net)
{
    auto holder = net;
    FloatBlob out{name, {static_cast<float>(opt.step)}};
    holder.weights = opt.m_weights;
    holder.biases = opt.m_biases;
    auto m = nn::flatten(holder);
    holder.weights = opt.v_weights;
    holder.biases = opt.v_biases;
    auto v = nn::flatten(holder);
    out.values.insert(out.values.end(), m.begin(), m.end());
    out.values.insert(out.values.end(), v.begin(), v.end());
    return out;
}

void restore_adam(const FloatBlob& blob, nn::AdamState<float>& opt, const nn::Mlp<float>& net)
{
    const auto n = net.num_parameters();
    if (blob.values.size() != 1 + 2 * n) {
        throw DataError("checkpoint optimizer '" + blob.name + "' has the wrong size");
    }
    opt.step = static_cast<std::int64_t>(blob.values[0]);
    auto holder = net;
    nn::unflatten(holder, blob.values.data() + 1, n);
    opt.m_weights = holder.weights;
    opt.m_biases = holder.biases;
    nn::unflatten(holder, blob.values.data() + 1 + n, n);
    opt.v_weights = holder.weights;
    opt.v_biases = holder.biases;
}

void check_compatible(const PolicyCheckpoint& ckpt, int num_nodes)
{
    if (ckpt.num_nodes != num_nodes || ckpt.state_version != kStateLayoutVersion ||
        ckpt.state_size != state_size(num_nodes)) {
        throw DataError("checkpoint was trained for |V|=" + std::to_string(ckpt.num_nodes) + " (state layout v" +
                        std::to_string(ckpt.state_version) + ", " + std::to_string(ckpt.state_size) +
                        " features) but the scenario has |V|=" + std::to_string(num_nodes) + " (state layout v" +
                        std::to_string(kStateLayoutVersion) + ", " + std::to_string(state_size(num_nodes)) +
                        " features)");
    }
}

}  // namespace secsched::agents
