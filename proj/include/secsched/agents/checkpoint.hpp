#pragma once

// Binary policy checkpoint.
//
//   bytes 0..8   magic "SECSCHED1"
//   byte  9      '\n'
//   bytes 10..17 header length H, uint64 little-endian
//   next H bytes JSON header
//   remainder    float32 little-endian payload
//
// The header lists `networks` then `optimizer` blobs, each with a float
// count; the payload is those arrays concatenated in the listed order. Each
// network is stored layer by layer, weights row-major then biases. PPO
// networks are written actor trunk, node head, reuse head, critic.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "secsched/neural.hpp"

namespace secsched::agents {

inline constexpr char kCheckpointMagic[] = "SECSCHED1";
inline constexpr int kCheckpointLayoutVersion = 1;

struct NetworkBlob {
    std::string name;
    std::vector<int> layer_sizes;
    std::string output_activation;  // "identity" | "tanh"
    std::vector<float> params;
};

struct FloatBlob {
    std::string name;
    std::vector<float> values;
};

struct PolicyCheckpoint {
    int layout_version = kCheckpointLayoutVersion;
    std::string algo;  // "ppo" | "dqn"
    int num_nodes = 0;
    int state_version = 0;
    int state_size = 0;
    std::int64_t env_steps = 0;
    std::int64_t updates = 0;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json normalization = nlohmann::json::object();
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<NetworkBlob> networks;
    std::vector<FloatBlob> optimizer;

    const NetworkBlob& network(const std::string& name) const;
    const FloatBlob* optimizer_blob(const std::string& name) const;
};

std::string serialize_checkpoint(const PolicyCheckpoint& ckpt);
PolicyCheckpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::filesystem::path& path);
PolicyCheckpoint load_checkpoint(const std::filesystem::path& path);

NetworkBlob to_blob(const std::string& name, const nn::Mlp<float>& net);
nn::Mlp<float> from_blob(const NetworkBlob& blob);

// Adam moments laid out like the network's parameters: m then v.
FloatBlob adam_blob(const std::string& name, const nn::AdamState<float>& opt, const nn::Mlp<float>& net);
void restore_adam(const FloatBlob& blob, nn::AdamState<float>& opt, const nn::Mlp<float>& net);

// Throws DataError naming both sides when the checkpoint does not fit a
// scenario with `num_nodes` nodes and the current state layout.
void check_compatible(const PolicyCheckpoint& ckpt, int num_nodes);

}  // namespace secsched::agents
