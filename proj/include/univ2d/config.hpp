#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace univ2d {

/// Architecture schedule and ablation toggles.
struct ModelConfig {
    int levels = 4;
    std::vector<int> channels{32, 64, 128, 256};
    bool enable_scsm = true;
    bool enable_macr = true;
    bool enable_smf = true;
    bool shared_refinement_encoder = false;
    std::uint64_t seed = 0;

    /// Levels 0 and 1 only; mandatory for gradient checks.
    static ModelConfig tiny();
    /// Desk-scale schedule used by tests and the overfit protocols.
    static ModelConfig desk();

    /// Input height/width must be a multiple of this.
    [[nodiscard]] int spatial_divisor() const { return 1 << (levels - 1); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossWeights {
    double alpha = 0.5;
};

/// Returns the config unchanged if every invariant holds.
/// Throws LevelMismatchError, OddChannelError or ConfigError otherwise.
ModelConfig validate_config(const ModelConfig& config);

void validate_loss_weights(const LossWeights& weights);

/// Flat `key = value` document: integers, reals, booleans, quoted strings and
/// bracketed integer lists. `#` starts a comment.
class KeyValueDocument {
public:
    static KeyValueDocument parse(const std::string& text);
    static KeyValueDocument load(const std::string& path);

    [[nodiscard]] bool contains(const std::string& key) const { return values_.count(key) != 0; }
    [[nodiscard]] std::optional<std::string> raw(const std::string& key) const;
    [[nodiscard]] std::vector<std::string> keys() const;

    [[nodiscard]] std::optional<long long> get_int(const std::string& key) const;
    [[nodiscard]] std::optional<double> get_real(const std::string& key) const;
    [[nodiscard]] std::optional<bool> get_bool(const std::string& key) const;
    [[nodiscard]] std::optional<std::string> get_string(const std::string& key) const;
    [[nodiscard]] std::optional<std::vector<int>> get_int_list(const std::string& key) const;

private:
    std::map<std::string, std::string> values_;
};

/// Reads levels, channels, toggles and seed; missing keys keep `base` values.
ModelConfig model_config_from(const KeyValueDocument& doc, ModelConfig base = {});
LossWeights loss_weights_from(const KeyValueDocument& doc, LossWeights base = {});

/// Serializes back to the document format.
std::string to_document(const ModelConfig& config, const LossWeights& weights);

} // namespace univ2d
