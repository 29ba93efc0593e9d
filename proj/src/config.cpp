#include "univ2d/config.hpp"

#include "univ2d/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace univ2d {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

} // namespace

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.levels = 2;
    c.channels = {4, 8};
    return c;
}

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.levels = 2;
    c.channels = {8, 16};
    return c;
}

ModelConfig validate_config(const ModelConfig& config) {
    if (config.levels < 2) {
        throw ConfigError("levels must be >= 2, got " + std::to_string(config.levels));
    }
    if (static_cast<int>(config.channels.size()) != config.levels) {
        throw LevelMismatchError("channels has " + std::to_string(config.channels.size()) +
                                 " entries but levels = " + std::to_string(config.levels));
    }
    for (std::size_t l = 0; l < config.channels.size(); ++l) {
        const int c = config.channels[l];
        if (c <= 0) {
            throw ConfigError("channels[" + std::to_string(l) + "] must be positive");
        }
        if (c % 2 != 0) {
            throw OddChannelError("channels[" + std::to_string(l) + "] = " + std::to_string(c) +
                                  " is odd; the restoration branch splits channels in half");
        }
        if (l > 0 && c <= config.channels[l - 1]) {
            throw ConfigError("channels must be strictly increasing");
        }
    }
    return config;
}

void validate_loss_weights(const LossWeights& weights) {
    if (!(weights.alpha > 0.0)) {
        throw ConfigError("alpha must be > 0");
    }
}

KeyValueDocument KeyValueDocument::parse(const std::string& text) {
    KeyValueDocument doc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string body = trim(strip_comment(line));
        if (body.empty() || body.front() == '[') {
            // Blank lines and [section] headers are ignored; the document is flat.
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(std::string_view(body).substr(0, eq));
        std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        }
        doc.values_[key] = value;
    }
    return doc;
}

KeyValueDocument KeyValueDocument::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::optional<std::string> KeyValueDocument::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<std::string> KeyValueDocument::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : values_) {
        out.push_back(k);
    }
    return out;
}

std::optional<long long> KeyValueDocument::get_int(const std::string& key) const {
    auto v = raw(key);
    if (!v) {
        return std::nullopt;
    }
    long long out = 0;
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + *v + "'");
    }
    return out;
}

std::optional<double> KeyValueDocument::get_real(const std::string& key) const {
    auto v = raw(key);
    if (!v) {
        return std::nullopt;
    }
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v->size()) {
        throw ConfigError("key '" + key + "': expected a number, got '" + *v + "'");
    }
    return out;
}

std::optional<bool> KeyValueDocument::get_bool(const std::string& key) const {
    auto v = raw(key);
    if (!v) {
        return std::nullopt;
    }
    if (*v == "true") {
        return true;
    }
    if (*v == "false") {
        return false;
    }
    throw ConfigError("key '" + key + "': expected true/false, got '" + *v + "'");
}

std::optional<std::string> KeyValueDocument::get_string(const std::string& key) const {
    auto v = raw(key);
    if (!v) {
        return std::nullopt;
    }
    if (v->size() >= 2 && v->front() == '"' && v->back() == '"') {
        return v->substr(1, v->size() - 2);
    }
    return v;
}

std::optional<std::vector<int>> KeyValueDocument::get_int_list(const std::string& key) const {
    auto v = raw(key);
    if (!v) {
        return std::nullopt;
    }
    if (v->size() < 2 || v->front() != '[' || v->back() != ']') {
        throw ConfigError("key '" + key + "': expected a bracketed list, got '" + *v + "'");
    }
    std::vector<int> out;
    std::stringstream ss(v->substr(1, v->size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) {
            continue;
        }
        int x = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
        if (ec != std::errc() || ptr != t.data() + t.size()) {
            throw ConfigError("key '" + key + "': bad list element '" + t + "'");
        }
        out.push_back(x);
    }
    return out;
}

ModelConfig model_config_from(const KeyValueDocument& doc, ModelConfig base) {
    if (auto v = doc.get_int("levels")) {
        base.levels = static_cast<int>(*v);
    }
    if (auto v = doc.get_int_list("channels")) {
        base.channels = *v;
    }
    if (auto v = doc.get_bool("enable_scsm")) {
        base.enable_scsm = *v;
    }
    if (auto v = doc.get_bool("enable_macr")) {
        base.enable_macr = *v;
    }
    if (auto v = doc.get_bool("enable_smf")) {
        base.enable_smf = *v;
    }
    if (auto v = doc.get_bool("shared_refinement_encoder")) {
        base.shared_refinement_encoder = *v;
    }
    if (auto v = doc.get_int("seed")) {
        if (*v < 0) {
            throw ConfigError("seed must be non-negative");
        }
        base.seed = static_cast<std::uint64_t>(*v);
    }
    return base;
}

LossWeights loss_weights_from(const KeyValueDocument& doc, LossWeights base) {
    if (auto v = doc.get_real("alpha")) {
        base.alpha = *v;
    }
    return base;
}

std::string to_document(const ModelConfig& config, const LossWeights& weights) {
    std::ostringstream out;
    out << "levels = " << config.levels << "\n";
    out << "channels = [";
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        out << (i ? ", " : "") << config.channels[i];
    }
    out << "]\n";
    auto b = [](bool x) { return x ? "true" : "false"; };
    out << "enable_scsm = " << b(config.enable_scsm) << "\n";
    out << "enable_macr = " << b(config.enable_macr) << "\n";
    out << "enable_smf = " << b(config.enable_smf) << "\n";
    out << "shared_refinement_encoder = " << b(config.shared_refinement_encoder) << "\n";
    out << "seed = " << config.seed << "\n";
    out.precision(17);
    out << "alpha = " << weights.alpha << "\n";
    return out.str();
}

} // namespace univ2d
