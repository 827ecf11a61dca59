#include "pess/config.hpp"

#include <fstream>
#include <sstream>

#include "pess/errors.hpp"
#include "pess/text.hpp"

namespace pess {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + value +
                          "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + value + "'");
}

}  // namespace

void AppConfig::validate() const {
    if (data_format != "persona-chat" && data_format != "esconv")
        throw ConfigError("data.format must be 'persona-chat' or 'esconv', got '" + data_format +
                          "'");
    try {
        model.validate();
        train.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
}

AppConfig parse_app_config(const std::string& text, const std::string& origin) {
    AppConfig config;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;

    while (std::getline(in, line)) {
        ++line_no;
        const size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "data" && section != "model" && section != "train" &&
                section != "embedder")
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown section [" +
                                  section + "]");
            continue;
        }

        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": key '" + key + "' appears before any section");

        const std::string qualified = section + "." + key;
        if (section == "data") {
            if (key == "train") config.train_path = value;
            else if (key == "valid") config.valid_path = value;
            else if (key == "test") config.test_path = value;
            else if (key == "format") config.data_format = value;
            else throw ConfigError(origin + ": unknown config key '" + qualified + "'");
        } else if (section == "model") {
            if (key == "d_model") config.model.d_model = to_int(qualified, value);
            else if (key == "n_layers") config.model.n_layers = to_int(qualified, value);
            else if (key == "n_heads") config.model.n_heads = to_int(qualified, value);
            else if (key == "ffn_dim") config.model.ffn_dim = to_int(qualified, value);
            else if (key == "max_len") config.model.max_len = to_int(qualified, value);
            else if (key == "dropout") config.model.dropout = to_double(qualified, value);
            else throw ConfigError(origin + ": unknown config key '" + qualified + "'");
        } else if (section == "train") {
            if (key == "epochs_total") config.train.epochs_total = to_int(qualified, value);
            else if (key == "epochs_nll_only")
                config.train.epochs_nll_only = to_int(qualified, value);
            else if (key == "learning_rate")
                config.train.learning_rate = to_double(qualified, value);
            else if (key == "weight_decay")
                config.train.weight_decay = to_double(qualified, value);
            else if (key == "batch_size") config.train.batch_size = to_int(qualified, value);
            else if (key == "tau") config.train.tau = to_double(qualified, value);
            else if (key == "w_complete")
                config.train.loss_weights.w_complete = to_double(qualified, value);
            else if (key == "w_consist")
                config.train.loss_weights.w_consist = to_double(qualified, value);
            else if (key == "ablation") {
                try {
                    config.train.ablation = ablation_from_name(value);
                } catch (const ArgumentError& e) {
                    throw ConfigError(origin + ": " + e.what());
                }
            }
            else if (key == "seed") config.train.seed = to_u64(qualified, value);
            else if (key == "decode_max_new")
                config.train.decode_max_new = to_int(qualified, value);
            else if (key == "freeze_extractor")
                config.train.freeze_extractor = to_bool(qualified, value);
            else throw ConfigError(origin + ": unknown config key '" + qualified + "'");
        } else {  // embedder
            if (key == "provider") config.embedder_name = value;
            else if (key == "dimension" || key == "model-path")
                config.embedder_options[key] = value;
            else throw ConfigError(origin + ": unknown config key '" + qualified + "'");
        }
    }

    config.validate();
    return config;
}

AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_app_config(buf.str(), path);
}

}  // namespace pess
