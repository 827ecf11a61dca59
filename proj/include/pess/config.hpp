#pragma once

#include <map>
#include <string>

#include "pess/pipeline.hpp"
#include "pess/seq2seq.hpp"

namespace pess {

// Flat INI-style application config with [data], [model], [train] and
// [embedder] sections. Unknown sections or keys are rejected.
struct AppConfig {
    std::string train_path;
    std::string valid_path;
    std::string test_path;
    std::string data_format = "persona-chat";  // or "esconv"

    ModelConfig model;
    TrainConfig train;

    std::string embedder_name = "hashed-ngram";
    std::map<std::string, std::string> embedder_options;

    void validate() const;
};

AppConfig load_app_config(const std::string& path);
AppConfig parse_app_config(const std::string& text, const std::string& origin = "<config>");

}  // namespace pess
