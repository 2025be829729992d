#include "priormoe/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace priormoe {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_line(int line, const std::string& key, const std::string& msg) {
    throw std::invalid_argument("config line " + std::to_string(line) + ": key '" + key + "': " + msg);
}

int64_t parse_int(const std::string& v, int line, const std::string& key) {
    try {
        size_t used = 0;
        int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trail");
        return x;
    } catch (...) {
        bad_line(line, key, "expected integer, got '" + v + "'");
    }
}

double parse_float(const std::string& v, int line, const std::string& key) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trail");
        return x;
    } catch (...) {
        bad_line(line, key, "expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_line(line, key, "expected true/false, got '" + v + "'");
}

}  // namespace

void TrainConfig::validate() const {
    auto reject = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("config: key '" + key + "': " + why);
    };
    if (image_size <= 0 || image_size % 32 != 0) reject("image_size", "must be a positive multiple of 32");
    if (backbone_layers <= 0 || backbone_layers % 4 != 0) reject("backbone_layers", "must be a positive multiple of 4");
    if (stages != 0 && stages != 2 && stages != 4 && stages != 6) reject("stages", "must be 0, 2, 4 or 6");
    if (stages > 0 && backbone_layers % stages != 0) {
        reject("stages", "backbone_layers must be divisible by the stage count");
    }
    if (backbone_dim % backbone_heads != 0 || backbone_dim % 4 != 0) {
        reject("backbone_dim", "must be divisible by backbone_heads and by 4");
    }
    if (backbone_dim % adapter_heads != 0) reject("adapter_heads", "must divide backbone_dim");
    if (adapter_points <= 0) reject("adapter_points", "must be positive");
    if (lr <= 0) reject("lr", "must be positive");
    if (alpha <= 0) reject("alpha", "must be positive");
    if (beta <= 0) reject("beta", "must be positive");
    if (batch_size <= 0) reject("batch_size", "must be positive");
    if (iterations < 0) reject("iterations", "must be non-negative");
    if (checkpoint_interval <= 0) reject("checkpoint_interval", "must be positive");
    if (extractor_width < 4) reject("extractor_width", "must be >= 4");
    if (decoder_width < 4) reject("decoder_width", "must be >= 4");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.image_size = image_size;
    mc.backbone_dim = backbone_dim;
    mc.backbone_layers = backbone_layers;
    mc.backbone_heads = backbone_heads;
    mc.extractor_width = extractor_width;
    mc.decoder_width = decoder_width;
    mc.adapter_heads = adapter_heads;
    mc.adapter_points = adapter_points;
    mc.stages = stages;
    mc.use_dmlp = !ablate_dmlp;
    mc.use_cda = !ablate_cda;
    mc.use_case = !ablate_case;
    mc.seed = seed;
    return mc;
}

std::string TrainConfig::serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "image_size=" << image_size << "\n";
    os << "backbone_dim=" << backbone_dim << "\n";
    os << "backbone_layers=" << backbone_layers << "\n";
    os << "backbone_heads=" << backbone_heads << "\n";
    os << "extractor_width=" << extractor_width << "\n";
    os << "decoder_width=" << decoder_width << "\n";
    os << "adapter_heads=" << adapter_heads << "\n";
    os << "adapter_points=" << adapter_points << "\n";
    os << "stages=" << stages << "\n";
    os << "lr=" << lr << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    os << "adam_beta1=" << adam_beta1 << "\n";
    os << "adam_beta2=" << adam_beta2 << "\n";
    os << "adam_eps=" << adam_eps << "\n";
    os << "iterations=" << iterations << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "alpha=" << alpha << "\n";
    os << "beta=" << beta << "\n";
    os << "seed=" << seed << "\n";
    os << "checkpoint_interval=" << checkpoint_interval << "\n";
    os << "checkpoint_fp32=" << (checkpoint_fp32 ? "true" : "false") << "\n";
    os << "ablate_dmlp=" << (ablate_dmlp ? "true" : "false") << "\n";
    os << "ablate_cda=" << (ablate_cda ? "true" : "false") << "\n";
    os << "ablate_case=" << (ablate_case ? "true" : "false") << "\n";
    return os.str();
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        const auto hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line) +
                                        ": expected key=value, got '" + raw + "'");
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }

        if (key == "image_size") cfg.image_size = static_cast<int>(parse_int(value, line, key));
        else if (key == "backbone_dim") cfg.backbone_dim = static_cast<int>(parse_int(value, line, key));
        else if (key == "backbone_layers") cfg.backbone_layers = static_cast<int>(parse_int(value, line, key));
        else if (key == "backbone_heads") cfg.backbone_heads = static_cast<int>(parse_int(value, line, key));
        else if (key == "extractor_width") cfg.extractor_width = static_cast<int>(parse_int(value, line, key));
        else if (key == "decoder_width") cfg.decoder_width = static_cast<int>(parse_int(value, line, key));
        else if (key == "adapter_heads") cfg.adapter_heads = static_cast<int>(parse_int(value, line, key));
        else if (key == "adapter_points") cfg.adapter_points = static_cast<int>(parse_int(value, line, key));
        else if (key == "stages") cfg.stages = static_cast<int>(parse_int(value, line, key));
        else if (key == "lr") cfg.lr = parse_float(value, line, key);
        else if (key == "weight_decay") cfg.weight_decay = parse_float(value, line, key);
        else if (key == "adam_beta1") cfg.adam_beta1 = parse_float(value, line, key);
        else if (key == "adam_beta2") cfg.adam_beta2 = parse_float(value, line, key);
        else if (key == "adam_eps") cfg.adam_eps = parse_float(value, line, key);
        else if (key == "iterations") cfg.iterations = static_cast<int>(parse_int(value, line, key));
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value, line, key));
        else if (key == "alpha") cfg.alpha = parse_float(value, line, key);
        else if (key == "beta") cfg.beta = parse_float(value, line, key);
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(value, line, key));
        else if (key == "checkpoint_interval") cfg.checkpoint_interval = static_cast<int>(parse_int(value, line, key));
        else if (key == "checkpoint_fp32") cfg.checkpoint_fp32 = parse_bool(value, line, key);
        else if (key == "ablate_dmlp") cfg.ablate_dmlp = parse_bool(value, line, key);
        else if (key == "ablate_cda") cfg.ablate_cda = parse_bool(value, line, key);
        else if (key == "ablate_case") cfg.ablate_case = parse_bool(value, line, key);
        else {
            throw std::invalid_argument("config line " + std::to_string(line) + ": unknown key '" +
                                        key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace priormoe
