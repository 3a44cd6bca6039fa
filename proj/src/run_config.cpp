#include "maunet/run_config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "maunet/error.hpp"

namespace maunet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const long n = std::strtol(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0') {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    return static_cast<int>(n);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0') {
        throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
    return static_cast<std::uint64_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (errno != 0 || end == v.c_str() || *end != '\0') {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
    return d;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string format_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " is not a key=value pair: '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "model.in_channels") c.model.in_channels = parse_int(key, value);
        else if (key == "model.base_width") c.model.base_width = parse_int(key, value);
        else if (key == "model.depth") c.model.depth = parse_int(key, value);
        else if (key == "model.bottleneck_ratio") c.model.bottleneck_ratio = parse_int(key, value);
        else if (key == "model.enable_attention_gates")
            c.model.enable_attention_gates = parse_bool(key, value);
        else if (key == "model.enable_dual_attention")
            c.model.enable_dual_attention = parse_bool(key, value);
        else if (key == "model.enable_multiscale")
            c.model.enable_multiscale = parse_bool(key, value);
        else if (key == "model.fused_channels") c.model.fused_channels = parse_int(key, value);
        else if (key == "train.learning_rate") c.train.learning_rate = parse_double(key, value);
        else if (key == "train.beta1") c.train.beta1 = parse_double(key, value);
        else if (key == "train.beta2") c.train.beta2 = parse_double(key, value);
        else if (key == "train.eps") c.train.eps = parse_double(key, value);
        else if (key == "train.batch_size") c.train.batch_size = parse_int(key, value);
        else if (key == "train.epochs") c.train.epochs = parse_int(key, value);
        else if (key == "train.seed") c.train.seed = parse_u64(key, value);
        else if (key == "train.loss_reduction") {
            if (value == "sum") c.train.loss_reduction = TrainConfig::Reduction::Sum;
            else if (value == "mean") c.train.loss_reduction = TrainConfig::Reduction::Mean;
            else throw ConfigError("config: train.loss_reduction expects sum|mean, got '" + value + "'");
        } else if (key == "train.monitor") {
            if (value == "mdc") c.train.monitor = TrainConfig::Monitor::Mdc;
            else if (value == "miou") c.train.monitor = TrainConfig::Monitor::Miou;
            else throw ConfigError("config: train.monitor expects mdc|miou, got '" + value + "'");
        } else {
            throw ConfigError("config: unknown key '" + key + "' at line " +
                              std::to_string(line_no));
        }
    }
    return c;
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream os;
    os << "model.in_channels=" << c.model.in_channels << "\n";
    os << "model.base_width=" << c.model.base_width << "\n";
    os << "model.depth=" << c.model.depth << "\n";
    os << "model.bottleneck_ratio=" << c.model.bottleneck_ratio << "\n";
    os << "model.enable_attention_gates=" << (c.model.enable_attention_gates ? "true" : "false")
       << "\n";
    os << "model.enable_dual_attention=" << (c.model.enable_dual_attention ? "true" : "false")
       << "\n";
    os << "model.enable_multiscale=" << (c.model.enable_multiscale ? "true" : "false") << "\n";
    os << "model.fused_channels=" << c.model.fused_channels << "\n";
    os << "train.learning_rate=" << format_double(c.train.learning_rate) << "\n";
    os << "train.beta1=" << format_double(c.train.beta1) << "\n";
    os << "train.beta2=" << format_double(c.train.beta2) << "\n";
    os << "train.eps=" << format_double(c.train.eps) << "\n";
    os << "train.batch_size=" << c.train.batch_size << "\n";
    os << "train.epochs=" << c.train.epochs << "\n";
    os << "train.seed=" << c.train.seed << "\n";
    os << "train.loss_reduction=" << to_string(c.train.loss_reduction) << "\n";
    os << "train.monitor=" << to_string(c.train.monitor) << "\n";
    return os.str();
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_run_config(os.str());
}

void save_run_config(const std::string& path, const RunConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("config: cannot open " + path + " for writing");
    out << serialize_run_config(config);
    if (!out) throw IoError("config: short write to " + path);
}

}  // namespace maunet
