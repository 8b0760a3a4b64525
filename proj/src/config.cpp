#include "gbi/config.hpp"

#include <fstream>
#include <sstream>

#include "gbi/tensor.hpp"

namespace gbi {

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> table = {
        {"experiment", "run"},
        {"seed", "0"},
        // generative model
        {"p_v", "0.005"},
        {"mu1", "0.2"},
        {"mu2", "0.8"},
        {"sigma", "0.1"},
        {"sigma2", ""},  // empty: same as sigma
        {"min_block", "20"},
        {"max_block", "50"},
        {"n_steps", "2000"},
        // sequence model
        {"model", "gbi"},  // gbi | lstm
        {"hidden", "100"},
        {"history", "5"},
        {"task_dim", "2"},
        {"lr", "0.001"},
        {"z_input_temp", "0.1"},
        {"trim", "20"},
        {"active_fraction", "0.25"},
        // inference
        {"gamma", "1.0"},
        {"alpha", "0.0"},
        {"iter_steps", "50"},
        {"iter_lr", "0.01"},
        {"iter_l2", "0.01"},
        {"engaged_lr", "0.5"},
        {"engaged_clip", "0.4"},
        {"engaged_l2", "0.05"},
        {"graft_scale", "10.0"},
        // generalization sweep
        {"sweep_lo", "-0.2"},
        {"sweep_hi", "1.2"},
        {"sweep_step", "0.1"},
        {"steps_per_mean", "60"},
        {"eval_window", "10"},
        // vision
        {"epochs", "4"},
        {"batch", "128"},
        {"vision_lr", "0.001"},
        {"normalize", "false"},
        {"method", "gbi"},  // gbi | iterative | likelihood | nbi | discriminative
        // io
        {"data_dir", ""},
        {"out_dir", ""},
    };
    return table;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (defaults().count(key) == 0) throw Error("config: unknown key '" + key + "'");
    values_[key] = value;
}

std::string RunConfig::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    auto dt = defaults().find(key);
    if (dt == defaults().end()) throw Error("config: unknown key '" + key + "'");
    return dt->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: key '" + key + "' is not an integer: '" + v + "'");
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: key '" + key + "' is not an unsigned integer: '" + v + "'");
    }
}

double RunConfig::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: key '" + key + "' is not a number: '" + v + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string v = get_string(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw Error("config: key '" + key + "' must be true or false, got '" + v + "'");
}

std::string RunConfig::resolved() const {
    std::string out;
    for (const auto& [key, def] : defaults()) {
        auto it = values_.find(key);
        out += key + "=" + (it != values_.end() ? it->second : def) + "\n";
    }
    return out;
}

}  // namespace gbi
