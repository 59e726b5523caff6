#include "flow/config.hpp"

#include <fstream>
#include <sstream>

namespace flow {

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::fallback: return "default";
        case Provenance::file: return "file";
        default: return "flag";
    }
}

namespace {
std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    const auto b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}
}  // namespace

void KeyValueConfig::set(const std::string& key, const std::string& value, Provenance prov) {
    auto& e = values_[key];
    e.value = value;
    e.prov = prov;
}

void KeyValueConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config: line " + std::to_string(lineno) +
                                " is not `key = value`: \"" + line + "\"");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ContractError("config: empty key at line " + std::to_string(lineno));
        set(key, value, Provenance::file);
    }
}

void KeyValueConfig::apply_flag(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ContractError("config: flag must be key=value, got \"" + assignment + "\"");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), Provenance::flag);
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        auto& e = values_[key];
        e.value = fallback;
        e.prov = Provenance::fallback;
        e.read = true;
        return fallback;
    }
    it->second.read = true;
    return it->second.value;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
    const auto s = get(key, std::to_string(fallback));
    try {
        size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ContractError("config: key \"" + key + "\" is not an integer: \"" + s + "\"");
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
    std::ostringstream os;
    os << fallback;
    const auto s = get(key, os.str());
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ContractError("config: key \"" + key + "\" is not a number: \"" + s + "\"");
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
    const auto s = get(key, fallback ? "1" : "0");
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw ContractError("config: key \"" + key + "\" is not a boolean: \"" + s + "\"");
}

std::vector<std::string> KeyValueConfig::unread_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, e] : values_)
        if (!e.read) out.push_back(k);
    return out;
}

std::string KeyValueConfig::to_text(bool with_provenance) const {
    std::ostringstream os;
    for (const auto& [k, e] : values_) {
        os << k << " = " << e.value;
        if (with_provenance) os << "  # " << to_string(e.prov);
        os << "\n";
    }
    return os.str();
}

void RunManifest::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("manifest: cannot open for writing: " + path);
    os << "# run manifest (loadable as a config file)\n";
    os << "# command: " << command << "\n";
    os << "# profile: " << profile << "\n";
    os << "# git: " << git_describe << "\n";
    os << "# seed: " << seed << "\n";
    for (const auto& n : notes) os << "# note: " << n << "\n";
    os << resolved_config;
}

}  // namespace flow
